#include "icotrack/audio_io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace icotrack {
namespace {

struct Reader {
  std::FILE* f;
  void bytes(void* dst, size_t n, const char* what) {
    if (std::fread(dst, 1, n, f) != n) throw std::runtime_error(std::string("wav: short ") + what);
  }
  uint32_t u32() {
    uint8_t b[4];
    bytes(b, 4, "u32");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  }
  uint16_t u16() {
    uint8_t b[2];
    bytes(b, 2, "u16");
    return uint16_t(b[0] | b[1] << 8);
  }
};

void put_u32(std::FILE* f, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  std::fwrite(b, 1, 4, f);
}
void put_u16(std::FILE* f, uint16_t v) {
  uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
  std::fwrite(b, 1, 2, f);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open wav: " + path);
  Reader r{f};
  char tag[5] = {};
  r.bytes(tag, 4, "RIFF");
  if (std::strncmp(tag, "RIFF", 4) != 0) {
    std::fclose(f);
    throw std::runtime_error("not a RIFF file: " + path);
  }
  r.u32();
  r.bytes(tag, 4, "WAVE");
  if (std::strncmp(tag, "WAVE", 4) != 0) {
    std::fclose(f);
    throw std::runtime_error("not a WAVE file: " + path);
  }

  uint16_t fmt = 0, n_ch = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<uint8_t> payload;
  while (std::fread(tag, 1, 4, f) == 4) {
    uint32_t size = r.u32();
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      fmt = r.u16();
      n_ch = r.u16();
      rate = r.u32();
      r.u32();
      r.u16();
      bits = r.u16();
      if (size > 16) std::fseek(f, long(size - 16), SEEK_CUR);
    } else if (std::strncmp(tag, "data", 4) == 0) {
      payload.resize(size);
      r.bytes(payload.data(), size, "data");
    } else {
      std::fseek(f, long(size + (size & 1)), SEEK_CUR);
    }
  }
  std::fclose(f);
  if (fmt != 1 && fmt != 3) throw std::runtime_error("wav: only PCM16 and float32 supported");
  if ((fmt == 1 && bits != 16) || (fmt == 3 && bits != 32))
    throw std::runtime_error("wav: unsupported bit depth");
  if (n_ch == 0 || rate == 0 || payload.empty())
    throw std::runtime_error("wav: missing format or data: " + path);

  WavData wav;
  wav.fs = rate;
  int bytes_per = bits / 8;
  int64_t frames = int64_t(payload.size()) / (bytes_per * n_ch);
  wav.channels.assign(n_ch, std::vector<double>(frames));
  const uint8_t* p = payload.data();
  for (int64_t i = 0; i < frames; ++i)
    for (int ch = 0; ch < n_ch; ++ch) {
      if (fmt == 1) {
        int16_t v = int16_t(p[0] | (p[1] << 8));
        wav.channels[ch][i] = double(v) / 32768.0;
        p += 2;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        wav.channels[ch][i] = double(v);
        p += 4;
      }
    }
  return wav;
}

void write_wav(const std::string& path, const WavData& wav, bool pcm16) {
  if (wav.channels.empty()) throw std::invalid_argument("write_wav: no channels");
  int n_ch = int(wav.channels.size());
  int64_t frames = wav.samples();
  for (const auto& ch : wav.channels)
    if (int64_t(ch.size()) != frames) throw std::invalid_argument("write_wav: ragged channels");

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write wav: " + path);
  int bytes_per = pcm16 ? 2 : 4;
  uint32_t data_size = uint32_t(frames * n_ch * bytes_per);
  std::fwrite("RIFF", 1, 4, f);
  put_u32(f, 36 + data_size);
  std::fwrite("WAVE", 1, 4, f);
  std::fwrite("fmt ", 1, 4, f);
  put_u32(f, 16);
  put_u16(f, pcm16 ? 1 : 3);
  put_u16(f, uint16_t(n_ch));
  put_u32(f, uint32_t(wav.fs));
  put_u32(f, uint32_t(wav.fs) * n_ch * bytes_per);
  put_u16(f, uint16_t(n_ch * bytes_per));
  put_u16(f, uint16_t(bytes_per * 8));
  std::fwrite("data", 1, 4, f);
  put_u32(f, data_size);
  for (int64_t i = 0; i < frames; ++i)
    for (int ch = 0; ch < n_ch; ++ch) {
      double v = wav.channels[ch][i];
      if (pcm16) {
        double s = v * 32768.0;
        s = s > 32767.0 ? 32767.0 : (s < -32768.0 ? -32768.0 : s);
        put_u16(f, uint16_t(int16_t(std::lrint(s))));
      } else {
        float fv = float(v);
        uint32_t u;
        std::memcpy(&u, &fv, 4);
        put_u32(f, u);
      }
    }
  std::fclose(f);
}

}  // namespace icotrack
