#pragma once

#include <string>

#include "icotrack/srp.hpp"

namespace icotrack {

struct WavData {
  double fs = 0;
  Channels channels;
  int64_t samples() const { return channels.empty() ? 0 : int64_t(channels[0].size()); }
};

// PCM 16-bit and IEEE float32 WAV files.
WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const WavData& wav, bool pcm16 = false);

}  // namespace icotrack
