#include "icotrack/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "icotrack/audio_io.hpp"
#include "icotrack/fft.hpp"
#include "icotrack/rng.hpp"

namespace icotrack {
namespace {

constexpr double kSpeedOfSound = 343.0;

// Hann-windowed sinc fractional-delay kernel, 16 taps, tabulated at 1/256
// sample steps and linearly interpolated between rows.
struct SincTable {
  static constexpr int kWidth = 16;
  static constexpr int kRes = 256;
  std::vector<double> tab;  // (kRes+1) x kWidth

  SincTable() : tab(size_t(kRes + 1) * kWidth) {
    for (int r = 0; r <= kRes; ++r) {
      double frac = double(r) / kRes;
      for (int nn = 0; nn < kWidth; ++nn) {
        double t = (nn - kWidth / 2 + 1) - frac;
        double w = 0.5 * (1.0 + std::cos(2.0 * M_PI * t / kWidth));
        double sinc = t == 0.0 ? 1.0 : std::sin(M_PI * t) / (M_PI * t);
        tab[size_t(r) * kWidth + nn] = w * sinc;
      }
    }
  }

  // Adds amp * kernel(delay) into rir.
  void deposit(std::vector<double>& rir, double delay_samples, double amp) const {
    double fl = std::floor(delay_samples);
    int i0 = int(fl);
    double frac = delay_samples - fl;
    double rf = frac * kRes;
    int r0 = int(rf);
    double rw = rf - r0;
    const double* a = &tab[size_t(r0) * kWidth];  // row r0+1 is adjacent
    int len = int(rir.size());
    int base = i0 - kWidth / 2 + 1;
    if (base >= 0 && base + kWidth <= len) {
      double* dst = rir.data() + base;
      for (int nn = 0; nn < kWidth; ++nn)
        dst[nn] += amp * (a[nn] + rw * (a[nn + kWidth] - a[nn]));
      return;
    }
    for (int nn = 0; nn < kWidth; ++nn) {
      int idx = base + nn;
      if (idx < 0 || idx >= len) continue;
      rir[idx] += amp * (a[nn] + rw * (a[nn + kWidth] - a[nn]));
    }
  }
};

const SincTable& sinc_table() {
  static SincTable t;
  return t;
}

void check_inside(const Vec3& p, const Vec3& room, const char* what) {
  if (p.x <= 0 || p.y <= 0 || p.z <= 0 || p.x >= room.x || p.y >= room.y || p.z >= room.z)
    throw std::invalid_argument(std::string(what) + " outside the room");
}

// 100 Hz high-pass after image summation.  The all-positive image amplitudes
// pile up coherently near DC and would otherwise dominate the late energy.
void highpass_rir(std::vector<double>& rir, double fs) {
  const double w = 2.0 * M_PI * 100.0 / fs;
  const double r1 = std::exp(-w);
  const double b1 = 2.0 * r1 * std::cos(w), b2 = -r1 * r1;
  const double a1 = -(1.0 + r1);
  double y0 = 0, y1 = 0, y2 = 0;
  for (double& v : rir) {
    double x = v;
    y2 = y1;
    y1 = y0;
    y0 = b1 * y1 + b2 * y2 + x;
    v = y0 + a1 * y1 + r1 * y2;
  }
}

std::vector<std::vector<double>> ism_rir_multi(const RoomSpec& room, double beta,
                                               const Vec3& src, const std::vector<Vec3>& mics,
                                               double fs, double c) {
  check_inside(src, room.dims, "source");
  double diag = room.dims.norm();
  double cover = room.t60 + diag / c;
  int len = int(std::ceil(cover * fs)) + SincTable::kWidth * 2;
  std::vector<std::vector<double>> rirs(mics.size(), std::vector<double>(len, 0.0));

  double max_dist = c * double(len) / fs + 1.0;
  int max_order = beta == 0.0 ? 0 : -1;
  std::vector<double> beta_pow(1, 1.0);
  const SincTable& st = sinc_table();
  Vec3 center{};
  for (const Vec3& m : mics) center += m;
  center = center * (1.0 / double(mics.size()));
  double radius = 0;
  for (const Vec3& m : mics) radius = std::max(radius, (m - center).norm());
  visit_images(room.dims, src, max_dist, max_order, [&](const Vec3& img, int refl) {
    if ((img - center).norm() > max_dist + radius) return;  // out of reach of every mic
    while (int(beta_pow.size()) <= refl) beta_pow.push_back(beta_pow.back() * beta);
    double gain_refl = beta_pow[refl];
    if (gain_refl == 0.0 && refl > 0) return;
    for (size_t m = 0; m < mics.size(); ++m) {
      double dist = (img - mics[m]).norm();
      double delay = dist / c * fs;
      if (delay >= len) continue;
      st.deposit(rirs[m], delay, gain_refl / (4.0 * M_PI * std::max(dist, 1e-3)));
    }
  });
  if (beta > 0.0)  // no image pileup to remove in the anechoic case
    for (auto& r : rirs) highpass_rir(r, fs);
  return rirs;
}

}  // namespace

double RoomSpec::beta() const {
  if (t60 == 0.0) return 0.0;
  if (t60 < 0.0) throw std::invalid_argument("room decay time must be >= 0");
  double alpha = 0.161 * volume() / (surface() * t60);
  if (alpha >= 1.0)
    throw std::invalid_argument("requested decay time is unattainable for this room");

  // The image sum decays as a mixture of per-direction exponentials with
  // wall-crossing rates c * (|ux|/Lx + |uy|/Ly + |uz|/Lz) * ln(1/beta^2); the
  // diffuse-field closed forms misstate the -60 dB point of that mixture by
  // tens of percent in elongated or very absorbent rooms.  Calibrate beta so
  // that the backward-integrated mixture itself hits -60 dB at t60.
  static constexpr int kDirs = 512;
  std::vector<double> geom;
  geom.reserve(kDirs);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < kDirs; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / kDirs;
    double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    double th = golden * i;
    Vec3 u{rad * std::cos(th), rad * std::sin(th), z};
    geom.push_back(std::abs(u.x) / dims.x + std::abs(u.y) / dims.y + std::abs(u.z) / dims.z);
  }
  const double c = 343.0;
  auto decay_db_at_t60 = [&](double beta) {
    double s0 = 0, st = 0;
    double lg = -2.0 * std::log(beta);
    for (double g : geom) {
      double rate = c * lg * g;
      s0 += 1.0 / rate;
      st += std::exp(-rate * t60) / rate;
    }
    return 10.0 * std::log10(st / s0);
  };
  double lo = 1e-4, hi = 1.0 - 1e-9;
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    if (decay_db_at_t60(mid) > -60.0)
      hi = mid;  // too reflective, decays too slowly
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> ism_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, double fs,
                            double c, int max_order, double duration) {
  check_inside(src, room.dims, "source");
  check_inside(mic, room.dims, "microphone");
  if ((src - mic).norm() < 1e-9) throw std::invalid_argument("source coincides with microphone");
  double beta = room.beta();
  double cover = duration >= 0 ? duration : room.t60;
  int len = int(std::ceil((cover + (src - mic).norm() / c) * fs)) + SincTable::kWidth * 2;
  std::vector<double> rir(len, 0.0);
  double max_dist = c * double(len) / fs + 1.0;
  if (beta == 0.0 && max_order < 0) max_order = 0;
  std::vector<double> beta_pow(1, 1.0);
  const SincTable& st = sinc_table();
  visit_images(room.dims, src, max_dist, max_order, [&](const Vec3& img, int refl) {
    while (int(beta_pow.size()) <= refl) beta_pow.push_back(beta_pow.back() * beta);
    double dist = (img - mic).norm();
    double delay = dist / c * fs;
    if (delay >= len) return;
    st.deposit(rir, delay, beta_pow[refl] / (4.0 * M_PI * std::max(dist, 1e-3)));
  });
  if (beta > 0.0) highpass_rir(rir, fs);
  return rir;
}

double schroeder_t60(const std::vector<double>& rir, double fs) {
  int n = int(rir.size());
  std::vector<double> energy(n + 1, 0.0);
  for (int i = n - 1; i >= 0; --i) energy[i] = energy[i + 1] + rir[i] * rir[i];
  if (energy[0] <= 0) throw std::invalid_argument("schroeder_t60: empty impulse response");
  int start = 0;
  for (int i = 1; i < n; ++i)
    if (std::abs(rir[i]) > std::abs(rir[start])) start = i;
  double e0 = energy[start];
  for (int i = start; i < n; ++i)
    if (energy[i] <= 1e-6 * e0) return double(i - start) / fs;
  return double(n - start) / fs;  // never reached -60 dB within the tail
}

SimJob sample_scene(uint64_t seed, const SceneRanges& ranges) {
  std::mt19937_64 rng(derive_seed(seed, 1));
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  SimJob job;
  job.seed = seed;
  job.duration = ranges.duration;
  job.fs = ranges.fs;
  job.room.dims = {uni(ranges.room_min.x, ranges.room_max.x),
                   uni(ranges.room_min.y, ranges.room_max.y),
                   uni(ranges.room_min.z, ranges.room_max.z)};
  job.room.t60 = uni(ranges.t60_min, ranges.t60_max);
  job.snr_db = uni(ranges.snr_min, ranges.snr_max);

  const Vec3& d = job.room.dims;
  double mf = ranges.wall_margin_frac;
  job.array_center = {uni(mf * d.x, (1 - mf) * d.x), uni(mf * d.y, (1 - mf) * d.y),
                      uni(mf * d.z, d.z / 2.0)};

  const double wall_eps = 0.02;
  const double min_src_dist = 0.25;  // keep 1/(4 pi r) bounded at the array
  for (int attempt = 0; attempt < ranges.max_attempts; ++attempt) {
    Trajectory t;
    t.duration = ranges.duration;
    t.p0 = {uni(wall_eps, d.x - wall_eps), uni(wall_eps, d.y - wall_eps),
            uni(wall_eps, d.z - wall_eps)};
    t.p1 = {uni(wall_eps, d.x - wall_eps), uni(wall_eps, d.y - wall_eps),
            uni(wall_eps, d.z - wall_eps)};
    t.amp = {uni(0, d.x / 4), uni(0, d.y / 4), uni(0, d.z / 4)};
    double two_pi = 2.0 * M_PI;
    t.omega = {two_pi * uni(0, 2) / t.duration, two_pi * uni(0, 2) / t.duration,
               two_pi * uni(0, 2) / t.duration};
    t.phase = {uni(0, two_pi), uni(0, two_pi), uni(0, two_pi)};

    bool ok = true;
    for (double time = 0.0; ok && time <= t.duration; time += 0.01) {
      Vec3 p = t.pos(time);
      ok = p.x > wall_eps && p.y > wall_eps && p.z > wall_eps && p.x < d.x - wall_eps &&
           p.y < d.y - wall_eps && p.z < d.z - wall_eps &&
           (p - job.array_center).norm() > min_src_dist;
    }
    if (ok) {
      job.traj = t;
      return job;
    }
  }
  throw std::runtime_error("sample_scene: trajectory rejection budget exhausted for seed " +
                           std::to_string(seed));
}

std::vector<double> synth_source(uint64_t seed, double duration, double fs) {
  if (duration <= 0) throw std::invalid_argument("synth_source: duration must be positive");
  int64_t L = int64_t(std::llround(duration * fs));
  int n = next_pow2(int(L));

  std::mt19937_64 rng(derive_seed(seed, 2));
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u01(0, 1);

  // Band-limited noise bed.
  std::vector<double> x(n);
  for (int64_t i = 0; i < n; ++i) x[i] = g(rng);
  RealFft rfft(n);
  std::vector<cplx> spec(rfft.bins());
  rfft.forward(x.data(), spec.data());
  for (int k = 0; k < rfft.bins(); ++k) {
    double f = double(k) * fs / n;
    if (f < 100.0 || f > 4000.0) spec[k] = 0.0;
  }
  rfft.inverse(spec.data(), x.data());
  x.resize(L);

  // Slow amplitude modulation.
  double fm = 2.0 + 6.0 * u01(rng);
  double ph = 2.0 * M_PI * u01(rng);
  for (int64_t i = 0; i < L; ++i)
    x[i] *= 0.55 + 0.45 * std::sin(2.0 * M_PI * fm * double(i) / fs + ph);

  // Silent gaps covering 10-30% of the duration.
  double target = (0.1 + 0.2 * u01(rng)) * duration;
  std::vector<std::pair<double, double>> gaps;
  double covered = 0.0;
  for (int tries = 0; tries < 200 && covered < target; ++tries) {
    double len = 0.2 + 0.8 * u01(rng);
    double at = u01(rng) * (duration - len);
    bool overlap = false;
    for (auto& gp : gaps)
      if (at < gp.first + gp.second + 0.1 && gp.first < at + len + 0.1) overlap = true;
    if (overlap) continue;
    gaps.push_back({at, len});
    covered += len;
  }
  for (auto& gp : gaps) {
    int64_t lo = int64_t(gp.first * fs), hi = std::min<int64_t>(L, int64_t((gp.first + gp.second) * fs));
    for (int64_t i = lo; i < hi; ++i) x[i] = 0.0;
  }

  double peak = 1e-12;
  for (double v : x) peak = std::max(peak, std::abs(v));
  for (double& v : x) v /= peak;
  return x;
}

std::vector<uint8_t> source_active_flags(const std::vector<double>& src,
                                         const FramingConfig& fcfg) {
  int T = frame_count(int64_t(src.size()), fcfg);
  std::vector<uint8_t> active(T, 0);
  for (int t = 0; t < T; ++t) {
    double p = 0;
    int64_t start = int64_t(t) * fcfg.hop;
    for (int i = 0; i < fcfg.frame_len; ++i) p += src[start + i] * src[start + i];
    active[t] = p / fcfg.frame_len > 1e-8 ? 1 : 0;
  }
  return active;
}

Channels render_trajectory(const SimJob& job, const MicArray& array, const FramingConfig& fcfg,
                           const std::vector<double>& source) {
  array.validate();
  const int64_t L = int64_t(source.size());
  if (L == 0) throw std::invalid_argument("render_trajectory: empty source");
  double src_power = 0;
  for (double v : source) src_power += v * v;
  if (src_power <= 0)
    throw std::invalid_argument("render_trajectory: silent source, SNR undefined");

  const int N = int(array.positions.size());
  std::vector<Vec3> mics(N);
  for (int m = 0; m < N; ++m) mics[m] = job.array_center + array.positions[m];
  for (const Vec3& m : mics) check_inside(m, job.room.dims, "microphone");

  const int hop = fcfg.hop;
  const int n_seg = int((L + hop - 1) / hop);
  const double room_beta = job.room.beta();
  Channels out(N, std::vector<double>(L, 0.0));

  std::vector<double> chunk;
  for (int s = 0; s < n_seg; ++s) {
    // Triangular source weights: sample tau belongs to the two segments whose
    // centers bracket it, with linear weights summing to one (clamped at the
    // stream edges).
    int64_t lo = std::max<int64_t>(0, int64_t(s) * hop - hop / 2);
    int64_t hi = std::min<int64_t>(L, int64_t(s + 1) * hop + hop / 2);
    chunk.assign(hi - lo, 0.0);
    bool nonzero = false;
    for (int64_t tau = lo; tau < hi; ++tau) {
      double u = double(tau) / hop - 0.5;
      double su = std::floor(u);
      double frac = u - su;
      int s0 = int(su), s1 = s0 + 1;
      double w0 = 1.0 - frac, w1 = frac;
      if (s0 < 0) {
        s0 = 0;
        w1 += w0;
        w0 = 0;
      }
      if (s1 > n_seg - 1) {
        s1 = n_seg - 1;
        w0 += w1;
        w1 = 0;
      }
      double w = (s0 == s ? w0 : 0.0) + (s1 == s ? w1 : 0.0);
      if (w != 0.0 && source[tau] != 0.0) {
        chunk[tau - lo] = w * source[tau];
        nonzero = true;
      }
    }
    if (!nonzero) continue;

    double t_center = std::min((double(s) + 0.5) * hop / job.fs, job.traj.duration);
    Vec3 src_pos = job.traj.pos(t_center);
    auto rirs = ism_rir_multi(job.room, room_beta, src_pos, mics, job.fs, kSpeedOfSound);

    int rir_len = int(rirs[0].size());
    int conv_len = int(chunk.size()) + rir_len - 1;
    int nfft = next_pow2(conv_len);
    RealFft rfft(nfft);
    std::vector<double> padded(nfft, 0.0);
    std::copy(chunk.begin(), chunk.end(), padded.begin());
    std::vector<cplx> spec_x(rfft.bins());
    rfft.forward(padded.data(), spec_x.data());

    std::vector<cplx> spec(rfft.bins());
    std::vector<double> conv(nfft);
    for (int m = 0; m < N; ++m) {
      std::fill(padded.begin(), padded.end(), 0.0);
      std::copy(rirs[m].begin(), rirs[m].end(), padded.begin());
      rfft.forward(padded.data(), spec.data());
      for (int k = 0; k < rfft.bins(); ++k) spec[k] *= spec_x[k];
      rfft.inverse(spec.data(), conv.data());
      int64_t n_add = std::min<int64_t>(conv_len, L - lo);
      double* dst = out[m].data() + lo;
      for (int64_t i = 0; i < n_add; ++i) dst[i] += conv[i];
    }
  }

  // White noise for the requested SNR against the mean reverberant power.
  double sig_power = 0;
  for (const auto& ch : out)
    for (double v : ch) sig_power += v * v;
  sig_power /= double(N) * L;
  double sigma = std::sqrt(sig_power * std::pow(10.0, -job.snr_db / 10.0));
  std::mt19937_64 rng(derive_seed(job.seed, 3));
  std::normal_distribution<double> g(0, 1);
  for (auto& ch : out)
    for (double& v : ch) v += sigma * g(rng);
  return out;
}

std::vector<Vec3> ground_truth_doa(const SimJob& job, int n_frames, const FramingConfig& fcfg) {
  std::vector<Vec3> gt(n_frames);
  for (int t = 0; t < n_frames; ++t) {
    double time = (double(t) * fcfg.hop + fcfg.frame_len / 2.0) / job.fs;
    Vec3 rel = job.traj.pos(std::min(time, job.traj.duration)) - job.array_center;
    double n = rel.norm();
    if (n < 1e-9) throw std::runtime_error("ground truth: source coincides with the array");
    gt[t] = rel * (1.0 / n);
  }
  return gt;
}

void write_trajectory_dir(const std::string& dir, const SimJob& job, const MicArray& array,
                          const FramingConfig& fcfg, bool pcm16) {
  std::filesystem::create_directories(dir);
  auto source = synth_source(job.seed, job.duration, job.fs);
  auto audio = render_trajectory(job, array, fcfg, source);

  WavData wav;
  wav.fs = job.fs;
  wav.channels = std::move(audio);
  write_wav(dir + "/audio.wav", wav, pcm16);

  int T = frame_count(wav.samples(), fcfg);
  auto gt = ground_truth_doa(job, T, fcfg);
  auto active = source_active_flags(source, fcfg);
  std::FILE* f = std::fopen((dir + "/gt.csv").c_str(), "w");
  if (!f) throw std::runtime_error("cannot write gt.csv in " + dir);
  std::fprintf(f, "frame,x,y,z,active\n");
  for (int t = 0; t < T; ++t)
    std::fprintf(f, "%d,%.12g,%.12g,%.12g,%d\n", t, gt[t].x, gt[t].y, gt[t].z, int(active[t]));
  std::fclose(f);

  f = std::fopen((dir + "/job.toml").c_str(), "w");
  if (!f) throw std::runtime_error("cannot write job.toml in " + dir);
  std::fprintf(f, "seed = %llu\n", (unsigned long long)job.seed);
  std::fprintf(f, "duration = %.12g\n", job.duration);
  std::fprintf(f, "fs = %.12g\n", job.fs);
  std::fprintf(f, "snr_db = %.12g\n", job.snr_db);
  std::fprintf(f, "\n[room]\ndims = [%.12g, %.12g, %.12g]\nt60 = %.12g\n", job.room.dims.x,
               job.room.dims.y, job.room.dims.z, job.room.t60);
  std::fprintf(f, "\n[array]\ncenter = [%.12g, %.12g, %.12g]\n", job.array_center.x,
               job.array_center.y, job.array_center.z);
  std::fprintf(f,
               "\n[trajectory]\np0 = [%.12g, %.12g, %.12g]\np1 = [%.12g, %.12g, %.12g]\n"
               "amp = [%.12g, %.12g, %.12g]\nomega = [%.12g, %.12g, %.12g]\n"
               "phase = [%.12g, %.12g, %.12g]\n",
               job.traj.p0.x, job.traj.p0.y, job.traj.p0.z, job.traj.p1.x, job.traj.p1.y,
               job.traj.p1.z, job.traj.amp.x, job.traj.amp.y, job.traj.amp.z, job.traj.omega.x,
               job.traj.omega.y, job.traj.omega.z, job.traj.phase.x, job.traj.phase.y,
               job.traj.phase.z);
  std::fclose(f);
}

TrajectoryData read_trajectory_dir(const std::string& dir) {
  TrajectoryData td;
  WavData wav = read_wav(dir + "/audio.wav");
  td.fs = wav.fs;
  td.audio = std::move(wav.channels);

  std::ifstream in(dir + "/gt.csv");
  if (!in) throw std::runtime_error("cannot open gt.csv in " + dir);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ss(line);
    int frame, active;
    double x, y, z;
    if (!(ss >> frame >> x >> y >> z >> active))
      throw std::runtime_error("malformed gt.csv row in " + dir);
    td.gt.push_back({x, y, z});
    td.active.push_back(uint8_t(active));
  }
  return td;
}

}  // namespace icotrack
