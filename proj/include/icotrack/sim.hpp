#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icotrack/srp.hpp"
#include "icotrack/vec3.hpp"

namespace icotrack {

struct RoomSpec {
  Vec3 dims;         // meters
  double t60 = 0.5;  // seconds; 0 means anechoic
  double volume() const { return dims.x * dims.y * dims.z; }
  double surface() const {
    return 2.0 * (dims.x * dims.y + dims.x * dims.z + dims.y * dims.z);
  }
  // Uniform wall reflection coefficient for the requested decay; rejects
  // rooms whose Sabine absorption would have to reach 1.
  double beta() const;
};

struct Trajectory {
  Vec3 p0, p1;    // straight-line endpoints
  Vec3 amp;       // per-axis sinusoid amplitude, meters
  Vec3 omega;     // per-axis angular frequency, rad/s (<= 2 oscillations)
  Vec3 phase;
  double duration = 0;
  Vec3 pos(double t) const {
    double a = duration > 0 ? t / duration : 0.0;
    Vec3 line = p0 + (p1 - p0) * a;
    return {line.x + amp.x * std::sin(omega.x * t + phase.x),
            line.y + amp.y * std::sin(omega.y * t + phase.y),
            line.z + amp.z * std::sin(omega.z * t + phase.z)};
  }
};

struct SimJob {
  RoomSpec room;
  Vec3 array_center;  // array orientation is identity
  Trajectory traj;
  double snr_db = 30.0;
  double duration = 20.0;
  double fs = 16000.0;
  uint64_t seed = 0;
};

struct SceneRanges {
  Vec3 room_min{3.0, 3.0, 2.5};
  Vec3 room_max{10.0, 8.0, 6.0};
  double t60_min = 0.2, t60_max = 1.3;
  double snr_min = 30.0, snr_max = 30.0;
  double duration = 20.0;
  double fs = 16000.0;
  double wall_margin_frac = 0.1;  // array clearance per dimension
  int max_attempts = 1000;
};

SimJob sample_scene(uint64_t seed, const SceneRanges& ranges);

// Enumerates the mirror-image sources of a box room, bounded so that every
// image within max_dist of any in-room point is produced; at most max_order
// reflections (-1 for unlimited).  fn(image_position, reflection_count) is
// called once per image.
template <typename F>
void visit_images(const Vec3& room, const Vec3& src, double max_dist, int max_order, F&& fn) {
  const double L[3] = {room.x, room.y, room.z};
  const double s[3] = {src.x, src.y, src.z};
  const double cc[3] = {room.x / 2, room.y / 2, room.z / 2};
  // Ball of images around the room center covering every in-room receiver.
  const double R = max_dist + 0.5 * room.norm() + 1e-9;
  for (int q = 0; q <= 1; ++q)
    for (int j = 0; j <= 1; ++j)
      for (int k = 0; k <= 1; ++k) {
        double offx = (1 - 2 * q) * s[0], offy = (1 - 2 * j) * s[1], offz = (1 - 2 * k) * s[2];
        int x_lo = int(std::ceil((cc[0] - R - offx) / (2 * L[0])));
        int x_hi = int(std::floor((cc[0] + R - offx) / (2 * L[0])));
        for (int mx = x_lo; mx <= x_hi; ++mx) {
          double x = offx + 2.0 * mx * L[0];
          double dx2 = (x - cc[0]) * (x - cc[0]);
          if (dx2 > R * R) continue;
          int rx = std::abs(mx - q) + std::abs(mx);
          if (max_order >= 0 && rx > max_order) continue;
          double ry_max = std::sqrt(R * R - dx2);
          int y_lo = int(std::ceil((cc[1] - ry_max - offy) / (2 * L[1])));
          int y_hi = int(std::floor((cc[1] + ry_max - offy) / (2 * L[1])));
          for (int my = y_lo; my <= y_hi; ++my) {
            double y = offy + 2.0 * my * L[1];
            double dxy2 = dx2 + (y - cc[1]) * (y - cc[1]);
            if (dxy2 > R * R) continue;
            int rxy = rx + std::abs(my - j) + std::abs(my);
            if (max_order >= 0 && rxy > max_order) continue;
            double rz_max = std::sqrt(R * R - dxy2);
            int z_lo = int(std::ceil((cc[2] - rz_max - offz) / (2 * L[2])));
            int z_hi = int(std::floor((cc[2] + rz_max - offz) / (2 * L[2])));
            for (int mz = z_lo; mz <= z_hi; ++mz) {
              int refl = rxy + std::abs(mz - k) + std::abs(mz);
              if (max_order >= 0 && refl > max_order) continue;
              fn(Vec3{x, y, offz + 2.0 * mz * L[2]}, refl);
            }
          }
        }
      }
}

// Single source/receiver impulse response at sample rate fs, covering the
// room's decay time (or just the direct path when t60 == 0).
std::vector<double> ism_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, double fs,
                            double c = 343.0, int max_order = -1, double duration = -1.0);

// Reverberation time of an impulse response from backward energy
// integration: first time the decay curve falls 60 dB under its start.
double schroeder_t60(const std::vector<double>& rir, double fs);

// Speech-like test source: 100-4000 Hz noise, 2-8 Hz amplitude modulation,
// 0.2-1.0 s silent gaps covering 10-30% of the duration, peak-normalized.
std::vector<double> synth_source(uint64_t seed, double duration, double fs = 16000.0);

// Per-frame source activity derived from the clean source signal.
std::vector<uint8_t> source_active_flags(const std::vector<double>& src,
                                         const FramingConfig& fcfg);

// Moving-source render: the source signal is split at hop boundaries with
// one-hop linear crossfades, each chunk convolved with the static response
// at its segment center, then white noise is added to meet the target SNR.
Channels render_trajectory(const SimJob& job, const MicArray& array, const FramingConfig& fcfg,
                           const std::vector<double>& source);

// Unit vector from the array center to the source at each frame center.
std::vector<Vec3> ground_truth_doa(const SimJob& job, int n_frames, const FramingConfig& fcfg);

// ---- dataset layout ----------------------------------------------------
// One directory per trajectory: audio.wav (N channels), gt.csv
// (frame,x,y,z,active), job.toml (scene record).

struct TrajectoryData {
  Channels audio;
  double fs = 16000.0;
  std::vector<Vec3> gt;
  std::vector<uint8_t> active;
};

void write_trajectory_dir(const std::string& dir, const SimJob& job, const MicArray& array,
                          const FramingConfig& fcfg, bool pcm16 = false);
TrajectoryData read_trajectory_dir(const std::string& dir);

}  // namespace icotrack
