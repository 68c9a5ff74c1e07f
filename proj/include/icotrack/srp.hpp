#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icotrack/ico_grid.hpp"
#include "icotrack/vec3.hpp"

namespace icotrack {

using Channels = std::vector<std::vector<double>>;  // [mic][sample]

struct MicArray {
  std::vector<Vec3> positions;  // meters, array-centered
  double c = 343.0;             // m/s
  double fs = 16000.0;          // Hz
  void validate() const;        // N >= 2, genuinely 3-D, fs > 0
};

// 12-microphone pseudo-spherical head-sized array (12.1 cm aperture), tilted
// so that no microphone axis lines up with the grid's symmetry axes.
MicArray head_array_12();

// CSV with one "x,y,z" row per microphone; '#' comments and a header allowed.
MicArray load_array_csv(const std::string& path, double fs = 16000.0);

struct FramingConfig {
  int frame_len = 4096;
  int hop = 3072;
  int fft_len = 4096;
  void validate() const;
};

struct GccConfig {
  double eps = 1e-12;     // magnitude floor of the whitening denominator
  int lag_upsample = 4;   // band-limited lag oversampling; 1 = raw grid
};

struct VadConfig {
  double abs_threshold = 1e-6;  // mean per-sample power, full-scale^2
  double rel_threshold = 0.01;  // fraction of the running max frame power
};

struct VadState {
  double running_max = 0.0;
};

// Frame is active iff its mean per-sample power across channels exceeds both
// thresholds (strictly); the running max is updated with every frame.
bool vad_gate(const double* const* frame, int n_ch, int frame_len, const VadConfig& cfg,
              VadState& state);

int frame_count(int64_t n_samples, const FramingConfig& cfg);  // rejects n < K

// Whitened cross-correlations for every ordered microphone pair, stored on a
// lag grid oversampled by `upsample` (band-limited interpolation), negative
// lags in the upper half.  Pairs n < m come from the spectral path; (m,n) is
// the circular time reversal of (n,m).
struct GccLags {
  int n_mics = 0;
  int len = 0;       // fft_len * upsample samples per pair
  int upsample = 1;
  std::vector<double> data;  // [n][m][len]

  const double* pair(int a, int b) const { return data.data() + (size_t(a) * n_mics + b) * len; }
  double* pair(int a, int b) { return data.data() + (size_t(a) * n_mics + b) * len; }

  // Linear interpolation between oversampled samples; `lag` is in units of
  // the original sample rate.
  double at(int a, int b, double lag) const;
};

GccLags gcc_phat(const Channels& frame, const FramingConfig& fcfg, const GccConfig& gcfg);

// Expected arrival-time differences (fractional samples) for a far-field
// source at each grid cell: tau[n][m] = fs * (p_m - p_n) . u / c.
struct TdoaTable {
  int n_mics = 0, n_cells = 0;
  std::vector<double> tau;  // [n][m][cell]
  double at(int n, int m, int cell) const {
    return tau[(size_t(n) * n_mics + m) * n_cells + cell];
  }
};

TdoaTable tdoa_table(const MicArray& array, const IcoGrid& grid);

// Steered power per cell: 2*pi * sum over ordered pairs n != m of
// R_nm(tau_nm(cell)); vertex cells are 0.
std::vector<double> srp_map(const GccLags& gcc, const TdoaTable& table, const IcoGrid& grid);

// Subtracts the mean over non-vertex cells, divides by the max absolute value
// over non-vertex cells; all-zero output if that max is below 1e-12.
std::vector<double> normalize_map(std::vector<double> map, const IcoGrid& grid);

struct SrpMapSeq {
  int T = 0;
  int n_cells = 0;
  std::vector<double> maps;  // [T][cells], normalized; silent frames all-zero
  std::vector<uint8_t> active;

  const double* frame(int t) const { return maps.data() + size_t(t) * n_cells; }
  double* frame(int t) { return maps.data() + size_t(t) * n_cells; }
};

// Full per-stream pipeline: framing, VAD gating (sequential running max),
// GCC-PHAT, map sampling, normalization.
SrpMapSeq compute_map_seq(const Channels& signal, const MicArray& array, const IcoGrid& grid,
                          const TdoaTable& table, const FramingConfig& fcfg,
                          const GccConfig& gcfg, const VadConfig& vcfg);

}  // namespace icotrack
