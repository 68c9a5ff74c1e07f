#include "icotrack/srp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "icotrack/fft.hpp"

namespace icotrack {

void MicArray::validate() const {
  if (positions.size() < 2) throw std::invalid_argument("array needs at least 2 microphones");
  if (!(fs > 0)) throw std::invalid_argument("array sample rate must be positive");
  if (!(c > 0)) throw std::invalid_argument("speed of sound must be positive");
  // Unambiguous azimuth+elevation needs microphones spanning all 3 dimensions.
  Vec3 mean{};
  for (const Vec3& p : positions) mean += p;
  mean = mean * (1.0 / positions.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const Vec3& p : positions) {
    Eigen::Vector3d d(p.x - mean.x, p.y - mean.y, p.z - mean.z);
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (es.eigenvalues()(0) < 1e-12 * std::max(1e-12, es.eigenvalues()(2)))
    throw std::invalid_argument("microphone positions are coplanar or collinear");
}

MicArray head_array_12() {
  MicArray a;
  const double radius = 0.0605;
  const double rho = 2.0 / std::sqrt(5.0), zz = 1.0 / std::sqrt(5.0);
  std::vector<Vec3> p;
  p.push_back({0, 0, 1});
  p.push_back({0, 0, -1});
  for (int k = 0; k < 5; ++k) {
    double au = 2.0 * M_PI * k / 5.0, al = au + M_PI / 5.0;
    p.push_back({rho * std::cos(au), rho * std::sin(au), zz});
    p.push_back({rho * std::cos(al), rho * std::sin(al), -zz});
  }
  Mat3 tilt = Mat3::axis_angle(Vec3{1, 2, 3}.normalized(), 0.61);
  for (const Vec3& v : p) a.positions.push_back(tilt.apply(v) * radius);
  a.validate();
  return a;
}

MicArray load_array_csv(const std::string& path, double fs) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open array file: " + path);
  MicArray a;
  a.fs = fs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& ch : line)
      if (ch == ',' || ch == ';' || ch == '\t') ch = ' ';
    std::istringstream ss(line);
    double x, y, z;
    if (ss >> x >> y >> z)
      a.positions.push_back({x, y, z});
    else if (!a.positions.empty())
      throw std::runtime_error("malformed array row: " + line);
    // else: header line, skip
  }
  a.validate();
  return a;
}

void FramingConfig::validate() const {
  if (!(0 < hop && hop <= frame_len && frame_len <= fft_len))
    throw std::invalid_argument("framing requires 0 < hop <= frame_len <= fft_len");
  if (fft_len & (fft_len - 1))
    throw std::invalid_argument("fft_len must be a power of two");
}

bool vad_gate(const double* const* frame, int n_ch, int frame_len, const VadConfig& cfg,
              VadState& state) {
  double power = 0.0;
  for (int ch = 0; ch < n_ch; ++ch)
    for (int i = 0; i < frame_len; ++i) power += frame[ch][i] * frame[ch][i];
  power /= double(n_ch) * frame_len;
  state.running_max = std::max(state.running_max, power);
  return power > cfg.abs_threshold && power > cfg.rel_threshold * state.running_max;
}

int frame_count(int64_t n_samples, const FramingConfig& cfg) {
  if (n_samples < cfg.frame_len)
    throw std::invalid_argument("signal shorter than one frame");
  return int((n_samples - cfg.frame_len) / cfg.hop) + 1;
}

double GccLags::at(int a, int b, double lag) const {
  const double* r = pair(a, b);
  double x = lag * upsample;
  double fl = std::floor(x);
  int i0 = int(fl) % len;
  if (i0 < 0) i0 += len;
  int i1 = i0 + 1 == len ? 0 : i0 + 1;
  double f = x - fl;
  return r[i0] * (1.0 - f) + r[i1] * f;
}

GccLags gcc_phat(const Channels& frame, const FramingConfig& fcfg, const GccConfig& gcfg) {
  fcfg.validate();
  const int N = int(frame.size());
  const int L = fcfg.fft_len;
  if (N < 2) throw std::invalid_argument("gcc_phat needs at least two channels");
  for (const auto& ch : frame) {
    if (int(ch.size()) != fcfg.frame_len)
      throw std::invalid_argument("gcc_phat frame length mismatch");
    for (double v : ch)
      if (!std::isfinite(v)) throw std::invalid_argument("gcc_phat frame has non-finite samples");
  }

  const int up = std::max(1, gcfg.lag_upsample);
  const int UL = up * L;
  RealFft rfft(L);
  RealFft rfft_up(UL);
  const int B = rfft.bins();
  std::vector<cplx> spectra(size_t(N) * B);
  std::vector<double> padded(L, 0.0);
  for (int n = 0; n < N; ++n) {
    std::fill(padded.begin(), padded.end(), 0.0);
    std::copy(frame[n].begin(), frame[n].end(), padded.begin());
    rfft.forward(padded.data(), spectra.data() + size_t(n) * B);
  }

  GccLags out;
  out.n_mics = N;
  out.len = UL;
  out.upsample = up;
  out.data.assign(size_t(N) * N * UL, 0.0);
  std::vector<cplx> cross(rfft_up.bins(), 0.0);
  for (int n = 0; n < N; ++n) {
    for (int m = n; m < N; ++m) {
      const cplx* xn = spectra.data() + size_t(n) * B;
      const cplx* xm = spectra.data() + size_t(m) * B;
      std::fill(cross.begin(), cross.end(), cplx(0.0));
      for (int k = 0; k < B; ++k) {
        cplx c = xn[k] * std::conj(xm[k]);
        cross[k] = double(up) * c / std::max(std::abs(c), gcfg.eps);
      }
      if (up > 1) cross[B - 1] *= 0.5;  // old Nyquist bin becomes interior
      rfft_up.inverse(cross.data(), out.pair(n, m));
      if (m != n) {
        // R_mn(tau) = R_nm(-tau) with circular lags
        double* fwd = out.pair(n, m);
        double* rev = out.pair(m, n);
        rev[0] = fwd[0];
        for (int t = 1; t < UL; ++t) rev[t] = fwd[UL - t];
      }
    }
  }
  return out;
}

TdoaTable tdoa_table(const MicArray& array, const IcoGrid& grid) {
  array.validate();
  TdoaTable t;
  t.n_mics = int(array.positions.size());
  t.n_cells = grid.n_cells;
  t.tau.assign(size_t(t.n_mics) * t.n_mics * t.n_cells, 0.0);
  for (int n = 0; n < t.n_mics; ++n)
    for (int m = 0; m < t.n_mics; ++m) {
      Vec3 d = array.positions[m] - array.positions[n];
      double s = array.fs / array.c;
      double* row = t.tau.data() + (size_t(n) * t.n_mics + m) * t.n_cells;
      for (int cell = 0; cell < t.n_cells; ++cell) row[cell] = s * d.dot(grid.coords[cell]);
    }
  return t;
}

std::vector<double> srp_map(const GccLags& gcc, const TdoaTable& table, const IcoGrid& grid) {
  if (gcc.n_mics != table.n_mics || table.n_cells != grid.n_cells)
    throw std::invalid_argument("srp_map: mismatched gcc/table/grid");
  std::vector<double> map(grid.n_cells, 0.0);
  for (int cell = 0; cell < grid.n_cells; ++cell) {
    if (grid.is_vertex[cell]) continue;
    double acc = 0.0;
    for (int n = 0; n < gcc.n_mics; ++n)
      for (int m = 0; m < gcc.n_mics; ++m) {
        if (n == m) continue;  // theta-independent offset, removed by the mean
        acc += gcc.at(n, m, table.at(n, m, cell));
      }
    map[cell] = 2.0 * M_PI * acc;
  }
  return map;
}

std::vector<double> normalize_map(std::vector<double> map, const IcoGrid& grid) {
  if (int(map.size()) != grid.n_cells) throw std::invalid_argument("normalize_map: size mismatch");
  double mean = 0.0;
  int n = 0;
  for (int c = 0; c < grid.n_cells; ++c)
    if (!grid.is_vertex[c]) {
      mean += map[c];
      ++n;
    }
  mean /= n;
  double max_abs = 0.0;
  for (int c = 0; c < grid.n_cells; ++c)
    if (!grid.is_vertex[c]) max_abs = std::max(max_abs, std::abs(map[c] - mean));
  if (max_abs < 1e-12) {
    std::fill(map.begin(), map.end(), 0.0);
    return map;
  }
  for (int c = 0; c < grid.n_cells; ++c)
    map[c] = grid.is_vertex[c] ? 0.0 : (map[c] - mean) / max_abs;
  return map;
}

SrpMapSeq compute_map_seq(const Channels& signal, const MicArray& array, const IcoGrid& grid,
                          const TdoaTable& table, const FramingConfig& fcfg,
                          const GccConfig& gcfg, const VadConfig& vcfg) {
  array.validate();
  fcfg.validate();
  const int N = int(signal.size());
  if (N != int(array.positions.size()))
    throw std::invalid_argument("compute_map_seq: channel count does not match array");
  const int64_t L = int64_t(signal[0].size());
  for (const auto& ch : signal)
    if (int64_t(ch.size()) != L) throw std::invalid_argument("compute_map_seq: ragged channels");

  SrpMapSeq seq;
  seq.T = frame_count(L, fcfg);
  seq.n_cells = grid.n_cells;
  seq.maps.assign(size_t(seq.T) * grid.n_cells, 0.0);
  seq.active.assign(seq.T, 0);

  VadState vad;
  Channels frame(N, std::vector<double>(fcfg.frame_len));
  std::vector<const double*> ptrs(N);
  for (int t = 0; t < seq.T; ++t) {
    int64_t start = int64_t(t) * fcfg.hop;
    for (int n = 0; n < N; ++n) {
      std::copy(signal[n].begin() + start, signal[n].begin() + start + fcfg.frame_len,
                frame[n].begin());
      ptrs[n] = frame[n].data();
    }
    bool is_active = vad_gate(ptrs.data(), N, fcfg.frame_len, vcfg, vad);
    seq.active[t] = is_active ? 1 : 0;
    if (!is_active) continue;  // silent frames stay all-zero
    GccLags gcc = gcc_phat(frame, fcfg, gcfg);
    auto map = normalize_map(srp_map(gcc, table, grid), grid);
    std::copy(map.begin(), map.end(), seq.maps.begin() + size_t(t) * grid.n_cells);
  }
  return seq;
}

}  // namespace icotrack
