#pragma once

// Test-only reference implementations, independent of the library's signal
// path: naive DFTs, time-domain correlation, and exact spectral-domain
// free-field synthesis.

#include <complex>
#include <random>
#include <vector>

#include "icotrack/srp.hpp"
#include "icotrack/vec3.hpp"

namespace oracles {

using icotrack::Vec3;

inline std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  int n = int(x.size());
  std::vector<std::complex<double>> out(n);
  for (int k = 0; k < n; ++k) {
    std::complex<double> s = 0;
    for (int t = 0; t < n; ++t)
      s += x[t] * std::polar(1.0, -2.0 * M_PI * double(k) * t / n);
    out[k] = s;
  }
  return out;
}

// Brute-force circular cross-correlation c(tau) = sum_t a(t) b(t - tau).
inline std::vector<double> circular_xcorr(const std::vector<double>& a,
                                          const std::vector<double>& b) {
  int n = int(a.size());
  std::vector<double> c(n, 0.0);
  for (int tau = 0; tau < n; ++tau)
    for (int t = 0; t < n; ++t) c[tau] += a[t] * b[((t - tau) % n + n) % n];
  return c;
}

inline int circular_argmax_lag(const std::vector<double>& c) {
  int n = int(c.size());
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (c[i] > c[best]) best = i;
  return best > n / 2 ? best - n : best;
}

// Band-limited random signal held as its positive-frequency coefficients;
// time-domain values and exact fractional delays come straight from the sum
// x(t) = 2 Re sum_k amp_k exp(2 pi i k (t - d) / n).
struct BandSignal {
  int n = 0, lo = 0, hi = 0;
  std::vector<std::complex<double>> amp;  // index k - lo

  std::vector<double> render(double delay) const {
    std::vector<double> x(n, 0.0);
    for (int k = lo; k <= hi; ++k) {
      std::complex<double> rot =
          amp[k - lo] * std::polar(1.0, -2.0 * M_PI * double(k) * delay / n);
      std::complex<double> step = std::polar(1.0, 2.0 * M_PI * double(k) / n);
      for (int t = 0; t < n; ++t) {
        x[t] += 2.0 * rot.real();
        rot *= step;
      }
    }
    return x;
  }
};

inline BandSignal band_signal(int n, double lo_bin_frac, double hi_bin_frac, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  BandSignal s;
  s.n = n;
  s.lo = std::max(1, int(lo_bin_frac * n / 2));
  s.hi = std::min(n / 2 - 1, int(hi_bin_frac * n / 2));
  for (int k = s.lo; k <= s.hi; ++k) s.amp.push_back({g(rng), g(rng)});
  double peak = 1e-12;
  for (double v : s.render(0.0)) peak = std::max(peak, std::abs(v));
  for (auto& a : s.amp) a /= peak;
  return s;
}

inline std::vector<double> bandlimited_noise(int n, double lo, double hi, uint64_t seed) {
  return band_signal(n, lo, hi, seed).render(0.0);
}

// Far-field plane wave from direction u hitting every microphone of the
// array; mic n receives s(t - d_n) with d_n = -fs * p_n . u / c.
inline icotrack::Channels plane_wave(const icotrack::MicArray& array, const Vec3& u,
                                     const BandSignal& s) {
  icotrack::Channels out;
  for (const Vec3& p : array.positions)
    out.push_back(s.render(-array.fs * p.dot(u) / array.c));
  return out;
}

}  // namespace oracles
