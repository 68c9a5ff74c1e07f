#pragma once

#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <vector>

namespace icotrack {

using cplx = std::complex<double>;

// Iterative radix-2 FFT with cached twiddles.  Sizes must be powers of two.
class Fft {
 public:
  explicit Fft(int n) : n_(n) {
    if (n < 2 || (n & (n - 1))) throw std::invalid_argument("Fft: size must be a power of two");
    log2n_ = 0;
    while ((1 << log2n_) < n) ++log2n_;
    rev_.resize(n);
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < log2n_; ++b) r |= ((i >> b) & 1) << (log2n_ - 1 - b);
      rev_[i] = r;
    }
    tw_.resize(n / 2);
    for (int j = 0; j < n / 2; ++j)
      tw_[j] = std::polar(1.0, -2.0 * M_PI * j / n);
  }

  int size() const { return n_; }

  void forward(cplx* x) const {
    for (int i = 0; i < n_; ++i)
      if (rev_[i] > i) std::swap(x[i], x[rev_[i]]);
    for (int m = 2; m <= n_; m <<= 1) {
      int half = m / 2, step = n_ / m;
      for (int base = 0; base < n_; base += m)
        for (int j = 0; j < half; ++j) {
          cplx w = tw_[j * step];
          cplx t = w * x[base + j + half];
          cplx u = x[base + j];
          x[base + j] = u + t;
          x[base + j + half] = u - t;
        }
    }
  }

  void inverse(cplx* x) const {
    for (int i = 0; i < n_; ++i) x[i] = std::conj(x[i]);
    forward(x);
    double s = 1.0 / n_;
    for (int i = 0; i < n_; ++i) x[i] = std::conj(x[i]) * s;
  }

 private:
  int n_, log2n_ = 0;
  std::vector<int> rev_;
  std::vector<cplx> tw_;
};

// Real transforms built on a half-size complex FFT.  Spectra hold the n/2+1
// non-redundant bins of a length-n real signal.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n), half_(n / 2) {
    if (n < 4 || (n & (n - 1)))
      throw std::invalid_argument("RealFft: size must be a power of two >= 4");
    for (int k = 0; k <= half_ / 2; ++k)
      roots_.push_back(std::polar(1.0, -2.0 * M_PI * k / n));
  }

  int size() const { return n_; }
  int bins() const { return half_ + 1; }

  void forward(const double* x, cplx* spec) const {
    std::vector<cplx> z(half_);
    for (int k = 0; k < half_; ++k) z[k] = {x[2 * k], x[2 * k + 1]};
    fft().forward(z.data());
    for (int k = 0; k <= half_; ++k) {
      cplx zk = z[k % half_];
      cplx zr = std::conj(z[(half_ - k) % half_]);
      cplx even = 0.5 * (zk + zr);
      cplx odd = cplx(0, -0.5) * (zk - zr);
      spec[k] = even + root(k) * odd;
    }
  }

  void inverse(const cplx* spec, double* x) const {
    std::vector<cplx> z(half_);
    for (int k = 0; k < half_; ++k) {
      cplx xk = spec[k];
      cplx xr = std::conj(spec[half_ - k]);
      cplx even = 0.5 * (xk + xr);
      cplx odd = 0.5 * (xk - xr) * std::conj(root(k));
      z[k] = even + cplx(0, 1) * odd;
    }
    fft().inverse(z.data());
    for (int k = 0; k < half_; ++k) {
      x[2 * k] = z[k].real();
      x[2 * k + 1] = z[k].imag();
    }
  }

 private:
  const Fft& fft() const {
    if (!cfft_) cfft_ = std::make_unique<Fft>(half_);
    return *cfft_;
  }
  cplx root(int k) const {
    // exp(-2*pi*i*k/n) from the cached first quadrant
    if (k <= half_ / 2) return roots_[k];
    cplx r = roots_[half_ - k];
    return {-r.real(), r.imag()};
  }

  int n_, half_;
  std::vector<cplx> roots_;
  mutable std::unique_ptr<Fft> cfft_;
};

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace icotrack
