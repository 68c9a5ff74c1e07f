#pragma once

// Rotation-equivariant layers on the planar icosahedral representation.
//
// Orientation bookkeeping: a 6-orientation feature stores, per cell, the
// responses of the six rotated copies of a hexagonal kernel, indexed in the
// cell's own chart frame.  Whenever a value crosses a chart boundary (padding
// copies, pooling stencils) the orientation channels are re-indexed by the
// frame rotation between the two charts.  Values parked on the ten valence-5
// vertex cells cannot carry a consistent orientation, so layer inputs replace
// them (and the two pole pad positions) with the mean of their five neighbors
// over all orientations, and convolution outputs zero them.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "icotrack/ico_grid.hpp"
#include "icotrack/tensor.hpp"

namespace icotrack {

struct GatherTerm {
  int32_t src;
  double w;
};

// out[i] = sum over its terms of w * in[src]; transpose() gives the adjoint.
struct GatherPlan {
  int n_out = 0;
  int n_in = 0;
  std::vector<int32_t> offsets;  // n_out + 1
  std::vector<GatherTerm> terms;

  template <typename T>
  void apply(const T* in, T* out) const {
    for (int i = 0; i < n_out; ++i) {
      T acc = T(0);
      for (int32_t k = offsets[i]; k < offsets[i + 1]; ++k)
        acc += T(terms[k].w) * in[terms[k].src];
      out[i] = acc;
    }
  }

  template <typename T>
  void apply_adjoint(const T* dout, T* din_accum) const {
    for (int i = 0; i < n_out; ++i)
      for (int32_t k = offsets[i]; k < offsets[i + 1]; ++k)
        din_accum[terms[k].src] += T(terms[k].w) * dout[i];
  }
};

namespace detail {

struct PlanBuilder {
  std::vector<std::vector<GatherTerm>> rows;
  void term(int row, int32_t src, double w) { rows[row].push_back({src, w}); }
  GatherPlan finish(int n_in) {
    GatherPlan p;
    p.n_out = int(rows.size());
    p.n_in = n_in;
    p.offsets.push_back(0);
    for (auto& r : rows) {
      for (auto& t : r) p.terms.push_back(t);
      p.offsets.push_back(int32_t(p.terms.size()));
    }
    return p;
  }
};

inline int tap_index_of(const IcoGrid& g, int cell, int target) {
  for (int t = 0; t < 6; ++t)
    if (g.tap_nbr[cell][t] == target) return t;
  throw std::logic_error("tap_index_of: cells are not neighbors");
}

}  // namespace detail

// Fill + pad for one [o][cell] slab into the padded [o][prows*pcols] layout,
// with orientation re-indexing on chart transitions and isotropic means on
// vertex cells and pole positions.
inline GatherPlan build_pad_plan(const IcoGrid& g, int o_in) {
  const int ppos = g.padded_rows() * g.padded_cols();
  detail::PlanBuilder b;
  b.rows.resize(size_t(o_in) * ppos);
  auto fill_terms = [&](int row, int cell) {
    for (int t = 0; t < 6; ++t) {
      int n = g.tap_nbr[cell][t];
      if (n < 0) continue;
      for (int oi = 0; oi < o_in; ++oi) b.term(row, oi * g.n_cells + n, 1.0 / (5.0 * o_in));
    }
  };
  for (int o = 0; o < o_in; ++o)
    for (int p = 0; p < ppos; ++p) {
      int row = o * ppos + p;
      const PadEntry& e = g.pad[p];
      switch (e.kind) {
        case PadEntry::kCell:
          if (g.is_vertex[e.src])
            fill_terms(row, e.src);
          else
            b.term(row, ((o + e.shift) % (o_in == 1 ? 1 : 6)) * g.n_cells + e.src, 1.0);
          break;
        case PadEntry::kPoleN:
        case PadEntry::kPoleS: {
          const auto& nb = g.pole_nbr[e.kind == PadEntry::kPoleN ? 0 : 1];
          for (int n : nb)
            for (int oi = 0; oi < o_in; ++oi) b.term(row, oi * g.n_cells + n, 1.0 / (5.0 * o_in));
          break;
        }
        case PadEntry::kZero:
          break;
      }
    }
  return b.finish(o_in * g.n_cells);
}

// Mean over {fine cell, its neighbors} for each surviving coarse cell, with
// the same orientation re-indexing across chart boundaries.
inline GatherPlan build_pool_plan(const IcoGrid& fine, const IcoGrid& coarse, int o_in) {
  if (coarse.r != fine.r - 1) throw std::invalid_argument("pool plan needs adjacent levels");
  detail::PlanBuilder b;
  b.rows.resize(size_t(o_in) * coarse.n_cells);
  for (int cc = 0; cc < coarse.n_cells; ++cc) {
    int chart = cc / (coarse.H * coarse.W);
    int row = (cc / coarse.W) % coarse.H, col = cc % coarse.W;
    int fc = fine.cell_index(chart, 2 * row + 1, 2 * col);
    int m = 1;
    for (int t = 0; t < 6; ++t) m += fine.tap_nbr[fc][t] >= 0;
    for (int o = 0; o < o_in; ++o) {
      int out_row = o * coarse.n_cells + cc;
      b.term(out_row, o * fine.n_cells + fc, 1.0 / m);
      for (int t = 0; t < 6; ++t) {
        int n = fine.tap_nbr[fc][t];
        if (n < 0) continue;
        int shift = 0;
        if (o_in == 6) {
          int back = detail::tap_index_of(fine, n, fc);
          shift = (back + 3 - t + 6) % 6;  // transport along the edge fc -> n
        }
        b.term(out_row, ((o + shift) % (o_in == 1 ? 1 : 6)) * fine.n_cells + n, 1.0 / m);
      }
    }
  }
  return b.finish(o_in * fine.n_cells);
}

template <typename T>
struct HexKernel {
  Tensor<T> w;  // [c_out][c_in][o_in][7]: tap 0 center, taps 1..6 the ring
  Tensor<T> b;  // [c_out]
  int c_out() const { return w.shape[0]; }
  int c_in() const { return w.shape[1]; }
  int o_in() const { return w.shape[2]; }
};

// 3x3 positions of the hexagonal taps; the two positions off the hexagonal
// neighborhood stay zero.
inline int tap_3x3_pos(int t) { return (kTapDr[t] + 1) * 3 + (kTapDc[t] + 1); }
inline constexpr int kCenter3x3 = 4;

// Expanded bank as a GEMM matrix [c_out*6][c_in*o_in*9]: output orientation s
// uses ring taps rotated by s and input orientations shifted by s.
template <typename T>
void expand_kernel(const HexKernel<T>& k, Tensor<T>& w_all) {
  const int C = k.c_out(), Ci = k.c_in(), Oi = k.o_in();
  w_all = Tensor<T>({C * 6, Ci * Oi * 9});
  const T* w = k.w.ptr();
  T* out = w_all.ptr();
  for (int co = 0; co < C; ++co)
    for (int s = 0; s < 6; ++s) {
      T* row = out + (size_t(co) * 6 + s) * (Ci * Oi * 9);
      for (int ci = 0; ci < Ci; ++ci)
        for (int oi = 0; oi < Oi; ++oi) {
          int oi_w = Oi == 1 ? 0 : (oi - s % 6 + 6) % 6;
          const T* src = w + ((size_t(co) * Ci + ci) * Oi + oi_w) * 7;
          T* dst = row + (size_t(ci) * Oi + oi) * 9;
          dst[kCenter3x3] = src[0];
          for (int t = 0; t < 6; ++t) dst[tap_3x3_pos(t)] = src[1 + (t - s + 6) % 6];
        }
    }
}

// Adjoint of expand_kernel: folds a gradient in the expanded layout back onto
// the 7-tap parameterization.
template <typename T>
void fold_kernel_grad(const Tensor<T>& d_all, int c_out, int c_in, int o_in, Tensor<T>& dk) {
  if (dk.numel() == 0) dk = Tensor<T>({c_out, c_in, o_in, 7});
  const T* d = d_all.ptr();
  T* out = dk.ptr();
  for (int co = 0; co < c_out; ++co)
    for (int s = 0; s < 6; ++s) {
      const T* row = d + (size_t(co) * 6 + s) * (c_in * o_in * 9);
      for (int ci = 0; ci < c_in; ++ci)
        for (int oi = 0; oi < o_in; ++oi) {
          int oi_w = o_in == 1 ? 0 : (oi - s % 6 + 6) % 6;
          T* dst = out + ((size_t(co) * c_in + ci) * o_in + oi_w) * 7;
          const T* src = row + (size_t(ci) * o_in + oi) * 9;
          dst[0] += src[kCenter3x3];
          for (int t = 0; t < 6; ++t) dst[1 + (t - s + 6) % 6] += src[tap_3x3_pos(t)];
        }
    }
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMatC = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// im2col over the padded layout; columns indexed by (frame, cell).
template <typename T>
void im2col(const Tensor<T>& padded, const IcoGrid& g, Tensor<T>& col) {
  const int TT = padded.shape[0], C = padded.shape[1], O = padded.shape[2];
  const int prow = g.padded_rows(), pcol = g.padded_cols();
  const int F = C * O * 9, N = TT * g.n_cells;
  col = Tensor<T>({N, F});  // column-contiguous per (t, cell)
  const T* pd = padded.ptr();
  T* out = col.ptr();
  for (int t = 0; t < TT; ++t)
    for (int cell = 0; cell < g.n_cells; ++cell) {
      int chart = cell / (g.H * g.W);
      int r = (cell / g.W) % g.H, c = cell % g.W;
      int pr = chart * (g.H + 2) + r + 1, pc = c + 1;
      T* dst = out + (size_t(t) * g.n_cells + cell) * F;
      for (int ci = 0; ci < C; ++ci)
        for (int oi = 0; oi < O; ++oi) {
          const T* slab = pd + ((size_t(t) * C + ci) * O + oi) * (size_t(prow) * pcol);
          T* d9 = dst + (size_t(ci) * O + oi) * 9;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              d9[(di + 1) * 3 + (dj + 1)] = slab[(pr + di) * pcol + (pc + dj)];
        }
    }
}

template <typename T>
void col2im_accum(const Tensor<T>& dcol, const IcoGrid& g, Tensor<T>& dpadded) {
  const int TT = dpadded.shape[0], C = dpadded.shape[1], O = dpadded.shape[2];
  const int prow = g.padded_rows(), pcol = g.padded_cols();
  const int F = C * O * 9;
  const T* dc = dcol.ptr();
  T* pd = dpadded.ptr();
  for (int t = 0; t < TT; ++t)
    for (int cell = 0; cell < g.n_cells; ++cell) {
      int chart = cell / (g.H * g.W);
      int r = (cell / g.W) % g.H, c = cell % g.W;
      int pr = chart * (g.H + 2) + r + 1, pc = c + 1;
      const T* src = dc + (size_t(t) * g.n_cells + cell) * F;
      for (int ci = 0; ci < C; ++ci)
        for (int oi = 0; oi < O; ++oi) {
          T* slab = pd + ((size_t(t) * C + ci) * O + oi) * (size_t(prow) * pcol);
          const T* s9 = src + (size_t(ci) * O + oi) * 9;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              slab[(pr + di) * pcol + (pc + dj)] += s9[(di + 1) * 3 + (dj + 1)];
        }
    }
}

// Icosahedral convolution: fill/pad -> 3x3 GEMM with the expanded bank ->
// bias -> vertex outputs zeroed.  x is [T][c_in][o_in][cells]; the result is
// [T][c_out][6][cells].
template <typename T>
Tensor<T> ico_conv_forward(const Tensor<T>& x, const HexKernel<T>& k, const IcoGrid& g,
                           const GatherPlan& pad_plan, Tensor<T>* col_out = nullptr) {
  const int TT = x.shape[0], Ci = x.shape[1], Oi = x.shape[2];
  if (Ci != k.c_in() || Oi != k.o_in() || x.shape[3] != g.n_cells)
    throw std::invalid_argument("ico_conv: input shape does not match kernel/grid");
  const int ppos = g.padded_rows() * g.padded_cols();

  Tensor<T> padded({TT, Ci, Oi, ppos});
  for (int t = 0; t < TT; ++t)
    for (int c = 0; c < Ci; ++c)
      pad_plan.apply(x.ptr() + (size_t(t) * Ci + c) * Oi * g.n_cells,
                     padded.ptr() + (size_t(t) * Ci + c) * Oi * ppos);

  Tensor<T> col;
  im2col(padded, g, col);

  Tensor<T> w_all;
  expand_kernel(k, w_all);
  const int R = k.c_out() * 6, F = Ci * Oi * 9, N = TT * g.n_cells;

  Tensor<T> out({TT, k.c_out(), 6, g.n_cells});
  Eigen::Map<const EMat<T>> W(w_all.ptr(), R, F);
  Eigen::Map<const EMat<T>> Cm(col.ptr(), N, F);  // row per column-sample
  Tensor<T> prod({R, N});
  Eigen::Map<EMat<T>> P(prod.ptr(), R, N);
  P.noalias() = W * Cm.transpose();

  for (int co = 0; co < k.c_out(); ++co)
    for (int s = 0; s < 6; ++s) {
      const T* row = prod.ptr() + (size_t(co) * 6 + s) * N;
      T bias = k.b.ptr()[co];
      for (int t = 0; t < TT; ++t) {
        T* dst = out.ptr() + ((size_t(t) * k.c_out() + co) * 6 + s) * g.n_cells;
        const T* src = row + size_t(t) * g.n_cells;
        for (int cell = 0; cell < g.n_cells; ++cell)
          dst[cell] = g.is_vertex[cell] ? T(0) : src[cell] + bias;
      }
    }
  if (col_out) *col_out = std::move(col);
  return out;
}

template <typename T>
void ico_conv_backward(const Tensor<T>& x, const HexKernel<T>& k, const IcoGrid& g,
                       const GatherPlan& pad_plan, const Tensor<T>& dout, Tensor<T>& dw,
                       Tensor<T>& db, Tensor<T>* dx) {
  const int TT = x.shape[0], Ci = x.shape[1], Oi = x.shape[2];
  const int ppos = g.padded_rows() * g.padded_cols();
  const int R = k.c_out() * 6, F = Ci * Oi * 9, N = TT * g.n_cells;

  // Vertex outputs are zeroed on the forward pass, so their gradient is cut.
  Tensor<T> dprod({R, N});
  for (int co = 0; co < k.c_out(); ++co)
    for (int s = 0; s < 6; ++s) {
      T* row = dprod.ptr() + (size_t(co) * 6 + s) * N;
      for (int t = 0; t < TT; ++t) {
        const T* src = dout.ptr() + ((size_t(t) * k.c_out() + co) * 6 + s) * g.n_cells;
        T* dst = row + size_t(t) * g.n_cells;
        for (int cell = 0; cell < g.n_cells; ++cell)
          dst[cell] = g.is_vertex[cell] ? T(0) : src[cell];
      }
    }

  if (db.numel() == 0) db = Tensor<T>({k.c_out()});
  for (int co = 0; co < k.c_out(); ++co) {
    T acc = T(0);
    for (int s = 0; s < 6; ++s) {
      const T* row = dprod.ptr() + (size_t(co) * 6 + s) * N;
      for (int i = 0; i < N; ++i) acc += row[i];
    }
    db.ptr()[co] += acc;
  }

  // Recompute the forward gathers (cheap) rather than saving them.
  Tensor<T> padded({TT, Ci, Oi, ppos});
  for (int t = 0; t < TT; ++t)
    for (int c = 0; c < Ci; ++c)
      pad_plan.apply(x.ptr() + (size_t(t) * Ci + c) * Oi * g.n_cells,
                     padded.ptr() + (size_t(t) * Ci + c) * Oi * ppos);
  Tensor<T> col;
  im2col(padded, g, col);

  Eigen::Map<const EMat<T>> dP(dprod.ptr(), R, N);
  Eigen::Map<const EMat<T>> Cm(col.ptr(), N, F);
  Tensor<T> dw_all({R, F});
  Eigen::Map<EMat<T>> dW(dw_all.ptr(), R, F);
  dW.noalias() = dP * Cm;
  fold_kernel_grad(dw_all, k.c_out(), Ci, Oi, dw);

  if (dx) {
    Tensor<T> w_all;
    expand_kernel(k, w_all);
    Eigen::Map<const EMat<T>> W(w_all.ptr(), R, F);
    Tensor<T> dcol({N, F});
    Eigen::Map<EMat<T>> dC(dcol.ptr(), N, F);
    dC.noalias() = dP.transpose() * W;
    Tensor<T> dpadded({TT, Ci, Oi, ppos});
    col2im_accum(dcol, g, dpadded);
    if (dx->numel() == 0) *dx = Tensor<T>(x.shape);
    for (int t = 0; t < TT; ++t)
      for (int c = 0; c < Ci; ++c)
        pad_plan.apply_adjoint(dpadded.ptr() + (size_t(t) * Ci + c) * Oi * ppos,
                               dx->ptr() + (size_t(t) * Ci + c) * Oi * g.n_cells);
  }
}

// Causal temporal convolution, kernel length 5, identical weights for every
// orientation and cell.  w is [c_out][c_in][5] with tap 4 on the current
// frame; output length equals input length via 4 frames of left zero-padding.
template <typename T>
Tensor<T> temporal_conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int TT = x.shape[0], Ci = x.shape[1], O = x.shape[2], M = x.shape[3];
  const int Co = w.shape[0], K = w.shape[2];
  if (w.shape[1] != Ci) throw std::invalid_argument("temporal_conv: channel mismatch");
  Tensor<T> out({TT, Co, O, M});
  const int S = O * M;
  using Map = Eigen::Map<const EMat<T>>;
  using MapM = Eigen::Map<EMat<T>>;
  std::vector<EMat<T>> wk(K);
  for (int tau = 0; tau < K; ++tau) {
    wk[tau].resize(Co, Ci);
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci) wk[tau](co, ci) = w.ptr()[(size_t(co) * Ci + ci) * K + tau];
  }
  for (int t = 0; t < TT; ++t) {
    MapM Y(out.ptr() + size_t(t) * Co * S, Co, S);
    for (int co = 0; co < Co; ++co) Y.row(co).setConstant(b.ptr()[co]);
    for (int tau = 0; tau < K; ++tau) {
      int ts = t - (K - 1) + tau;
      if (ts < 0) continue;
      Map X(x.ptr() + size_t(ts) * Ci * S, Ci, S);
      Y.noalias() += wk[tau] * X;
    }
  }
  return out;
}

template <typename T>
void temporal_conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dout,
                            Tensor<T>& dw, Tensor<T>& db, Tensor<T>* dx) {
  const int TT = x.shape[0], Ci = x.shape[1], O = x.shape[2], M = x.shape[3];
  const int Co = w.shape[0], K = w.shape[2];
  const int S = O * M;
  if (dw.numel() == 0) dw = Tensor<T>(w.shape);
  if (db.numel() == 0) db = Tensor<T>({Co});
  if (dx && dx->numel() == 0) *dx = Tensor<T>(x.shape);

  std::vector<EMat<T>> wk(K), dwk(K);
  for (int tau = 0; tau < K; ++tau) {
    wk[tau].resize(Co, Ci);
    dwk[tau] = EMat<T>::Zero(Co, Ci);
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci) wk[tau](co, ci) = w.ptr()[(size_t(co) * Ci + ci) * K + tau];
  }
  for (int t = 0; t < TT; ++t) {
    Eigen::Map<const EMat<T>> dY(dout.ptr() + size_t(t) * Co * S, Co, S);
    for (int co = 0; co < Co; ++co) db.ptr()[co] += dY.row(co).sum();
    for (int tau = 0; tau < K; ++tau) {
      int ts = t - (K - 1) + tau;
      if (ts < 0) continue;
      Eigen::Map<const EMat<T>> X(x.ptr() + size_t(ts) * Ci * S, Ci, S);
      dwk[tau].noalias() += dY * X.transpose();
      if (dx) {
        Eigen::Map<EMat<T>> dX(dx->ptr() + size_t(ts) * Ci * S, Ci, S);
        dX.noalias() += wk[tau].transpose() * dY;
      }
    }
  }
  for (int tau = 0; tau < K; ++tau)
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci) dw.ptr()[(size_t(co) * Ci + ci) * K + tau] += dwk[tau](co, ci);
}

// Per-frame layer normalization over (channel, orientation, cell), affine
// scale/bias per channel shared across orientations and cells.
inline constexpr double kLayerNormVarFloor = 1e-5;

template <typename T>
struct LayerNormCtx {
  std::vector<T> mean, rstd;
  std::vector<uint8_t> floored;
};

template <typename T>
Tensor<T> layer_norm_forward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& bias,
                             LayerNormCtx<T>& ctx) {
  const int TT = x.shape[0], C = x.shape[1], O = x.shape[2], M = x.shape[3];
  const int64_t N = int64_t(C) * O * M;
  Tensor<T> out(x.shape);
  ctx.mean.resize(TT);
  ctx.rstd.resize(TT);
  ctx.floored.resize(TT);
  for (int t = 0; t < TT; ++t) {
    const T* xp = x.ptr() + size_t(t) * N;
    T* yp = out.ptr() + size_t(t) * N;
    double mu = 0;
    for (int64_t i = 0; i < N; ++i) mu += xp[i];
    mu /= double(N);
    double var = 0;
    for (int64_t i = 0; i < N; ++i) {
      double d = xp[i] - mu;
      var += d * d;
    }
    var /= double(N);
    bool floored = var < kLayerNormVarFloor;
    double rstd = 1.0 / std::sqrt(floored ? kLayerNormVarFloor : var);
    ctx.mean[t] = T(mu);
    ctx.rstd[t] = T(rstd);
    ctx.floored[t] = floored;
    for (int c = 0; c < C; ++c) {
      T ga = scale.ptr()[c], be = bias.ptr()[c];
      for (int64_t i = int64_t(c) * O * M; i < int64_t(c + 1) * O * M; ++i)
        yp[i] = ga * T((xp[i] - mu) * rstd) + be;
    }
  }
  return out;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& scale, const LayerNormCtx<T>& ctx,
                         const Tensor<T>& dout, Tensor<T>& dscale, Tensor<T>& dbias,
                         Tensor<T>* dx) {
  const int TT = x.shape[0], C = x.shape[1], O = x.shape[2], M = x.shape[3];
  const int64_t N = int64_t(C) * O * M;
  if (dscale.numel() == 0) dscale = Tensor<T>({C});
  if (dbias.numel() == 0) dbias = Tensor<T>({C});
  if (dx && dx->numel() == 0) *dx = Tensor<T>(x.shape);
  for (int t = 0; t < TT; ++t) {
    const T* xp = x.ptr() + size_t(t) * N;
    const T* dy = dout.ptr() + size_t(t) * N;
    double mu = ctx.mean[t], rstd = ctx.rstd[t];
    for (int c = 0; c < C; ++c) {
      double ds = 0, dbv = 0;
      for (int64_t i = int64_t(c) * O * M; i < int64_t(c + 1) * O * M; ++i) {
        ds += dy[i] * (xp[i] - mu) * rstd;
        dbv += dy[i];
      }
      dscale.ptr()[c] += T(ds);
      dbias.ptr()[c] += T(dbv);
    }
    if (!dx) continue;
    // dxhat folded with the per-channel scale
    double sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (int c = 0; c < C; ++c) {
      double ga = scale.ptr()[c];
      for (int64_t i = int64_t(c) * O * M; i < int64_t(c + 1) * O * M; ++i) {
        double dxh = dy[i] * ga;
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * (xp[i] - mu) * rstd;
      }
    }
    double inv_n = 1.0 / double(N);
    T* dxp = dx->ptr() + size_t(t) * N;
    for (int c = 0; c < C; ++c) {
      double ga = scale.ptr()[c];
      for (int64_t i = int64_t(c) * O * M; i < int64_t(c + 1) * O * M; ++i) {
        double dxh = dy[i] * ga;
        double xhat = (xp[i] - mu) * rstd;
        double v = dxh - inv_n * sum_dxhat;
        if (!ctx.floored[t]) v -= xhat * inv_n * sum_dxhat_xhat;
        dxp[i] += T(rstd * v);
      }
    }
  }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return out;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dout, Tensor<T>& dx) {
  if (dx.numel() == 0) dx = Tensor<T>(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i)
    if (x.data[i] > T(0)) dx.data[i] += dout.data[i];  // zero subgradient at 0
}

// Max over the orientation axis; ties go to the lowest orientation index.
template <typename T>
Tensor<T> orient_max_forward(const Tensor<T>& x, std::vector<int8_t>& argmax) {
  const int TT = x.shape[0], C = x.shape[1], O = x.shape[2], M = x.shape[3];
  Tensor<T> out({TT, C, 1, M});
  argmax.assign(size_t(TT) * C * M, 0);
  for (int t = 0; t < TT; ++t)
    for (int c = 0; c < C; ++c) {
      const T* xp = x.ptr() + ((size_t(t) * C + c) * O) * M;
      T* yp = out.ptr() + (size_t(t) * C + c) * M;
      int8_t* am = argmax.data() + (size_t(t) * C + c) * M;
      for (int m = 0; m < M; ++m) {
        T best = xp[m];
        int8_t bi = 0;
        for (int o = 1; o < O; ++o)
          if (xp[size_t(o) * M + m] > best) {
            best = xp[size_t(o) * M + m];
            bi = int8_t(o);
          }
        yp[m] = best;
        am[m] = bi;
      }
    }
  return out;
}

template <typename T>
void orient_max_backward(const std::vector<int8_t>& argmax, const Tensor<T>& dout, int O,
                         Tensor<T>& dx) {
  const int TT = dout.shape[0], C = dout.shape[1], M = dout.shape[3];
  if (dx.numel() == 0) dx = Tensor<T>({TT, C, O, M});
  for (int t = 0; t < TT; ++t)
    for (int c = 0; c < C; ++c) {
      const T* dy = dout.ptr() + (size_t(t) * C + c) * M;
      const int8_t* am = argmax.data() + (size_t(t) * C + c) * M;
      T* dxp = dx.ptr() + ((size_t(t) * C + c) * O) * M;
      for (int m = 0; m < M; ++m) dxp[size_t(am[m]) * M + m] += dy[m];
    }
}

}  // namespace icotrack
