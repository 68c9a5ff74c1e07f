#pragma once

// Reverse-mode differentiation over the fixed operation set used by the DOA
// network: masked 3x3 convolution (via gather plans), causal 1-D convolution,
// layer norm, ReLU, orientation max, softmax-weighted coordinate sums, and
// the MSE loss.  Anything else has no record entry point and cannot enter a
// tape.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "icotrack/ico_grid.hpp"
#include "icotrack/ico_nn.hpp"
#include "icotrack/tensor.hpp"

namespace icotrack {

template <typename T>
class Tape;

template <typename T>
struct TapeOp {
  virtual ~TapeOp() = default;
  virtual void backward(Tape<T>& tape, int self) = 0;
};

template <typename T>
struct TapeNode {
  Tensor<T> val;
  Tensor<T> grad;  // allocated on first use
  bool needs_grad = false;
  std::unique_ptr<TapeOp<T>> op;
};

template <typename T>
class Tape {
 public:
  int leaf(Tensor<T> v, bool needs_grad) {
    nodes_.push_back({std::move(v), {}, needs_grad, nullptr});
    return int(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_[id].val; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  Tensor<T>& grad(int id) {
    TapeNode<T>& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.val.shape);
    return n.grad;
  }

  void backward(int loss_id) {
    if (nodes_[loss_id].val.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    Tensor<T> seed({1});
    seed.data[0] = T(1);
    backward_seed(loss_id, seed);
  }

  // Reverse sweep from an arbitrary node with a given output cotangent.
  void backward_seed(int from, const Tensor<T>& seed) {
    if (!nodes_[from].val.same_shape(seed))
      throw std::invalid_argument("backward_seed: seed shape mismatch");
    grad(from) = seed;
    for (int id = from; id >= 0; --id)
      if (nodes_[id].op && nodes_[id].grad.numel() != 0) nodes_[id].op->backward(*this, id);
  }

  // -- recorded operations ---------------------------------------------

  int ico_conv(int x, int w, int b, const IcoGrid& grid, const GatherPlan& pad);
  int temporal_conv(int x, int w, int b);
  int layer_norm(int x, int scale, int bias);
  int relu(int x);
  int orient_max(int x);
  int pool(int x, const GatherPlan& plan, int o, int coarse_cells);
  // Zeroes vertex logits, then softmax-weighted sum of cell coordinates.
  // x must be [T][1][1][cells]; result is [T][3].
  int soft_argmax(int x, const IcoGrid& grid, Tensor<T>* prob_out = nullptr);
  // Mean over frames and coordinates of the squared estimate error.
  int mse_loss(int v, const Tensor<T>& target);

  int emplace(Tensor<T> v, bool needs_grad, std::unique_ptr<TapeOp<T>> op) {
    nodes_.push_back({std::move(v), {}, needs_grad, std::move(op)});
    return int(nodes_.size()) - 1;
  }
  TapeNode<T>& node(int id) { return nodes_[id]; }

 private:
  std::vector<TapeNode<T>> nodes_;
};

namespace ops {

template <typename T>
struct IcoConv : TapeOp<T> {
  int x, w, b;
  const IcoGrid* grid;
  const GatherPlan* pad;
  HexKernel<T> kernel_view(Tape<T>& t) const {
    HexKernel<T> k;
    k.w = t.val(w);
    k.b = t.val(b);
    return k;
  }
  void backward(Tape<T>& tape, int self) override {
    HexKernel<T> k = kernel_view(tape);
    Tensor<T>* dx = tape.needs_grad(x) ? &tape.grad(x) : nullptr;
    ico_conv_backward(tape.val(x), k, *grid, *pad, tape.node(self).grad, tape.grad(w),
                      tape.grad(b), dx);
  }
};

template <typename T>
struct TemporalConv : TapeOp<T> {
  int x, w, b;
  void backward(Tape<T>& tape, int self) override {
    Tensor<T>* dx = tape.needs_grad(x) ? &tape.grad(x) : nullptr;
    temporal_conv_backward(tape.val(x), tape.val(w), tape.node(self).grad, tape.grad(w),
                           tape.grad(b), dx);
  }
};

template <typename T>
struct LayerNorm : TapeOp<T> {
  int x, scale, bias;
  LayerNormCtx<T> ctx;
  void backward(Tape<T>& tape, int self) override {
    Tensor<T>* dx = tape.needs_grad(x) ? &tape.grad(x) : nullptr;
    layer_norm_backward(tape.val(x), tape.val(scale), ctx, tape.node(self).grad,
                        tape.grad(scale), tape.grad(bias), dx);
  }
};

template <typename T>
struct Relu : TapeOp<T> {
  int x;
  void backward(Tape<T>& tape, int self) override {
    if (tape.needs_grad(x)) relu_backward(tape.val(x), tape.node(self).grad, tape.grad(x));
  }
};

template <typename T>
struct OrientMax : TapeOp<T> {
  int x;
  int o_in;
  std::vector<int8_t> argmax;
  void backward(Tape<T>& tape, int self) override {
    if (tape.needs_grad(x))
      orient_max_backward(argmax, tape.node(self).grad, o_in, tape.grad(x));
  }
};

template <typename T>
struct Pool : TapeOp<T> {
  int x;
  const GatherPlan* plan;
  void backward(Tape<T>& tape, int self) override {
    if (!tape.needs_grad(x)) return;
    const Tensor<T>& dout = tape.node(self).grad;
    Tensor<T>& dx = tape.grad(x);
    int TT = dout.shape[0], C = dout.shape[1];
    int slab_out = dout.shape[2] * dout.shape[3];
    int slab_in = dx.shape[2] * dx.shape[3];
    for (int t = 0; t < TT; ++t)
      for (int c = 0; c < C; ++c)
        plan->apply_adjoint(dout.ptr() + (size_t(t) * C + c) * slab_out,
                            dx.ptr() + (size_t(t) * C + c) * slab_in);
  }
};

template <typename T>
struct SoftArgmax : TapeOp<T> {
  int x;
  const IcoGrid* grid;
  Tensor<T> prob;  // [T][cells]
  void backward(Tape<T>& tape, int self) override {
    if (!tape.needs_grad(x)) return;
    const Tensor<T>& dv = tape.node(self).grad;  // [T][3]
    const Tensor<T>& v = tape.node(self).val;
    Tensor<T>& dx = tape.grad(x);
    int TT = dv.shape[0], M = grid->n_cells;
    for (int t = 0; t < TT; ++t) {
      const T* w = prob.ptr() + size_t(t) * M;
      const T* dvt = dv.ptr() + size_t(t) * 3;
      const T* vt = v.ptr() + size_t(t) * 3;
      T* dz = dx.ptr() + size_t(t) * M;
      for (int m = 0; m < M; ++m) {
        if (grid->is_vertex[m]) continue;  // logits were zeroed
        const Vec3& u = grid->coords[m];
        double a = (u.x - vt[0]) * dvt[0] + (u.y - vt[1]) * dvt[1] + (u.z - vt[2]) * dvt[2];
        dz[m] += T(w[m] * a);
      }
    }
  }
};

template <typename T>
struct MseLoss : TapeOp<T> {
  int v;
  Tensor<T> target;
  void backward(Tape<T>& tape, int self) override {
    if (!tape.needs_grad(v)) return;
    T scale = tape.node(self).grad.data[0];
    const Tensor<T>& est = tape.val(v);
    Tensor<T>& dv = tape.grad(v);
    int64_t n = est.numel();
    for (int64_t i = 0; i < n; ++i)
      dv.data[i] += scale * T(2) * (est.data[i] - target.data[i]) / T(n);
  }
};

}  // namespace ops

template <typename T>
int Tape<T>::ico_conv(int x, int w, int b, const IcoGrid& grid, const GatherPlan& pad) {
  auto op = std::make_unique<ops::IcoConv<T>>();
  op->x = x;
  op->w = w;
  op->b = b;
  op->grid = &grid;
  op->pad = &pad;
  HexKernel<T> k;
  k.w = val(w);
  k.b = val(b);
  Tensor<T> out = ico_conv_forward(val(x), k, grid, pad);
  bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  return emplace(std::move(out), ng, std::move(op));
}

template <typename T>
int Tape<T>::temporal_conv(int x, int w, int b) {
  auto op = std::make_unique<ops::TemporalConv<T>>();
  op->x = x;
  op->w = w;
  op->b = b;
  Tensor<T> out = temporal_conv_forward(val(x), val(w), val(b));
  bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  return emplace(std::move(out), ng, std::move(op));
}

template <typename T>
int Tape<T>::layer_norm(int x, int scale, int bias) {
  auto op = std::make_unique<ops::LayerNorm<T>>();
  op->x = x;
  op->scale = scale;
  op->bias = bias;
  Tensor<T> out = layer_norm_forward(val(x), val(scale), val(bias), op->ctx);
  bool ng = needs_grad(x) || needs_grad(scale) || needs_grad(bias);
  return emplace(std::move(out), ng, std::move(op));
}

template <typename T>
int Tape<T>::relu(int x) {
  auto op = std::make_unique<ops::Relu<T>>();
  op->x = x;
  Tensor<T> out = relu_forward(val(x));
  return emplace(std::move(out), needs_grad(x), std::move(op));
}

template <typename T>
int Tape<T>::orient_max(int x) {
  auto op = std::make_unique<ops::OrientMax<T>>();
  op->x = x;
  op->o_in = val(x).shape[2];
  Tensor<T> out = orient_max_forward(val(x), op->argmax);
  return emplace(std::move(out), needs_grad(x), std::move(op));
}

template <typename T>
int Tape<T>::pool(int x, const GatherPlan& plan, int o, int coarse_cells) {
  auto op = std::make_unique<ops::Pool<T>>();
  op->x = x;
  op->plan = &plan;
  const Tensor<T>& xin = val(x);
  int TT = xin.shape[0], C = xin.shape[1];
  Tensor<T> out({TT, C, o, coarse_cells});
  int slab_in = xin.shape[2] * xin.shape[3];
  for (int t = 0; t < TT; ++t)
    for (int c = 0; c < C; ++c)
      plan.apply(xin.ptr() + (size_t(t) * C + c) * slab_in,
                 out.ptr() + (size_t(t) * C + c) * size_t(o) * coarse_cells);
  return emplace(std::move(out), needs_grad(x), std::move(op));
}

template <typename T>
int Tape<T>::soft_argmax(int x, const IcoGrid& grid, Tensor<T>* prob_out) {
  const Tensor<T>& z = val(x);
  if (z.shape[1] != 1 || z.shape[2] != 1 || z.shape[3] != grid.n_cells)
    throw std::invalid_argument("soft_argmax: expected [T][1][1][cells] logits");
  auto op = std::make_unique<ops::SoftArgmax<T>>();
  op->x = x;
  op->grid = &grid;
  int TT = z.shape[0], M = grid.n_cells;
  Tensor<T> v({TT, 3});
  op->prob = Tensor<T>({TT, M});
  for (int t = 0; t < TT; ++t) {
    const T* zt = z.ptr() + size_t(t) * M;
    T* w = op->prob.ptr() + size_t(t) * M;
    double zmax = 0.0;  // vertex logits are zeroed, so the max is >= 0
    for (int m = 0; m < M; ++m)
      if (!grid.is_vertex[m]) zmax = std::max(zmax, double(zt[m]));
    double zsum = 0;
    for (int m = 0; m < M; ++m) {
      double e = std::exp((grid.is_vertex[m] ? 0.0 : double(zt[m])) - zmax);
      w[m] = T(e);
      zsum += e;
    }
    double vx = 0, vy = 0, vz = 0;
    for (int m = 0; m < M; ++m) {
      w[m] = T(w[m] / zsum);
      vx += double(w[m]) * grid.coords[m].x;
      vy += double(w[m]) * grid.coords[m].y;
      vz += double(w[m]) * grid.coords[m].z;
    }
    v.ptr()[t * 3 + 0] = T(vx);
    v.ptr()[t * 3 + 1] = T(vy);
    v.ptr()[t * 3 + 2] = T(vz);
  }
  if (prob_out) *prob_out = op->prob;
  return emplace(std::move(v), needs_grad(x), std::move(op));
}

template <typename T>
int Tape<T>::mse_loss(int v, const Tensor<T>& target) {
  const Tensor<T>& est = val(v);
  if (!est.same_shape(const_cast<Tensor<T>&>(target)))
    throw std::invalid_argument("mse_loss: estimate/target shape mismatch");
  auto op = std::make_unique<ops::MseLoss<T>>();
  op->v = v;
  op->target = target;
  double acc = 0;
  for (int64_t i = 0; i < est.numel(); ++i) {
    double d = est.data[i] - target.data[i];
    acc += d * d;
  }
  Tensor<T> loss({1});
  loss.data[0] = T(acc / double(est.numel()));
  return emplace(std::move(loss), needs_grad(v), std::move(op));
}

// ---- Adam ------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig cfg;
  int64_t step = 0;
  std::vector<Tensor<T>> m, v;

  void init(const std::vector<Tensor<T>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.push_back(Tensor<T>(p->shape));
      v.push_back(Tensor<T>(p->shape));
    }
  }
};

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& st) {
  if (st.m.size() != params.size()) st.init(params);
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: gradient count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]))
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (T g : grads[i].data)
      if (!std::isfinite(double(g)))
        throw std::runtime_error("adam_step: non-finite gradient, aborting step");
  }
  st.step += 1;
  double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  double bc1 = 1.0 - std::pow(b1, double(st.step));
  double bc2 = 1.0 - std::pow(b2, double(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i].ptr();
    T* m = st.m[i].ptr();
    T* v = st.v[i].ptr();
    int64_t n = params[i]->numel();
    for (int64_t k = 0; k < n; ++k) {
      double mk = b1 * m[k] + (1 - b1) * g[k];
      double vk = b2 * v[k] + (1 - b2) * double(g[k]) * g[k];
      m[k] = T(mk);
      v[k] = T(vk);
      double mhat = mk / bc1, vhat = vk / bc2;
      p[k] = T(p[k] - st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps));
    }
  }
}

}  // namespace icotrack
