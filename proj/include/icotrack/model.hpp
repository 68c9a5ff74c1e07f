#pragma once

// DOA network: [r-1 downsampling stages of 2 conv units + pooling] followed
// by 5 conv units at resolution 1, orientation max, vertex-zeroed logits and
// a softmax-weighted coordinate sum.  A conv unit is icosahedral conv ->
// causal temporal conv -> layer norm -> ReLU; the final unit narrows the
// temporal conv to one channel and drops the norm and activation.

#include <cstdio>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "icotrack/grad.hpp"
#include "icotrack/ico_grid.hpp"
#include "icotrack/ico_nn.hpp"
#include "icotrack/rng.hpp"
#include "icotrack/srp.hpp"
#include "icotrack/tensor.hpp"

namespace icotrack {

struct ModelConfig {
  int r = 1;
  int channels = 32;
  static constexpr int kTemporalKernel = 5;
  static constexpr int kFinalUnits = 5;

  int n_down() const { return r - 1; }
  int n_units() const { return 2 * n_down() + kFinalUnits; }
  void validate() const {
    if (r < 1) throw std::invalid_argument("model: resolution must be >= 1");
    if (channels < 1) throw std::invalid_argument("model: channels must be >= 1");
  }
};

template <typename T>
struct ConvUnit {
  Tensor<T> hex_w, hex_b;  // [c_out][c_in][o_in][7], [c_out]
  Tensor<T> tmp_w, tmp_b;  // [t_out][c_out][5], [t_out]
  Tensor<T> ln_scale, ln_bias;
  bool has_ln = true;
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<ConvUnit<T>> units;

  template <typename F>
  void for_each_tensor(F&& f) {
    for (size_t u = 0; u < units.size(); ++u) {
      std::string p = "u" + std::to_string(u) + ".";
      f(p + "hex.w", units[u].hex_w);
      f(p + "hex.b", units[u].hex_b);
      f(p + "tmp.w", units[u].tmp_w);
      f(p + "tmp.b", units[u].tmp_b);
      if (units[u].has_ln) {
        f(p + "ln.scale", units[u].ln_scale);
        f(p + "ln.bias", units[u].ln_bias);
      }
    }
  }

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for_each_tensor([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
  }
};

inline int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const int C = cfg.channels, K = ModelConfig::kTemporalKernel;
  int64_t total = 0;
  for (int u = 0; u < cfg.n_units(); ++u) {
    bool first = u == 0;
    bool last = u == cfg.n_units() - 1;
    int ci = first ? 1 : C, oi = first ? 1 : 6;
    int t_out = last ? 1 : C;
    total += int64_t(C) * ci * oi * 7 + C;  // hexagonal kernel + bias
    total += int64_t(t_out) * C * K + t_out;
    if (!last) total += 2 * C;  // layer norm scale + bias
  }
  return total;
}

struct ReceptiveField {
  int frames;
  double seconds;
};

inline ReceptiveField receptive_field(const ModelConfig& cfg, const FramingConfig& framing,
                                      double fs) {
  ReceptiveField rf;
  rf.frames = 1 + 4 * cfg.n_units();
  rf.seconds = double(rf.frames - 1) * framing.hop / fs + framing.frame_len / fs;
  return rf;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams<T> p;
  p.cfg = cfg;
  std::mt19937_64 rng(splitmix64(seed ^ 0x1c0d0a11ULL));
  auto uniform_init = [&](Tensor<T>& t, int fan_in) {
    double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : t.data) v = T(u(rng));
  };
  const int C = cfg.channels, K = ModelConfig::kTemporalKernel;
  for (int u = 0; u < cfg.n_units(); ++u) {
    bool first = u == 0, last = u == cfg.n_units() - 1;
    int ci = first ? 1 : C, oi = first ? 1 : 6;
    int t_out = last ? 1 : C;
    ConvUnit<T> unit;
    unit.hex_w = Tensor<T>({C, ci, oi, 7});
    unit.hex_b = Tensor<T>({C});
    uniform_init(unit.hex_w, 7 * ci * oi);
    unit.tmp_w = Tensor<T>({t_out, C, K});
    unit.tmp_b = Tensor<T>({t_out});
    uniform_init(unit.tmp_w, K * C);
    unit.has_ln = !last;
    if (unit.has_ln) {
      unit.ln_scale = Tensor<T>({C});
      unit.ln_bias = Tensor<T>({C});
      unit.ln_scale.fill(T(1));
    }
    p.units.push_back(std::move(unit));
  }
  return p;
}

// Grids and gather plans for every resolution the model touches.
struct ModelPlans {
  int top_r = 0;
  std::vector<IcoGrid> grids;       // [0] = r, [1] = r-1, ... down to 1
  std::vector<GatherPlan> pad1;  // scalar pad plan per level
  std::vector<GatherPlan> pad6;
  std::vector<GatherPlan> pool6;  // level i -> i+1 (finer to coarser)

  const IcoGrid& grid(int level) const { return grids[top_r - level]; }

  static ModelPlans build(int r) {
    ModelPlans mp;
    mp.top_r = r;
    for (int level = r; level >= 1; --level) {
      mp.grids.push_back(build_grid(level));
      const IcoGrid& g = mp.grids.back();
      mp.pad1.push_back(build_pad_plan(g, 1));
      mp.pad6.push_back(build_pad_plan(g, 6));
    }
    for (size_t i = 0; i + 1 < mp.grids.size(); ++i)
      mp.pool6.push_back(build_pool_plan(mp.grids[i], mp.grids[i + 1], 6));
    return mp;
  }
};

struct DoaEstimate {
  std::vector<double> v;           // [T][3]
  std::vector<double> confidence;  // |v| per frame
  int frames() const { return int(confidence.size()); }
  Vec3 dir(int t) const { return {v[3 * t], v[3 * t + 1], v[3 * t + 2]}; }
};

template <typename T>
struct ForwardResult {
  int loss_node = -1;
  int est_node = -1;
  Tensor<T> prob;  // [T][cells at r=1]
};

template <typename T>
void check_finite(const Tensor<T>& x, const char* where) {
  double acc = 0;
  for (T v : x.data) acc += double(v);
  if (!std::isfinite(acc)) {
    for (int64_t i = 0; i < x.numel(); ++i)
      if (!std::isfinite(double(x.data[i])))
        throw std::runtime_error(std::string("non-finite activation in ") + where +
                                 " at flat index " + std::to_string(i));
    throw std::runtime_error(std::string("non-finite activation in ") + where);
  }
}

// Records the full forward pass on the tape.  `maps` is [T][1][1][cells_r].
// Returns the DOA estimate node; if `target` is non-null an MSE loss node is
// appended.
template <typename T>
ForwardResult<T> forward_tape(Tape<T>& tape, ModelParams<T>& params, const ModelPlans& plans,
                              Tensor<T> maps, const Tensor<T>* target,
                              bool train_params = true) {
  const ModelConfig& cfg = params.cfg;
  cfg.validate();
  if (maps.shape[3] != plans.grid(cfg.r).n_cells)
    throw std::invalid_argument("forward: map resolution does not match the model");

  std::vector<std::vector<int>> unit_param_ids;
  for (auto& unit : params.units) {
    std::vector<int> ids;
    ids.push_back(tape.leaf(unit.hex_w, train_params));
    ids.push_back(tape.leaf(unit.hex_b, train_params));
    ids.push_back(tape.leaf(unit.tmp_w, train_params));
    ids.push_back(tape.leaf(unit.tmp_b, train_params));
    if (unit.has_ln) {
      ids.push_back(tape.leaf(unit.ln_scale, train_params));
      ids.push_back(tape.leaf(unit.ln_bias, train_params));
    }
    unit_param_ids.push_back(std::move(ids));
  }

  int x = tape.leaf(std::move(maps), false);
  int level = cfg.r;
  int u = 0;
  auto conv_unit = [&](int lvl, bool last) {
    int li = plans.top_r - lvl;
    const auto& ids = unit_param_ids[u];
    bool first = u == 0;
    const GatherPlan& pad = first ? plans.pad1[li] : plans.pad6[li];
    x = tape.ico_conv(x, ids[0], ids[1], plans.grid(lvl), pad);
    check_finite(tape.val(x), "ico_conv");
    x = tape.temporal_conv(x, ids[2], ids[3]);
    check_finite(tape.val(x), "temporal_conv");
    if (!last) {
      x = tape.layer_norm(x, ids[4], ids[5]);
      x = tape.relu(x);
      check_finite(tape.val(x), "layer_norm/relu");
    }
    ++u;
  };

  for (int d = 0; d < cfg.n_down(); ++d) {
    conv_unit(level, false);
    conv_unit(level, false);
    int li = plans.top_r - level;
    x = tape.pool(x, plans.pool6[li], 6, plans.grid(level - 1).n_cells);
    --level;
  }
  for (int i = 0; i < ModelConfig::kFinalUnits; ++i)
    conv_unit(1, i == ModelConfig::kFinalUnits - 1);

  x = tape.orient_max(x);
  ForwardResult<T> res;
  res.est_node = tape.soft_argmax(x, plans.grid(1), &res.prob);
  check_finite(tape.val(res.est_node), "soft_argmax");
  if (target) res.loss_node = tape.mse_loss(res.est_node, *target);
  return res;
}

template <typename T>
Tensor<T> maps_to_tensor(const SrpMapSeq& seq) {
  Tensor<T> maps({seq.T, 1, 1, seq.n_cells});
  for (int64_t i = 0; i < maps.numel(); ++i) maps.data[i] = T(seq.maps[i]);
  return maps;
}

// Inference-only forward.
template <typename T>
DoaEstimate forward(const SrpMapSeq& seq, ModelParams<T>& params, const ModelPlans& plans,
                    Tensor<T>* prob_out = nullptr) {
  Tape<T> tape;
  ForwardResult<T> r =
      forward_tape<T>(tape, params, plans, maps_to_tensor<T>(seq), nullptr, false);
  const Tensor<T>& v = tape.val(r.est_node);
  DoaEstimate est;
  int TT = v.shape[0];
  est.v.resize(size_t(TT) * 3);
  est.confidence.resize(TT);
  for (int t = 0; t < TT; ++t) {
    for (int k = 0; k < 3; ++k) est.v[3 * t + k] = double(v.ptr()[3 * t + k]);
    est.confidence[t] = est.dir(t).norm();
  }
  if (prob_out) *prob_out = r.prob;
  return est;
}

// ---- checkpoint format -------------------------------------------------
// Line 1: magic "ICODOA1".  Line 2: tensor count.  Then one line per tensor
// ("name rank d0 d1 ..."), then the raw little-endian float32 payload in
// header order.

template <typename T>
void save_checkpoint(ModelParams<T>& params, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  int count = 0;
  params.for_each_tensor([&](const std::string&, Tensor<T>&) { ++count; });
  std::fprintf(f, "ICODOA1\n%d\n", count);
  params.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
    std::fprintf(f, "%s %d", name.c_str(), int(t.shape.size()));
    for (int d : t.shape) std::fprintf(f, " %d", d);
    std::fprintf(f, "\n");
  });
  params.for_each_tensor([&](const std::string&, Tensor<T>& t) {
    std::vector<float> buf(t.data.begin(), t.data.end());
    std::fwrite(buf.data(), sizeof(float), buf.size(), f);
  });
  std::fclose(f);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[16] = {};
  if (!std::fgets(magic, sizeof magic, f) || std::strncmp(magic, "ICODOA1", 7) != 0) {
    std::fclose(f);
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  int count = 0;
  if (std::fscanf(f, "%d\n", &count) != 1 || count <= 0) {
    std::fclose(f);
    throw std::runtime_error("bad checkpoint header in " + path);
  }
  struct Entry {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Entry> entries;
  for (int i = 0; i < count; ++i) {
    char name[128];
    int rank;
    if (std::fscanf(f, "%127s %d", name, &rank) != 2 || rank < 1 || rank > 8) {
      std::fclose(f);
      throw std::runtime_error("bad checkpoint tensor header in " + path);
    }
    Entry e;
    e.name = name;
    for (int d = 0; d < rank; ++d) {
      int v;
      if (std::fscanf(f, "%d", &v) != 1) {
        std::fclose(f);
        throw std::runtime_error("bad checkpoint dims in " + path);
      }
      e.shape.push_back(v);
    }
    entries.push_back(std::move(e));
  }
  std::fgetc(f);  // newline before payload

  // Infer the architecture from the unit count and the first tensors.
  int units = 0;
  for (auto& e : entries)
    if (e.name.rfind("hex.w") != std::string::npos) ++units;
  ModelConfig cfg;
  cfg.channels = entries[0].shape[0];
  cfg.r = (units - ModelConfig::kFinalUnits) / 2 + 1;
  if (cfg.n_units() != units) {
    std::fclose(f);
    throw std::runtime_error("checkpoint unit count does not fit the architecture");
  }
  ModelParams<T> params = init_params<T>(cfg, 0);
  size_t idx = 0;
  bool ok = true;
  params.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
    if (idx >= entries.size() || entries[idx].name != name || entries[idx].shape != t.shape) {
      ok = false;
      ++idx;
      return;
    }
    std::vector<float> buf(t.numel());
    if (std::fread(buf.data(), sizeof(float), buf.size(), f) != buf.size()) {
      ok = false;
      return;
    }
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = T(buf[i]);
    ++idx;
  });
  std::fclose(f);
  if (!ok) throw std::runtime_error("checkpoint layout mismatch in " + path);
  return params;
}

}  // namespace icotrack
