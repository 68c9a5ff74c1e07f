#include "icotrack/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "icotrack/audio_io.hpp"
#include "icotrack/rng.hpp"

namespace icotrack {
namespace {

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        next.store(n);  // stop handing out work
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::string traj_dir_name(const std::string& base, int idx) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "/traj_%05d", idx);
  return base + buf;
}

// A rendered trajectory ready for the network.
struct PreparedTraj {
  SrpMapSeq maps;
  std::vector<Vec3> gt;
  std::vector<uint8_t> active;
};

PreparedTraj prepare_from_job(const SimJob& job, const MicArray& array, const IcoGrid& grid,
                              const TdoaTable& table, const FramingConfig& fcfg) {
  auto source = synth_source(job.seed, job.duration, job.fs);
  auto audio = render_trajectory(job, array, fcfg, source);
  PreparedTraj p;
  p.maps = compute_map_seq(audio, array, grid, table, fcfg, GccConfig{}, VadConfig{});
  p.gt = ground_truth_doa(job, p.maps.T, fcfg);
  p.active = source_active_flags(source, fcfg);
  return p;
}

PreparedTraj prepare_from_dir(const std::string& dir, const MicArray& array, const IcoGrid& grid,
                              const TdoaTable& table, const FramingConfig& fcfg) {
  TrajectoryData td = read_trajectory_dir(dir);
  if (td.audio.size() != array.positions.size())
    throw std::runtime_error("dataset channel count does not match the array: " + dir);
  PreparedTraj p;
  p.maps = compute_map_seq(td.audio, array, grid, table, fcfg, GccConfig{}, VadConfig{});
  if (int(td.gt.size()) != p.maps.T)
    throw std::runtime_error("gt.csv frame count mismatch in " + dir);
  p.gt = td.gt;
  p.active = td.active;
  return p;
}

Tensor<float> gt_tensor(const std::vector<Vec3>& gt) {
  Tensor<float> t({int(gt.size()), 3});
  for (size_t i = 0; i < gt.size(); ++i) {
    t.ptr()[3 * i + 0] = float(gt[i].x);
    t.ptr()[3 * i + 1] = float(gt[i].y);
    t.ptr()[3 * i + 2] = float(gt[i].z);
  }
  return t;
}

double eval_rmsae(const PreparedTraj& p, ModelParams<float>& params, const ModelPlans& plans,
                  const EvalConfig& cfg) {
  DoaEstimate est = forward(p.maps, params, plans);
  std::vector<double> errs(est.frames());
  for (int t = 0; t < est.frames(); ++t) errs[t] = angular_error_deg(est.dir(t), p.gt[t]);
  return rmsae_deg(errs, p.active, cfg);
}

// Adam state sidecar for bit-exact resume.
void save_train_state(const std::string& path, const AdamState<float>& st, int next_epoch) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write training state: " + path);
  std::fprintf(f, "ICODOA1-STATE\n%d %lld %zu\n", next_epoch, (long long)st.step, st.m.size());
  for (const auto& t : st.m) std::fwrite(t.data.data(), sizeof(float), t.data.size(), f);
  for (const auto& t : st.v) std::fwrite(t.data.data(), sizeof(float), t.data.size(), f);
  std::fclose(f);
}

bool load_train_state(const std::string& path, AdamState<float>& st, int& next_epoch) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return false;
  char magic[32], header[96];
  if (!std::fgets(magic, sizeof magic, f) || std::string(magic) != "ICODOA1-STATE\n" ||
      !std::fgets(header, sizeof header, f)) {
    std::fclose(f);
    throw std::runtime_error("bad training state file: " + path);
  }
  long long step;
  size_t count;
  // header line parsed separately so the binary payload is never touched
  if (std::sscanf(header, "%d %lld %zu", &next_epoch, &step, &count) != 3 ||
      count != st.m.size()) {
    std::fclose(f);
    throw std::runtime_error("training state does not match the model: " + path);
  }
  st.step = step;
  for (auto& t : st.m)
    if (std::fread(t.data.data(), sizeof(float), t.data.size(), f) != t.data.size())
      throw std::runtime_error("short training state: " + path);
  for (auto& t : st.v)
    if (std::fread(t.data.data(), sizeof(float), t.data.size(), f) != t.data.size())
      throw std::runtime_error("short training state: " + path);
  std::fclose(f);
  return true;
}

}  // namespace

std::vector<std::string> list_trajectory_dirs(const std::string& data_dir) {
  std::vector<std::string> dirs;
  for (const auto& e : std::filesystem::directory_iterator(data_dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "audio.wav"))
      dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no trajectories found in " + data_dir);
  return dirs;
}

void generate_dataset(const GenDataOptions& opt, const MicArray& array,
                      const FramingConfig& fcfg) {
  std::filesystem::create_directories(opt.out_dir);
  parallel_for(opt.n_traj, opt.threads, [&](int i) {
    SceneRanges r = opt.ranges;
    SimJob job = sample_scene(derive_seed(opt.seed, 100, uint64_t(i)), r);
    write_trajectory_dir(traj_dir_name(opt.out_dir, i), job, array, fcfg, opt.pcm16);
  });
}

SrpMapSeq compute_maps_for(const Channels& audio, const MicArray& array, int r,
                           const FramingConfig& fcfg) {
  IcoGrid grid = build_grid(r);
  TdoaTable table = tdoa_table(array, grid);
  return compute_map_seq(audio, array, grid, table, fcfg, GccConfig{}, VadConfig{});
}

std::vector<Vec3> srp_argmax_estimates(const SrpMapSeq& seq, const IcoGrid& grid) {
  std::vector<Vec3> out(seq.T);
  for (int t = 0; t < seq.T; ++t) {
    const double* m = seq.frame(t);
    int arg = 0;
    for (int c = 1; c < grid.n_cells; ++c)
      if (m[c] > m[arg]) arg = c;
    out[t] = grid.coords[arg];
  }
  return out;
}

TrainResult run_training(const TrainOptions& opt, const MicArray& array,
                         const FramingConfig& fcfg) {
  if (opt.epochs < 1 || opt.batch < 1) throw std::invalid_argument("train: bad epochs/batch");
  ModelConfig cfg;
  cfg.r = opt.r;
  cfg.channels = opt.channels;
  cfg.validate();
  ModelPlans plans = ModelPlans::build(cfg.r);
  const IcoGrid& grid = plans.grid(cfg.r);
  TdoaTable table = tdoa_table(array, grid);

  ModelParams<float> params = init_params<float>(cfg, derive_seed(opt.seed, 7));
  AdamState<float> st;
  st.cfg.lr = opt.lr;
  st.init(params.tensors());
  int start_epoch = 0;
  if (opt.resume) {
    params = load_checkpoint<float>(opt.ckpt_path);
    st.init(params.tensors());
    if (!load_train_state(opt.ckpt_path + ".state", st, start_epoch))
      throw std::runtime_error("resume requested but no state next to " + opt.ckpt_path);
  }

  // Fixed dataset mode loads everything up front; fresh mode re-renders per
  // epoch from epoch-indexed seeds.
  const bool fresh = opt.data_dir.empty();
  std::vector<PreparedTraj> fixed_set;
  if (!fresh) {
    auto dirs = list_trajectory_dirs(opt.data_dir);
    fixed_set.resize(dirs.size());
    parallel_for(int(dirs.size()), opt.threads, [&](int i) {
      fixed_set[i] = prepare_from_dir(dirs[i], array, grid, table, fcfg);
    });
  }

  std::vector<PreparedTraj> holdout;
  if (fresh && opt.holdout > 0) {
    holdout.resize(opt.holdout);
    parallel_for(opt.holdout, opt.threads, [&](int i) {
      SceneRanges r = opt.ranges;
      r.snr_min = r.snr_max = opt.fixed_snr;
      SimJob job = sample_scene(derive_seed(opt.seed, 900, uint64_t(i)), r);
      holdout[i] = prepare_from_job(job, array, grid, table, fcfg);
    });
  }

  std::FILE* log = nullptr;
  if (!opt.log_path.empty()) {
    log = std::fopen(opt.log_path.c_str(), opt.resume ? "a" : "w");
    if (!log) throw std::runtime_error("cannot open training log: " + opt.log_path);
    if (!opt.resume) std::fprintf(log, "epoch,loss,holdout_rmsae,lr,snr_phase\n");
  }

  TrainResult result;
  auto param_ptrs = params.tensors();
  for (int epoch = start_epoch; epoch < opt.epochs; ++epoch) {
    bool fixed_phase = epoch < opt.fixed_snr_epochs;

    std::vector<PreparedTraj> fresh_set;
    const std::vector<PreparedTraj>* epoch_set = &fixed_set;
    if (fresh) {
      fresh_set.resize(opt.n_traj);
      parallel_for(opt.n_traj, opt.threads, [&](int i) {
        SceneRanges r = opt.ranges;
        if (fixed_phase) r.snr_min = r.snr_max = opt.fixed_snr;
        SimJob job = sample_scene(derive_seed(opt.seed, 10 + uint64_t(epoch), uint64_t(i)), r);
        fresh_set[i] = prepare_from_job(job, array, grid, table, fcfg);
      });
      epoch_set = &fresh_set;
    }

    const auto& set = *epoch_set;
    double epoch_loss = 0;
    int batches = 0;
    for (size_t b0 = 0; b0 < set.size(); b0 += opt.batch) {
      size_t b1 = std::min(set.size(), b0 + opt.batch);
      int bn = int(b1 - b0);
      std::vector<std::vector<Tensor<float>>> item_grads(bn);
      std::vector<double> item_loss(bn, 0.0);
      parallel_for(bn, opt.threads, [&](int bi) {
        Tape<float> tape;
        const PreparedTraj& item = set[b0 + bi];
        Tensor<float> target = gt_tensor(item.gt);
        auto res =
            forward_tape<float>(tape, params, plans, maps_to_tensor<float>(item.maps), &target);
        item_loss[bi] = tape.val(res.loss_node).data[0];
        if (!std::isfinite(item_loss[bi]))
          throw std::runtime_error("non-finite loss on trajectory index " +
                                   std::to_string(b0 + bi));
        tape.backward(res.loss_node);
        for (size_t p = 0; p < param_ptrs.size(); ++p)
          item_grads[bi].push_back(tape.grad(int(p)));
      });
      // Deterministic reduction in item order, averaged over the batch.
      std::vector<Tensor<float>> grads;
      for (size_t p = 0; p < param_ptrs.size(); ++p) {
        Tensor<float> g(param_ptrs[p]->shape);
        for (int bi = 0; bi < bn; ++bi)
          for (int64_t k = 0; k < g.numel(); ++k) g.data[k] += item_grads[bi][p].data[k];
        for (int64_t k = 0; k < g.numel(); ++k) g.data[k] /= float(bn);
        grads.push_back(std::move(g));
      }
      adam_step(param_ptrs, grads, st);
      for (int bi = 0; bi < bn; ++bi) epoch_loss += item_loss[bi];
      ++batches;
    }
    epoch_loss /= double(set.size());
    result.epoch_loss.push_back(epoch_loss);
    result.final_loss = epoch_loss;

    double ho = -1;
    if (!holdout.empty()) {
      double acc = 0;
      for (auto& h : holdout) acc += eval_rmsae(h, params, plans, opt.eval_cfg);
      ho = acc / double(holdout.size());
      result.final_holdout_rmsae = ho;
    }
    if (log) {
      std::fprintf(log, "%d,%.8g,%.6g,%.8g,%s\n", epoch, epoch_loss, ho, st.cfg.lr,
                   fixed_phase ? "fixed" : "random");
      std::fflush(log);
    }
    save_checkpoint(params, opt.ckpt_path);
    save_train_state(opt.ckpt_path + ".state", st, epoch + 1);
  }
  if (log) std::fclose(log);
  return result;
}

EvalResult run_eval(const EvalOptions& opt, const MicArray& array, const FramingConfig& fcfg) {
  ModelParams<float> params = load_checkpoint<float>(opt.ckpt_path);
  ModelPlans plans = ModelPlans::build(params.cfg.r);
  const IcoGrid& grid = plans.grid(params.cfg.r);
  TdoaTable table = tdoa_table(array, grid);

  auto dirs = list_trajectory_dirs(opt.data_dir);
  EvalResult res;
  res.record.seed = 0;
  res.record.per_trajectory.resize(dirs.size());
  res.baseline.resize(dirs.size());
  res.record.config = {"ckpt=" + opt.ckpt_path, "data=" + opt.data_dir,
                       "skip_frames=" + std::to_string(opt.cfg.skip_initial_frames),
                       std::string("exclude_silent=") + (opt.cfg.exclude_silent ? "1" : "0")};

  parallel_for(int(dirs.size()), opt.threads, [&](int i) {
    PreparedTraj p = prepare_from_dir(dirs[i], array, grid, table, fcfg);
    res.record.per_trajectory[i] = eval_rmsae(p, params, plans, opt.cfg);
    auto base = srp_argmax_estimates(p.maps, grid);
    std::vector<double> errs(p.maps.T);
    for (int t = 0; t < p.maps.T; ++t) errs[t] = angular_error_deg(base[t], p.gt[t]);
    res.baseline[i] = rmsae_deg(errs, p.active, opt.cfg);
  });

  if (!opt.out_csv.empty()) res.record.write_csv(opt.out_csv, res.baseline);
  return res;
}

void run_inference(const std::string& ckpt_path, const Channels& audio, const MicArray& array,
                   const FramingConfig& fcfg, const std::string& out_csv) {
  ModelParams<float> params = load_checkpoint<float>(ckpt_path);
  ModelPlans plans = ModelPlans::build(params.cfg.r);
  SrpMapSeq seq = compute_maps_for(audio, array, params.cfg.r, fcfg);
  DoaEstimate est = forward(seq, params, plans);

  std::FILE* f = std::fopen(out_csv.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write inference output: " + out_csv);
  std::fprintf(f, "frame,vx,vy,vz,confidence,azimuth_deg,elevation_deg\n");
  for (int t = 0; t < est.frames(); ++t) {
    Vec3 v = est.dir(t);
    double az = 0, el = 0;
    if (est.confidence[t] > 1e-9) {
      Vec3 u = v.normalized();
      az = std::atan2(u.y, u.x) * 180.0 / M_PI;
      el = std::asin(std::clamp(u.z, -1.0, 1.0)) * 180.0 / M_PI;
    }
    std::fprintf(f, "%d,%.8g,%.8g,%.8g,%.8g,%.6g,%.6g\n", t, v.x, v.y, v.z, est.confidence[t],
                 az, el);
  }
  std::fclose(f);
}

}  // namespace icotrack
