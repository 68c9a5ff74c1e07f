// Command-line front end: dataset generation, map computation, training,
// evaluation, inference, and built-in self tests.

#include <CLI11.hpp>
#include <clocale>
#include <cstdio>
#include <random>
#include <string>

#include "icotrack/audio_io.hpp"
#include "icotrack/eval.hpp"
#include "icotrack/grad.hpp"
#include "icotrack/harness.hpp"
#include "icotrack/model.hpp"
#include "icotrack/rng.hpp"

using namespace icotrack;

namespace {

MicArray load_array_or_default(const std::string& path, double fs) {
  return path.empty() ? head_array_12() : load_array_csv(path, fs);
}

// ---- self test suites --------------------------------------------------

int fail_count = 0;
void report(bool ok, const std::string& name, const std::string& detail = "") {
  if (ok)
    std::printf("ok   %s\n", name.c_str());
  else {
    std::printf("FAIL %s%s%s\n", name.c_str(), detail.empty() ? "" : ": ", detail.c_str());
    ++fail_count;
  }
}

void selftest_grid() {
  const int cells[5] = {0, 40, 160, 640, 2560};
  for (int r = 1; r <= 4; ++r) {
    IcoGrid g = build_grid(r);
    report(g.n_cells == cells[r], "grid cells r=" + std::to_string(r));
  }
  IcoGrid g = build_grid(2);
  bool sym = true, valence = true;
  int n_vertex = 0;
  for (int c = 0; c < g.n_cells; ++c) {
    auto nb = g.neighbor_cells(c);
    if (g.is_vertex[c]) {
      ++n_vertex;
      valence &= nb.size() == 5;
    }
    for (int n : nb) {
      auto back = g.neighbor_cells(n);
      sym &= std::find(back.begin(), back.end(), c) != back.end();
    }
  }
  report(sym, "grid neighbor symmetry");
  report(valence && n_vertex == 10, "grid vertex valence");
  Vec3 sum{};
  for (const Vec3& p : g.coords) sum += p;
  report(sum.norm() < 1e-9, "grid coordinate balance");
}

void selftest_equivariance() {
  for (int r : {1, 2}) {
    ModelPlans plans = ModelPlans::build(r);
    RotationSet rs = rotation_set(plans.grid(r));
    ModelConfig cfg;
    cfg.r = r;
    cfg.channels = 8;
    auto params = init_params<float>(cfg, 42 + r);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(-1, 1);
    Tensor<float> maps({2, 1, 1, plans.grid(r).n_cells});
    for (auto& v : maps.data) v = u(rng);

    auto run = [&](const Tensor<float>& x) {
      Tape<float> tape;
      auto res = forward_tape<float>(tape, params, plans, x, nullptr, false);
      return tape.val(res.est_node);
    };
    Tensor<float> v0 = run(maps);
    double worst = 0;
    for (int gi = 0; gi < 60; gi += 7) {
      Tensor<float> rot(maps.shape);
      const auto& perm = rs.level_perm(gi, r);
      for (int t = 0; t < 2; ++t)
        for (int c = 0; c < plans.grid(r).n_cells; ++c)
          rot.ptr()[t * plans.grid(r).n_cells + perm[c]] =
              maps.ptr()[t * plans.grid(r).n_cells + c];
      Tensor<float> v1 = run(rot);
      for (int t = 0; t < 2; ++t) {
        Vec3 want = rs.rot[gi].apply(
            {v0.ptr()[3 * t], v0.ptr()[3 * t + 1], v0.ptr()[3 * t + 2]});
        worst = std::max(worst, std::abs(v1.ptr()[3 * t] - want.x));
        worst = std::max(worst, std::abs(v1.ptr()[3 * t + 1] - want.y));
        worst = std::max(worst, std::abs(v1.ptr()[3 * t + 2] - want.z));
      }
    }
    report(worst < 1e-4, "doa equivariance r=" + std::to_string(r),
           "max deviation " + std::to_string(worst));
  }
}

void selftest_gradients() {
  ModelPlans plans = ModelPlans::build(1);
  ModelConfig cfg;
  cfg.r = 1;
  cfg.channels = 2;
  auto params = init_params<double>(cfg, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor<double> maps({2, 1, 1, plans.grid(1).n_cells});
  for (auto& v : maps.data) v = u(rng);
  Tensor<double> target({2, 3});
  for (int t = 0; t < 2; ++t) {
    Vec3 g = Vec3{u(rng), u(rng), u(rng)}.normalized();
    target.ptr()[3 * t] = g.x;
    target.ptr()[3 * t + 1] = g.y;
    target.ptr()[3 * t + 2] = g.z;
  }
  Tape<double> tape;
  auto res = forward_tape<double>(tape, params, plans, maps, &target);
  tape.backward(res.loss_node);
  auto tensors = params.tensors();
  auto loss_at = [&]() {
    Tape<double> t2;
    return t2.val(forward_tape<double>(t2, params, plans, maps, &target).loss_node).data[0];
  };
  std::mt19937_64 pick(9);
  int bad = 0, n = 0;
  for (size_t pi = 0; pi < tensors.size(); ++pi) {
    // spot-check a few entries per tensor
    for (int s = 0; s < 3; ++s) {
      int64_t i = int64_t(pick() % uint64_t(tensors[pi]->numel()));
      double keep = tensors[pi]->data[i];
      const double h = 1e-5;
      tensors[pi]->data[i] = keep + h;
      double fp = loss_at();
      tensors[pi]->data[i] = keep - h;
      double fm = loss_at();
      tensors[pi]->data[i] = keep;
      double numeric = (fp - fm) / (2 * h);
      double analytic = tape.grad(int(pi)).data[i];
      ++n;
      if (std::abs(analytic - numeric) >
          1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-8)
        ++bad;
    }
  }
  report(bad == 0, "gradient spot checks",
         std::to_string(bad) + " of " + std::to_string(n) + " failed");
}

void selftest_srp() {
  const int L = 256;
  FramingConfig f;
  f.frame_len = L;
  f.hop = L * 3 / 4;
  f.fft_len = L;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 0.5);
  Channels frame(2, std::vector<double>(L));
  for (double& v : frame[0]) v = g(rng);
  const int d = 5;
  for (int t = 0; t < L; ++t) frame[1][t] = frame[0][((t - d) % L + L) % L];
  auto gcc = gcc_phat(frame, f, GccConfig{});
  int peak = 0;
  const double* r01 = gcc.pair(0, 1);
  for (int t = 1; t < gcc.len; ++t)
    if (r01[t] > r01[peak]) peak = t;
  int peak_lag = peak > gcc.len / 2 ? peak - gcc.len : peak;
  report(peak_lag == -d * gcc.upsample, "gcc peak at the negative shift");
  bool bound = true, anti = true;
  for (int t = 0; t < L; ++t) {
    bound &= std::abs(r01[t]) <= 1.0 + 1e-6;
    anti &= std::abs(gcc.at(0, 1, t) - gcc.at(1, 0, -t)) < 1e-9;
  }
  report(bound, "gcc magnitude bound");
  report(anti, "gcc antisymmetry");

  IcoGrid grid = build_grid(1);
  std::vector<double> m(grid.n_cells);
  std::uniform_real_distribution<double> um(-2, 5);
  for (int c = 0; c < grid.n_cells; ++c) m[c] = grid.is_vertex[c] ? 0.0 : um(rng);
  auto nm = normalize_map(m, grid);
  double mean = 0, mx = 0;
  int cnt = 0;
  for (int c = 0; c < grid.n_cells; ++c)
    if (!grid.is_vertex[c]) {
      mean += nm[c];
      mx = std::max(mx, std::abs(nm[c]));
      ++cnt;
    }
  report(std::abs(mean / cnt) < 1e-12 && std::abs(mx - 1.0) < 1e-12, "map normalization");
}

}  // namespace

int main(int argc, char** argv) {
  std::setlocale(LC_NUMERIC, "C");
  CLI::App app{"icotrack: sound-source DOA tracking on icosahedral maps"};
  app.require_subcommand(1);

  FramingConfig fcfg;

  // selftest
  auto* st = app.add_subcommand("selftest", "run built-in consistency checks");
  std::string suite = "all";
  st->add_option("--suite", suite, "grid|equivariance|gradients|srp|all");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "simulate a trajectory dataset");
  GenDataOptions gopt;
  std::string gen_array;
  gen->add_option("--out", gopt.out_dir, "output directory")->required();
  gen->add_option("--n-traj", gopt.n_traj, "number of trajectories");
  gen->add_option("--duration", gopt.ranges.duration, "seconds per trajectory");
  gen->add_option("--t60-min", gopt.ranges.t60_min);
  gen->add_option("--t60-max", gopt.ranges.t60_max);
  gen->add_option("--snr-min", gopt.ranges.snr_min);
  gen->add_option("--snr-max", gopt.ranges.snr_max);
  gen->add_option("--seed", gopt.seed);
  gen->add_option("--threads", gopt.threads);
  gen->add_option("--array", gen_array, "microphone geometry csv");
  gen->add_flag("--pcm16", gopt.pcm16, "write 16-bit audio instead of float32");

  // map
  auto* mp = app.add_subcommand("map", "steered power maps for one recording");
  std::string map_wav, map_array, map_out, map_format = "csv";
  int map_r = 2;
  mp->add_option("--wav", map_wav)->required();
  mp->add_option("--array", map_array, "microphone geometry csv");
  mp->add_option("--r", map_r, "grid resolution");
  mp->add_option("--out", map_out)->required();
  mp->add_option("--format", map_format, "csv|pgm");

  // train
  auto* tr = app.add_subcommand("train", "train the DOA network");
  TrainOptions topt;
  std::string train_array;
  tr->add_option("--data", topt.data_dir, "pre-rendered dataset (default: fresh scenes)");
  tr->add_option("--r", topt.r);
  tr->add_option("--channels", topt.channels);
  tr->add_option("--epochs", topt.epochs);
  tr->add_option("--lr", topt.lr);
  tr->add_option("--batch", topt.batch);
  tr->add_option("--seed", topt.seed);
  tr->add_option("--ckpt", topt.ckpt_path);
  tr->add_option("--log", topt.log_path);
  tr->add_option("--n-traj", topt.n_traj, "fresh trajectories per epoch");
  tr->add_option("--holdout", topt.holdout, "held-out trajectories for the log");
  tr->add_option("--duration", topt.ranges.duration);
  tr->add_option("--t60-min", topt.ranges.t60_min);
  tr->add_option("--t60-max", topt.ranges.t60_max);
  tr->add_option("--snr-min", topt.ranges.snr_min);
  tr->add_option("--snr-max", topt.ranges.snr_max);
  tr->add_option("--fixed-snr", topt.fixed_snr);
  tr->add_option("--fixed-snr-epochs", topt.fixed_snr_epochs);
  tr->add_option("--threads", topt.threads);
  tr->add_option("--array", train_array);
  tr->add_flag("--resume", topt.resume, "continue from --ckpt and its state file");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  EvalOptions eopt;
  std::string eval_array;
  ev->add_option("--ckpt", eopt.ckpt_path)->required();
  ev->add_option("--data", eopt.data_dir)->required();
  ev->add_option("--skip-frames", eopt.cfg.skip_initial_frames);
  ev->add_flag("--exclude-silent", eopt.cfg.exclude_silent);
  ev->add_option("--out", eopt.out_csv);
  ev->add_option("--threads", eopt.threads);
  ev->add_option("--array", eval_array);

  // infer
  auto* in = app.add_subcommand("infer", "per-frame DOA estimates for one recording");
  std::string inf_ckpt, inf_wav, inf_array, inf_out;
  in->add_option("--ckpt", inf_ckpt)->required();
  in->add_option("--wav", inf_wav)->required();
  in->add_option("--array", inf_array);
  in->add_option("--out", inf_out)->required();

  // dump-grid (debug)
  auto* dg = app.add_subcommand("dump-grid", "write grid coordinates as csv");
  int dg_r = 2;
  std::string dg_out;
  dg->add_option("--r", dg_r);
  dg->add_option("--out", dg_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (st->parsed()) {
      if (suite == "grid" || suite == "all") selftest_grid();
      if (suite == "equivariance" || suite == "all") selftest_equivariance();
      if (suite == "gradients" || suite == "all") selftest_gradients();
      if (suite == "srp" || suite == "all") selftest_srp();
      if (fail_count) std::fprintf(stderr, "error: %d self tests failed\n", fail_count);
      return fail_count ? 1 : 0;
    }
    if (gen->parsed()) {
      MicArray array = load_array_or_default(gen_array, gopt.ranges.fs);
      generate_dataset(gopt, array, fcfg);
      std::printf("wrote %d trajectories to %s\n", gopt.n_traj, gopt.out_dir.c_str());
      return 0;
    }
    if (mp->parsed()) {
      WavData wav = read_wav(map_wav);
      MicArray array = load_array_or_default(map_array, wav.fs);
      array.fs = wav.fs;
      SrpMapSeq seq = compute_maps_for(wav.channels, array, map_r, fcfg);
      if (map_format == "csv") {
        export_map_csv(map_out, seq.maps, seq.T, seq.n_cells);
      } else if (map_format == "pgm") {
        IcoGrid g = build_grid(map_r);
        export_map_pgm(map_out, seq.maps, seq.T, g.rows(), g.cols());
      } else {
        throw std::runtime_error("unknown map format: " + map_format);
      }
      std::printf("wrote %d frames\n", seq.T);
      return 0;
    }
    if (tr->parsed()) {
      MicArray array = load_array_or_default(train_array, topt.ranges.fs);
      TrainResult res = run_training(topt, array, fcfg);
      std::printf("final loss %.6g", res.final_loss);
      if (res.final_holdout_rmsae >= 0)
        std::printf(", held-out rmsae %.3f deg", res.final_holdout_rmsae);
      std::printf("\ncheckpoint: %s\n", topt.ckpt_path.c_str());
      return 0;
    }
    if (ev->parsed()) {
      MicArray array = load_array_or_default(eval_array, 16000.0);
      EvalResult res = run_eval(eopt, array, fcfg);
      std::printf("model rmsae mean %.3f median %.3f stddev %.3f deg\n", res.record.mean(),
                  res.record.median(), res.record.stddev());
      std::printf("srp-argmax rmsae mean %.3f deg\n", res.mean_baseline());
      return 0;
    }
    if (in->parsed()) {
      WavData wav = read_wav(inf_wav);
      MicArray array = load_array_or_default(inf_array, wav.fs);
      array.fs = wav.fs;
      run_inference(inf_ckpt, wav.channels, array, fcfg, inf_out);
      std::printf("wrote %s\n", inf_out.c_str());
      return 0;
    }
    if (dg->parsed()) {
      grid_dump_csv(build_grid(dg_r), dg_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
