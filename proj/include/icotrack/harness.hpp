#pragma once

// Orchestration shared by the command-line tool and the acceptance suite:
// dataset generation, the training loop with its SNR schedule, evaluation
// against ground truth, and inference.

#include <cstdint>
#include <string>
#include <vector>

#include "icotrack/eval.hpp"
#include "icotrack/model.hpp"
#include "icotrack/sim.hpp"
#include "icotrack/srp.hpp"

namespace icotrack {

struct GenDataOptions {
  std::string out_dir;
  int n_traj = 10;
  SceneRanges ranges;
  uint64_t seed = 0;
  bool pcm16 = false;
  int threads = 2;
};

void generate_dataset(const GenDataOptions& opt, const MicArray& array,
                      const FramingConfig& fcfg);

struct TrainOptions {
  int r = 1;
  int channels = 32;
  int epochs = 50;
  int batch = 5;
  double lr = 1e-4;
  uint64_t seed = 0;

  // Fresh scenes per epoch (the default).  SNR schedule: the first
  // fixed_snr_epochs epochs pin the SNR to fixed_snr, later epochs draw it
  // uniformly from [ranges.snr_min, ranges.snr_max].
  int n_traj = 50;
  SceneRanges ranges = [] {
    SceneRanges r;
    r.snr_min = 5.0;
    r.snr_max = 30.0;
    return r;
  }();
  int fixed_snr_epochs = 25;
  double fixed_snr = 30.0;

  // Alternative: a pre-rendered dataset directory (SNR baked into the audio).
  std::string data_dir;

  // Held-out scenes for the per-epoch log (fresh mode only).
  int holdout = 20;

  std::string ckpt_path = "model.ckpt";
  std::string log_path;
  bool resume = false;
  int threads = 2;
  EvalConfig eval_cfg;
};

struct TrainResult {
  double final_loss = 0;
  double final_holdout_rmsae = -1;
  std::vector<double> epoch_loss;
};

TrainResult run_training(const TrainOptions& opt, const MicArray& array,
                         const FramingConfig& fcfg);

struct EvalOptions {
  std::string ckpt_path;
  std::string data_dir;
  EvalConfig cfg;
  std::string out_csv;
  int threads = 2;
};

struct EvalResult {
  RunRecord record;            // model RMSAE per trajectory
  std::vector<double> baseline;  // steered-power argmax RMSAE per trajectory
  double mean_model() const { return record.mean(); }
  double mean_baseline() const {
    double s = 0;
    for (double v : baseline) s += v;
    return baseline.empty() ? 0 : s / baseline.size();
  }
};

EvalResult run_eval(const EvalOptions& opt, const MicArray& array, const FramingConfig& fcfg);

// Per-frame DOA estimates for one recording; writes frame, vx, vy, vz,
// confidence, azimuth_deg, elevation_deg.
void run_inference(const std::string& ckpt_path, const Channels& audio, const MicArray& array,
                   const FramingConfig& fcfg, const std::string& out_csv);

// Map sequence for one recording at resolution r.
SrpMapSeq compute_maps_for(const Channels& audio, const MicArray& array, int r,
                           const FramingConfig& fcfg);

// Steered-power argmax direction per frame (lowest index on ties, so silent
// all-zero maps fall to cell 0).
std::vector<Vec3> srp_argmax_estimates(const SrpMapSeq& seq, const IcoGrid& grid);

std::vector<std::string> list_trajectory_dirs(const std::string& data_dir);

}  // namespace icotrack
