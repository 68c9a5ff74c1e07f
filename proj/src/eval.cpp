#include "icotrack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace icotrack {

void EvalConfig::validate() const {
  if (skip_initial_frames < 0) throw std::invalid_argument("skip_initial_frames must be >= 0");
}

double angular_error_deg(const Vec3& v_est, const Vec3& u_gt) {
  double n = v_est.norm();
  if (n < 1e-9) return 90.0;
  double c = v_est.dot(u_gt) / n;
  c = c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c);
  return std::acos(c) * 180.0 / M_PI;
}

double rmsae_deg(const std::vector<double>& errors_deg, const std::vector<uint8_t>& active,
                 const EvalConfig& cfg) {
  cfg.validate();
  double acc = 0;
  int n = 0;
  for (size_t t = size_t(cfg.skip_initial_frames); t < errors_deg.size(); ++t) {
    if (cfg.exclude_silent && (t >= active.size() || !active[t])) continue;
    acc += errors_deg[t] * errors_deg[t];
    ++n;
  }
  if (n == 0) throw std::runtime_error("rmsae: no frames left after filtering");
  return std::sqrt(acc / n);
}

double RunRecord::mean() const {
  double s = 0;
  for (double v : per_trajectory) s += v;
  return per_trajectory.empty() ? 0.0 : s / per_trajectory.size();
}

double RunRecord::median() const {
  if (per_trajectory.empty()) return 0.0;
  std::vector<double> v = per_trajectory;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double RunRecord::stddev() const {
  if (per_trajectory.size() < 2) return 0.0;
  double mu = mean(), acc = 0;
  for (double v : per_trajectory) acc += (v - mu) * (v - mu);
  return std::sqrt(acc / (per_trajectory.size() - 1));
}

void RunRecord::write_csv(const std::string& path, const std::vector<double>& baseline) const {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write run record: " + path);
  for (const auto& line : config) std::fprintf(f, "# %s\n", line.c_str());
  std::fprintf(f, "# seed=%llu\n", (unsigned long long)seed);
  bool with_baseline = baseline.size() == per_trajectory.size();
  std::fprintf(f, with_baseline ? "trajectory,rmsae_deg,srp_argmax_rmsae_deg\n"
                                : "trajectory,rmsae_deg\n");
  for (size_t i = 0; i < per_trajectory.size(); ++i) {
    if (with_baseline)
      std::fprintf(f, "%zu,%.6f,%.6f\n", i, per_trajectory[i], baseline[i]);
    else
      std::fprintf(f, "%zu,%.6f\n", i, per_trajectory[i]);
  }
  std::fprintf(f, "aggregate,mean,%.6f\naggregate,median,%.6f\naggregate,stddev,%.6f\n", mean(),
               median(), stddev());
  std::fclose(f);
}

void export_map_csv(const std::string& path, const std::vector<double>& maps, int frames,
                    int n_cells) {
  if (int64_t(maps.size()) != int64_t(frames) * n_cells)
    throw std::invalid_argument("export_map_csv: size mismatch");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write map csv: " + path);
  std::fprintf(f, "frame,cell,value\n");
  for (int t = 0; t < frames; ++t)
    for (int c = 0; c < n_cells; ++c)
      std::fprintf(f, "%d,%d,%.9g\n", t, c, maps[size_t(t) * n_cells + c]);
  std::fclose(f);
}

void export_map_pgm(const std::string& path_prefix, const std::vector<double>& maps, int frames,
                    int rows, int cols) {
  if (int64_t(maps.size()) != int64_t(frames) * rows * cols)
    throw std::invalid_argument("export_map_pgm: size mismatch");
  for (int t = 0; t < frames; ++t) {
    const double* m = maps.data() + size_t(t) * rows * cols;
    double lo = m[0], hi = m[0];
    for (int i = 1; i < rows * cols; ++i) {
      lo = std::min(lo, m[i]);
      hi = std::max(hi, m[i]);
    }
    char path[512];
    std::snprintf(path, sizeof path, "%s_%05d.pgm", path_prefix.c_str(), t);
    std::FILE* f = std::fopen(path, "wb");
    if (!f) throw std::runtime_error(std::string("cannot write pgm: ") + path);
    std::fprintf(f, "P5\n%d %d\n255\n", cols, rows);
    for (int i = 0; i < rows * cols; ++i) {
      int v = hi > lo ? int(std::lround((m[i] - lo) / (hi - lo) * 255.0)) : 128;
      std::fputc(std::clamp(v, 0, 255), f);
    }
    std::fclose(f);
  }
}

}  // namespace icotrack
