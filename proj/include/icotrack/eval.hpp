#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icotrack/vec3.hpp"

namespace icotrack {

struct EvalConfig {
  int skip_initial_frames = 5;
  bool exclude_silent = false;
  void validate() const;
};

// Degrees between the normalized estimate and the unit ground truth; a
// near-zero estimate counts as 90 degrees.
double angular_error_deg(const Vec3& v_est, const Vec3& u_gt);

// Root mean square of the per-frame errors from skip_initial_frames on,
// optionally restricted to frames flagged active.
double rmsae_deg(const std::vector<double>& errors_deg, const std::vector<uint8_t>& active,
                 const EvalConfig& cfg);

struct RunRecord {
  std::vector<std::string> config;     // "key=value" snapshot lines
  uint64_t seed = 0;
  std::vector<double> per_trajectory;  // RMSAE per trajectory, degrees
  double mean() const;
  double median() const;
  double stddev() const;
  void write_csv(const std::string& path, const std::vector<double>& baseline = {}) const;
};

// Planar map export: CSV rows (frame,cell,value) or one 8-bit PGM per frame
// with values mapped min->0, max->255 (a flat map renders mid-gray).
void export_map_csv(const std::string& path, const std::vector<double>& maps, int frames,
                    int n_cells);
void export_map_pgm(const std::string& path_prefix, const std::vector<double>& maps, int frames,
                    int rows, int cols);

}  // namespace icotrack
