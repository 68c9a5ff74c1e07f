#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "icotrack/audio_io.hpp"
#include "icotrack/model.hpp"
#include "icotrack/sim.hpp"
#include "oracles.hpp"

using namespace icotrack;

TEST_CASE("scene sampling: ranges, constraints, determinism") {
  SceneRanges ranges;
  ranges.duration = 4.0;
  double t60_lo = 1e9, t60_hi = 0;
  for (uint64_t seed = 0; seed < 60; ++seed) {
    SimJob job = sample_scene(seed, ranges);
    const Vec3& d = job.room.dims;
    CHECK(d.x >= 3.0);
    CHECK(d.x <= 10.0);
    CHECK(d.y >= 3.0);
    CHECK(d.y <= 8.0);
    CHECK(d.z >= 2.5);
    CHECK(d.z <= 6.0);
    CHECK(job.room.t60 >= 0.2);
    CHECK(job.room.t60 <= 1.3);
    t60_lo = std::min(t60_lo, job.room.t60);
    t60_hi = std::max(t60_hi, job.room.t60);
    // Array clearance and lower half.
    CHECK(job.array_center.x >= 0.1 * d.x);
    CHECK(job.array_center.x <= 0.9 * d.x);
    CHECK(job.array_center.z <= d.z / 2.0);
    CHECK(job.array_center.z >= 0.1 * d.z);
    // Trajectory stays strictly inside.
    for (double t = 0; t <= job.duration; t += 0.05) {
      Vec3 p = job.traj.pos(t);
      CHECK(p.x > 0);
      CHECK(p.x < d.x);
      CHECK(p.y > 0);
      CHECK(p.y < d.y);
      CHECK(p.z > 0);
      CHECK(p.z < d.z);
    }
  }
  CHECK(t60_lo < 0.45);  // spread across the range
  CHECK(t60_hi > 1.0);

  SimJob a = sample_scene(17, ranges), b = sample_scene(17, ranges);
  CHECK(a.room.dims.x == b.room.dims.x);
  CHECK(a.room.t60 == b.room.t60);
  CHECK(a.traj.p0.x == b.traj.p0.x);
  CHECK(a.traj.phase.z == b.traj.phase.z);
}

TEST_CASE("t60 uniformity over many samples") {
  SceneRanges ranges;
  ranges.duration = 1.0;
  // Kolmogorov-Smirnov distance of the sampled t60 against uniform [0.2,1.3].
  const int n = 4000;
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(uint64_t(i) + 1000, 1));
    // replicate only the fields up to t60 is fragile; just sample full scenes
    xs.push_back(sample_scene(uint64_t(i) + 1000, ranges).room.t60);
  }
  std::sort(xs.begin(), xs.end());
  double ks = 0;
  for (int i = 0; i < n; ++i) {
    double cdf = (xs[i] - 0.2) / 1.1;
    ks = std::max(ks, std::abs(cdf - double(i + 1) / n));
    ks = std::max(ks, std::abs(cdf - double(i) / n));
  }
  CHECK(ks < 0.02);
}

TEST_CASE("anechoic impulse response is the direct-path spike") {
  RoomSpec room;
  room.dims = {5, 4, 3};
  room.t60 = 0.0;
  Vec3 src{1.0, 2.0, 1.5}, mic{3.5, 1.4, 1.1};
  double fs = 16000;
  auto rir = ism_rir(room, src, mic, fs);
  double dist = (src - mic).norm();
  double want_delay = dist / 343.0 * fs;
  double want_amp = 1.0 / (4.0 * M_PI * dist);

  // Total mass and the center of mass sit on the direct path (the high-pass
  // ring is accounted for by comparing against an ideally filtered impulse).
  int peak = 0;
  for (int i = 1; i < int(rir.size()); ++i)
    if (std::abs(rir[i]) > std::abs(rir[peak])) peak = i;
  CHECK(std::abs(peak - want_delay) <= 1.0);
  CHECK(rir[peak] == doctest::Approx(want_amp).epsilon(0.02));
}

TEST_CASE("first-order image count for a box room") {
  RoomSpec room;
  room.dims = {4, 5, 3};
  Vec3 src{1, 2, 1};
  int zero_order = 0, first_order = 0;
  visit_images(room.dims, src, 60.0, 1, [&](const Vec3&, int refl) {
    if (refl == 0) ++zero_order;
    if (refl == 1) ++first_order;
  });
  CHECK(zero_order == 1);
  CHECK(first_order == 6);
}

TEST_CASE("schroeder decay of simulated rooms matches the request") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 6; ++i) {
    RoomSpec room;
    room.dims = {3 + 7 * u(rng), 3 + 5 * u(rng), 2.5 + 3.5 * u(rng)};
    room.t60 = 0.2 + 0.5 * u(rng);
    Vec3 src{room.dims.x * 0.3, room.dims.y * 0.6, room.dims.z * 0.4};
    Vec3 mic{room.dims.x * 0.7, room.dims.y * 0.3, room.dims.z * 0.6};
    auto rir = ism_rir(room, src, mic, 16000.0, 343.0, -1, room.t60 * 1.5);
    double measured = schroeder_t60(rir, 16000.0);
    CHECK(std::abs(measured - room.t60) / room.t60 < 0.2);
  }

  // Unattainably short decay is rejected.
  RoomSpec big;
  big.dims = {10, 8, 6};
  big.t60 = 0.15;
  CHECK_THROWS(big.beta());
}

TEST_CASE("synthetic source: gaps, activity, determinism") {
  double fs = 16000.0, dur = 6.0;
  auto s1 = synth_source(31, dur, fs);
  auto s2 = synth_source(31, dur, fs);
  CHECK(s1 == s2);
  CHECK(int64_t(s1.size()) == int64_t(dur * fs));

  double peak = 0;
  for (double v : s1) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));

  // Some genuinely silent stretch exists (>= 0.2 s of exact zeros).
  int64_t zero_run = 0, best_run = 0;
  for (double v : s1) {
    zero_run = v == 0.0 ? zero_run + 1 : 0;
    best_run = std::max(best_run, zero_run);
  }
  CHECK(best_run >= int64_t(0.2 * fs));

  // VAD activity over many generated signals: most frames active.
  FramingConfig fcfg;
  int active = 0, total = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto s = synth_source(seed, dur, fs);
    VadState vs;
    VadConfig vc;
    int T = frame_count(int64_t(s.size()), fcfg);
    for (int t = 0; t < T; ++t) {
      const double* p = s.data() + int64_t(t) * fcfg.hop;
      const double* chans[1] = {p};
      active += vad_gate(chans, 1, fcfg.frame_len, vc, vs) ? 1 : 0;
      ++total;
    }
  }
  CHECK(double(active) / total >= 0.7);
}

TEST_CASE("free-field render matches the analytic delay/attenuation oracle") {
  SimJob job;
  job.room.dims = {6, 5, 4};
  job.room.t60 = 0.0;  // anechoic
  job.array_center = {3.0, 2.5, 2.0};
  job.traj.p0 = job.traj.p1 = {4.4, 3.4, 2.6};  // static source
  job.traj.duration = 1.0;
  job.duration = 1.0;
  job.seed = 7;
  job.snr_db = 300.0;  // effectively no noise

  MicArray array = head_array_12();
  FramingConfig fcfg;
  auto band = oracles::band_signal(int(job.fs), 0.02, 0.45, 11);
  auto source = band.render(0.0);
  auto audio = render_trajectory(job, array, fcfg, source);

  for (int m = 0; m < 12; ++m) {
    Vec3 mic = job.array_center + array.positions[m];
    double dist = (job.traj.p0 - mic).norm();
    double delay = dist / 343.0 * job.fs;
    double amp = 1.0 / (4.0 * M_PI * dist);
    auto want = band.render(delay);  // exact fractional delay of the source
    // Compare on the interior (outside circular wrap of the oracle and the
    // rir tail), relative to the peak level.
    double peak = 0, err = 0;
    int64_t lo = int64_t(delay) + 32, hi = int64_t(source.size()) - 32;
    for (int64_t i = lo; i < hi; ++i) peak = std::max(peak, std::abs(amp * want[i]));
    for (int64_t i = lo; i < hi; ++i) err = std::max(err, std::abs(audio[m][i] - amp * want[i]));
    CHECK(err / peak < 1e-3);
  }
}

TEST_CASE("rendered noise meets the requested snr") {
  SimJob job;
  job.room.dims = {5, 4, 3};
  job.room.t60 = 0.3;
  job.array_center = {2.5, 2.0, 1.2};
  job.traj.p0 = {1.1, 1.2, 1.6};
  job.traj.p1 = {3.8, 2.9, 1.9};
  job.traj.duration = 2.0;
  job.duration = 2.0;
  job.seed = 3;
  job.snr_db = 30.0;

  MicArray array = head_array_12();
  FramingConfig fcfg;
  auto source = synth_source(job.seed, job.duration, job.fs);
  auto clean_job = job;
  clean_job.snr_db = 600.0;  // negligible noise
  auto clean = render_trajectory(clean_job, array, fcfg, source);
  auto noisy = render_trajectory(job, array, fcfg, source);

  double p_sig = 0, p_noise = 0;
  int64_t n = 0;
  for (int m = 0; m < 12; ++m)
    for (size_t i = 0; i < clean[m].size(); ++i) {
      p_sig += clean[m][i] * clean[m][i];
      double d = noisy[m][i] - clean[m][i];
      p_noise += d * d;
      ++n;
    }
  double snr = 10.0 * std::log10(p_sig / p_noise);
  CHECK(std::abs(snr - 30.0) < 0.1);

  std::vector<double> silent(int64_t(job.fs), 0.0);
  CHECK_THROWS(render_trajectory(job, array, fcfg, silent));
}

TEST_CASE("moving anechoic source: srp argmax tracks the ground truth") {
  SimJob job;
  job.room.dims = {7, 6, 4.5};
  job.room.t60 = 0.0;
  job.array_center = {3.5, 3.0, 1.8};
  job.traj.p0 = {1.7, 1.6, 1.3};
  job.traj.p1 = {2.6, 2.1, 2.2};
  job.traj.amp = {0.15, 0.1, 0.05};
  job.traj.omega = {2 * M_PI * 0.15, 2 * M_PI * 0.1, 2 * M_PI * 0.05};
  job.traj.phase = {0.3, 1.0, 2.0};
  job.traj.duration = 6.0;
  job.duration = 6.0;
  job.seed = 9;
  job.snr_db = 40.0;

  MicArray array = head_array_12();
  FramingConfig fcfg;
  IcoGrid grid = build_grid(2);
  TdoaTable table = tdoa_table(array, grid);
  auto source = synth_source(job.seed, job.duration, job.fs);
  auto audio = render_trajectory(job, array, fcfg, source);

  auto seq = compute_map_seq(audio, array, grid, table, fcfg, GccConfig{}, VadConfig{});
  auto gt = ground_truth_doa(job, seq.T, fcfg);

  int hits = 0, active = 0;
  for (int t = 0; t < seq.T; ++t) {
    if (!seq.active[t]) continue;
    ++active;
    const double* m = seq.frame(t);
    int arg = 0;
    for (int c = 1; c < grid.n_cells; ++c)
      if (m[c] > m[arg]) arg = c;
    hits += (arg == nearest_cell(grid, gt[t]));
  }
  REQUIRE(active > 10);
  CHECK(double(hits) / active >= 0.95);
}

TEST_CASE("ground truth directions are unit and geometric") {
  SimJob job;
  job.room.dims = {5, 5, 4};
  job.array_center = {2.5, 2.5, 1.0};
  job.traj.p0 = job.traj.p1 = {2.5, 2.5, 3.0};  // directly above
  job.traj.duration = 1.0;
  job.duration = 1.0;
  FramingConfig fcfg;
  auto gt = ground_truth_doa(job, 3, fcfg);
  for (const Vec3& u : gt) {
    CHECK(std::abs(u.norm() - 1.0) < 1e-12);
    CHECK(u.z == doctest::Approx(1.0));
  }

  // Recompute from the parametric trajectory at frame centers.
  SimJob j2 = job;
  j2.traj.p1 = {1.0, 4.0, 0.5};
  j2.traj.amp = {0.2, 0, 0.1};
  j2.traj.omega = {2 * M_PI * 0.5, 0, 2 * M_PI * 0.3};
  j2.traj.phase = {0.7, 0, 0.2};
  auto gt2 = ground_truth_doa(j2, 4, fcfg);
  for (int t = 0; t < 4; ++t) {
    double time = (double(t) * fcfg.hop + fcfg.frame_len / 2.0) / j2.fs;
    Vec3 want = (j2.traj.pos(time) - j2.array_center).normalized();
    CHECK((gt2[t] - want).norm() < 1e-12);
  }

  SimJob bad = job;
  bad.traj.p0 = bad.traj.p1 = bad.array_center;
  CHECK_THROWS(ground_truth_doa(bad, 2, fcfg));
}

TEST_CASE("wav round-trip and trajectory dataset layout") {
  WavData w;
  w.fs = 16000;
  w.channels = {{0.1, -0.2, 0.3, 0.0}, {0.5, 0.25, -0.5, 1.0}};
  std::string path = "/tmp/icotrack_test.wav";
  write_wav(path, w, false);
  WavData r = read_wav(path);
  CHECK(r.fs == 16000);
  REQUIRE(r.channels.size() == 2);
  for (int ch = 0; ch < 2; ++ch)
    for (int i = 0; i < 4; ++i)
      CHECK(r.channels[ch][i] == doctest::Approx(w.channels[ch][i]).epsilon(1e-7));
  write_wav(path, w, true);
  WavData p16 = read_wav(path);
  for (int ch = 0; ch < 2; ++ch)
    for (int i = 0; i < 4; ++i)
      CHECK(p16.channels[ch][i] == doctest::Approx(w.channels[ch][i]).epsilon(1e-3));
  std::remove(path.c_str());

  SceneRanges ranges;
  ranges.duration = 1.5;
  ranges.t60_min = 0.2;
  ranges.t60_max = 0.3;
  SimJob job = sample_scene(12, ranges);
  MicArray array = head_array_12();
  FramingConfig fcfg;
  std::string dir = "/tmp/icotrack_traj_test";
  write_trajectory_dir(dir, job, array, fcfg);
  CHECK(std::filesystem::exists(dir + "/audio.wav"));
  CHECK(std::filesystem::exists(dir + "/gt.csv"));
  CHECK(std::filesystem::exists(dir + "/job.toml"));
  TrajectoryData td = read_trajectory_dir(dir);
  CHECK(td.audio.size() == 12);
  CHECK(int(td.gt.size()) == frame_count(int64_t(td.audio[0].size()), fcfg));
  CHECK(td.gt.size() == td.active.size());
  std::filesystem::remove_all(dir);
}
