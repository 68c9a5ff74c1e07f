#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "icotrack/eval.hpp"

using namespace icotrack;

TEST_CASE("angular error basics") {
  CHECK(angular_error_deg({0, 0, 1}, {0, 0, 1}) == doctest::Approx(0.0));
  CHECK(angular_error_deg({1, 0, 0}, {0, 1, 0}) == doctest::Approx(90.0));
  // Direction-only metric: magnitude is normalized away.
  CHECK(angular_error_deg({0.5, 0, 0}, {1, 0, 0}) == doctest::Approx(0.0));
  CHECK(angular_error_deg({0, 0, 0}, {1, 0, 0}) == doctest::Approx(90.0));
  CHECK(angular_error_deg({-1, 0, 0}, {1, 0, 0}) == doctest::Approx(180.0));
}

TEST_CASE("rmsae: skipping, silent handling, arithmetic") {
  EvalConfig cfg;
  cfg.skip_initial_frames = 5;

  std::vector<double> zeros(12, 0.0);
  std::vector<uint8_t> all_active(12, 1);
  CHECK(rmsae_deg(zeros, all_active, cfg) == doctest::Approx(0.0));

  std::vector<double> constant(12, 7.5);
  CHECK(rmsae_deg(constant, all_active, cfg) == doctest::Approx(7.5));

  // First five frames are excluded even when huge.
  std::vector<double> spiky(12, 2.0);
  for (int i = 0; i < 5; ++i) spiky[i] = 170.0;
  CHECK(rmsae_deg(spiky, all_active, cfg) == doctest::Approx(2.0));

  // {3,4} over two counted frames -> sqrt((9+16)/2).
  EvalConfig c0;
  c0.skip_initial_frames = 0;
  std::vector<double> two = {3.0, 4.0};
  std::vector<uint8_t> act2 = {1, 1};
  CHECK(rmsae_deg(two, act2, c0) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));

  // Silent frames included by default, excluded on request.
  std::vector<double> errs = {0, 0, 0, 0, 0, 10.0, 30.0};
  std::vector<uint8_t> act = {1, 1, 1, 1, 1, 1, 0};
  double with_silent = rmsae_deg(errs, act, cfg);
  EvalConfig ex = cfg;
  ex.exclude_silent = true;
  double without = rmsae_deg(errs, act, ex);
  CHECK(with_silent == doctest::Approx(std::sqrt((100.0 + 900.0) / 2)));
  CHECK(without == doctest::Approx(10.0));

  EvalConfig strict;
  strict.skip_initial_frames = 20;
  CHECK_THROWS(rmsae_deg(errs, act, strict));
  CHECK_THROWS([&] {
    EvalConfig bad;
    bad.skip_initial_frames = -1;
    bad.validate();
  }());
}

TEST_CASE("run record aggregates") {
  RunRecord rec;
  rec.per_trajectory = {4.0, 2.0, 6.0, 8.0};
  CHECK(rec.mean() == doctest::Approx(5.0));
  CHECK(rec.median() == doctest::Approx(5.0));
  CHECK(rec.stddev() == doctest::Approx(std::sqrt((1 + 9 + 1 + 9) / 3.0)));

  std::string path = "/tmp/icotrack_runrec.csv";
  rec.config = {"r=1", "epochs=2"};
  rec.write_csv(path, {5.0, 3.0, 7.0, 9.0});
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(all.find("srp_argmax") != std::string::npos);
  CHECK(all.find("aggregate,mean,5.0") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("map export: csv values and pgm formatting") {
  std::vector<double> maps = {0.5, -1.0, 2.0, 0.0,  // frame 0
                              1.0, 1.0, 1.0, 1.0};  // frame 1 (flat)
  std::string csv = "/tmp/icotrack_map.csv";
  export_map_csv(csv, maps, 2, 4);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "frame,cell,value");
  std::getline(in, line);
  CHECK(line == "0,0,0.5");
  std::remove(csv.c_str());

  export_map_pgm("/tmp/icotrack_map", maps, 2, 2, 2);
  std::ifstream p0("/tmp/icotrack_map_00000.pgm", std::ios::binary);
  std::string header;
  std::getline(p0, header);
  CHECK(header == "P5");
  std::getline(p0, header);
  CHECK(header == "2 2");
  std::getline(p0, header);
  unsigned char px[4];
  p0.read(reinterpret_cast<char*>(px), 4);
  CHECK(int(px[0]) == 128);  // 0.5 between -1 and 2
  CHECK(int(px[1]) == 0);
  CHECK(int(px[2]) == 255);

  std::ifstream p1("/tmp/icotrack_map_00001.pgm", std::ios::binary);
  std::getline(p1, header);
  std::getline(p1, header);
  std::getline(p1, header);
  p1.read(reinterpret_cast<char*>(px), 4);
  for (int i = 0; i < 4; ++i) CHECK(int(px[i]) == 128);  // flat map -> mid gray
  std::remove("/tmp/icotrack_map_00000.pgm");
  std::remove("/tmp/icotrack_map_00001.pgm");
}
