// Copyright 2026-present the handlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "handlab/dataset.hpp"
#include "handlab/image_io.hpp"
#include "test_util.hpp"

using namespace handlab;
using handlab::testing::TempDir;

TEST_CASE("rng") {
  Rng a(11), b(11);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  Rng r(3);
  std::array<int, 7> hist{};
  for (int i = 0; i < 70000; ++i) {
    const auto x = r.below(7);
    REQUIRE(x < 7);
    ++hist[x];
  }
  for (int h : hist) CHECK(std::abs(h - 10000) < 500);

  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / 1e5) < 0.02);
  CHECK(std::abs(sq / 1e5 - 1.0) < 0.02);

  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 64; ++s) seen.insert(derive_seed(5, s));
  CHECK(seen.size() == 64);
}

TEST_CASE("parallel_for visits every index once") {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, 4);
  for (auto& h : hits) CHECK(h.load() == 1);
}

TEST_CASE("label pgm round trip") {
  TempDir dir("io");
  Rng rng(1);
  const auto m = handlab::testing::random_labels(rng, 13, 7, 20, 0.3);
  io::write_label_pgm(dir / "a.pgm", m);
  CHECK(io::read_label_pgm(dir / "a.pgm") == m);
}

TEST_CASE("depth pgm round trip on quantized values") {
  TempDir dir("io");
  Rng rng(2);
  DepthMap d(9, 11);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (rng.uniform() < 0.3) continue;
    d.foreground[i] = 1;
    d.values[i] = io::quantize_depth(rng.uniform(0.2, 0.9));
  }
  io::write_depth_pgm(dir / "d.pgm", d);
  CHECK(io::read_depth_pgm(dir / "d.pgm") == d);
}

TEST_CASE("joints csv round trip is exact") {
  TempDir dir("io");
  Rng rng(4);
  JointSet j;
  for (auto& x : j) x = {rng.uniform(0, 47), rng.uniform(0, 47), rng.uniform(0.3, 0.7)};
  io::write_joints_csv(dir / "j.csv", j);
  CHECK(io::read_joints_csv(dir / "j.csv") == j);
}

TEST_CASE("malformed files raise format errors") {
  TempDir dir("io");
  io::write_text_file(dir / "bad.pgm", "P2\n3 3\n255\n");
  CHECK_THROWS_AS(io::read_label_pgm(dir / "bad.pgm"), FormatError);
  io::write_text_file(dir / "short.pgm", "P5\n3 3\n255\nab");
  CHECK_THROWS_AS(io::read_label_pgm(dir / "short.pgm"), FormatError);
  io::write_text_file(dir / "j.csv", "joint_id,u,v,z\n0,1,2,3\n");
  CHECK_THROWS_AS(io::read_joints_csv(dir / "j.csv"), FormatError);
  CHECK_THROWS_AS(io::read_label_pgm(dir / "missing.pgm"), IoError);
}

TEST_CASE("dataset generation is deterministic and round-trips") {
  TempDir dir("ds");
  dataset::DatasetConfig cfg;
  cfg.n_synth = 3;
  cfg.n_real = 2;
  cfg.n_test = 2;
  cfg.seed = 17;
  cfg.noise.gaussian_depth_sigma = 0.01;
  cfg.noise.hole_probability = 0.03;
  cfg.noise.quantization_step = 0.004;
  cfg.noise.edge_erosion_radius = 1;
  dataset::generate_dataset(dir.path(), cfg, 2);

  for (auto split : dataset::kAllSplits) {
    const auto ids = dataset::list_samples(dir.path(), split);
    for (const auto& id : ids) {
      const int index = std::stoi(id);
      const auto fresh = dataset::generate_sample(split, index, cfg);
      const auto disk = dataset::read_sample(dir.path(), split, id);
      CHECK(disk.depth == fresh.depth);
      CHECK(disk.labels == fresh.labels);
      CHECK(disk.joints == fresh.joints);
    }
  }
  CHECK(dataset::list_samples(dir.path(), dataset::Split::kSynth).size() == 3);
  CHECK(dataset::list_samples(dir.path(), dataset::Split::kTest).size() == 2);

  const auto s = dataset::generate_sample(dataset::Split::kReal, 0, cfg);
  const auto t = dataset::generate_sample(dataset::Split::kTest, 0, cfg);
  CHECK_FALSE(s.depth == t.depth);
}

TEST_CASE("real-proxy depth is a degraded copy of the clean render") {
  dataset::DatasetConfig cfg;
  cfg.seed = 3;
  cfg.noise.gaussian_depth_sigma = 0.02;
  cfg.noise.hole_probability = 0.05;
  const auto s = dataset::generate_sample(dataset::Split::kReal, 0, cfg);
  std::size_t holes = 0;
  for (std::size_t i = 0; i < s.depth.values.size(); ++i) {
    if (s.depth.foreground[i]) REQUIRE(s.labels.labels[i] != 0);
    if (s.labels.labels[i] != 0 && !s.depth.foreground[i]) ++holes;
  }
  CHECK(holes > 0);
}
