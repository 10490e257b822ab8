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
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "handlab/restoration.hpp"
#include "test_util.hpp"

using namespace handlab;
using namespace handlab::restoration;
using patchdict::PatchDictionary;
using handlab::testing::blocky_labels;
using handlab::testing::random_labels;

namespace {

struct Instance {
  LabelMap pred;
  PatchDictionary dict;
  RankedNeighborField field;
};

Instance make_instance(std::uint64_t seed, int w, int h, int patch, std::size_t ranks) {
  Rng rng(seed);
  std::vector<LabelMap> sources;
  for (int i = 0; i < 3; ++i) sources.push_back(blocky_labels(rng, 16, 16, 2 + static_cast<int>(rng.below(3)), 6));
  auto d = patchdict::extract_patches(sources, patch, 1, true);
  d = patchdict::build_index(patchdict::subsample(d, 200, seed), seed);
  Instance in{random_labels(rng, w, h, 6, 0.25), std::move(d), {}};
  in.field = query_field(in.pred, in.dict, ranks);
  return in;
}

// For every foreground j, every foreground k in the image whose window covers
// j and whose patch covers j contributes the rank-0 cell lying on j.
std::vector<VoteTally> vote_oracle(const Instance& in, int window) {
  const int W = in.pred.width(), H = in.pred.height();
  const int P = in.dict.patch_size(), h = P / 2, w = window / 2;
  std::vector<VoteTally> tallies(static_cast<std::size_t>(W) * H, VoteTally{});
  for (int jv = 0; jv < H; ++jv) {
    for (int ju = 0; ju < W; ++ju) {
      for (int kv = 0; kv < H; ++kv) {
        for (int ku = 0; ku < W; ++ku) {
          if (!in.field.has(ku, kv)) continue;
          if (std::abs(ku - ju) > w || std::abs(kv - jv) > w) continue;
          const int row = jv - kv + h, col = ju - ku + h;
          if (row < 0 || col < 0 || row >= P || col >= P) continue;
          const auto patch = in.dict.patch(in.field.at(ku, kv)[0].id);
          ++tallies[static_cast<std::size_t>(jv) * W + ju][patch.at(row, col)];
        }
      }
    }
  }
  return tallies;
}

double energy_oracle(const Instance& in, PairwiseKind kind, double alpha, const Assignment& x) {
  const int W = in.pred.width(), H = in.pred.height(), P = in.dict.patch_size();
  std::vector<int> var(static_cast<std::size_t>(W) * H, -1);
  int n = 0;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (in.field.has(u, v)) var[static_cast<std::size_t>(v) * W + u] = n++;
    }
  }
  auto chosen = [&](int u, int v) {
    return in.dict.patch(in.field.at(u, v)[x[static_cast<std::size_t>(var[static_cast<std::size_t>(v) * W + u])]].id);
  };
  double e = 0.0;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (!in.field.has(u, v)) continue;
      e += patchdict::hamming_distance(patchdict::extract_patch(in.pred, u, v, P), chosen(u, v));
      const auto a = chosen(u, v);
      for (auto [du, dv] : {std::pair{1, 0}, std::pair{0, 1}}) {
        if (u + du >= W || v + dv >= H || !in.field.has(u + du, v + dv)) continue;
        const auto b = chosen(u + du, v + dv);
        double cost = 0.0;
        if (kind == PairwiseKind::kPottsCenter) {
          cost = a.center() != b.center() ? 1.0 : 0.0;
        } else {
          int diff = 0, cells = 0;
          for (int r = 0; r + dv < P; ++r) {
            for (int c = 0; c + du < P; ++c) {
              diff += a.at(r + dv, c + du) != b.at(r, c);
              ++cells;
            }
          }
          cost = static_cast<double>(diff) / cells;
        }
        e += alpha * cost;
      }
    }
  }
  return e;
}

}  // namespace

TEST_CASE("query_field equals per-pixel linear scan") {
  const auto in = make_instance(1, 16, 16, 3, 4);
  for (int v = 0; v < 16; ++v) {
    for (int u = 0; u < 16; ++u) {
      REQUIRE(in.field.has(u, v) == (in.pred(u, v) != 0));
      if (!in.field.has(u, v)) continue;
      const auto q = patchdict::encode_patch(patchdict::extract_patch(in.pred, u, v, 3));
      const auto want = patchdict::linear_scan(q, in.dict, 4);
      const auto got = in.field.at(u, v);
      REQUIRE(std::equal(got.begin(), got.end(), want.begin(), want.end()));
    }
  }
  CHECK(query_field(LabelMap(8, 8), in.dict, 2).entries() == 0);
  CHECK_THROWS_AS(query_field(LabelMap(2, 2), in.dict, 2), ContractError);
}

TEST_CASE("perfect input is a fixpoint of center and vote") {
  Rng rng(2);
  const auto m = blocky_labels(rng, 16, 16, 3, 5);
  const std::vector<LabelMap> maps{m};
  const auto d = patchdict::build_index(patchdict::extract_patches(maps, 5, 1, true));
  const auto field = query_field(m, d, 1);
  for (int v = 0; v < 16; ++v) {
    for (int u = 0; u < 16; ++u) {
      if (field.has(u, v)) REQUIRE(field.at(u, v)[0].distance == 0);
    }
  }
  CHECK(restore_center(field, d) == m);
  RestorationConfig cfg;
  cfg.window = 5;
  CHECK(restore_vote(field, d, cfg) == m);
}

TEST_CASE("constant-label dictionary yields constant foreground") {
  PatchDictionary d(3);
  d.add(patchdict::LabelPatch(3, std::vector<std::uint8_t>(9, 7)), {});
  d = patchdict::build_index(std::move(d));
  Rng rng(3);
  const auto pred = random_labels(rng, 10, 10, 20, 0.3);
  const auto field = query_field(pred, d, 1);
  RestorationConfig cfg;
  cfg.window = 3;
  for (const auto& out : {restore_center(field, d), restore_vote(field, d, cfg)}) {
    for (int v = 0; v < 10; ++v) {
      for (int u = 0; u < 10; ++u) REQUIRE(out(u, v) == (pred(u, v) ? 7 : 0));
    }
  }
}

TEST_CASE("vote tallies match the exhaustive enumeration") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = make_instance(100 + seed, 16, 16, 3, 1);
    for (int window : {1, 3, 5}) {
      const auto want = vote_oracle(in, window);
      RestorationConfig cfg;
      cfg.window = window;
      const auto out = restore_vote(in.field, in.dict, cfg);
      for (int v = 0; v < 16; ++v) {
        for (int u = 0; u < 16; ++u) {
          if (!in.field.has(u, v)) {
            REQUIRE(out(u, v) == 0);
            continue;
          }
          const auto& t = want[static_cast<std::size_t>(v) * 16 + u];
          REQUIRE(vote_tally(in.field, in.dict, window, u, v) == t);
          int best = 0;
          for (int l = 1; l < kNumLabels; ++l) {
            if (t[l] > 0 && (best == 0 || t[l] > t[best])) best = l;
          }
          const int expect = best ? best : in.dict.center_label(in.field.at(u, v)[0].id);
          REQUIRE(out(u, v) == expect);
        }
      }
    }
  }
}

TEST_CASE("window one equals center restoration") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = make_instance(200 + seed, 16, 16, 3 + 2 * static_cast<int>(seed % 2), 1);
    RestorationConfig cfg;
    cfg.window = 1;
    CHECK(restore_vote(in.field, in.dict, cfg) == restore_center(in.field, in.dict));
  }
}

TEST_CASE("vote ties go to the smallest label") {
  // Two neighbors, each voting once for a different label at the middle pixel.
  PatchDictionary d(3);
  d.add(patchdict::LabelPatch(3, {9, 9, 9, 9, 9, 9, 9, 9, 9}), {});
  d.add(patchdict::LabelPatch(3, {4, 4, 4, 4, 4, 4, 4, 4, 4}), {});
  RankedNeighborField field(3, 1, 1, 3);
  field.set(0, 0, {{0, 0}});
  field.set(2, 0, {{1, 0}});
  RestorationConfig cfg;
  cfg.window = 3;
  auto tally = vote_tally(field, d, 3, 1, 0);
  CHECK(tally[9] == 1);
  CHECK(tally[4] == 1);
  CHECK_FALSE(field.has(1, 0));
}

TEST_CASE("oversized window is a contract violation") {
  const auto in = make_instance(5, 16, 16, 3, 1);
  RestorationConfig cfg;
  cfg.window = 7;
  CHECK_THROWS_AS(restore_vote(in.field, in.dict, cfg), ContractError);
  cfg.window = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("crf energy equals the direct summation") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto in = make_instance(300 + seed, 10, 10, 3, 4);
    Rng rng(seed);
    for (auto kind : {PairwiseKind::kPottsCenter, PairwiseKind::kOverlapHamming}) {
      const double alpha = rng.uniform(0.0, 3.0);
      const CrfModel model(in.field, in.dict, kind, alpha);
      Assignment x(model.variables());
      for (auto& r : x) r = static_cast<std::uint32_t>(rng.below(4));
      REQUIRE(crf_energy(model, x) == doctest::Approx(energy_oracle(in, kind, alpha, x)).epsilon(1e-12));
      REQUIRE(crf_energy(model, Assignment(model.variables(), 0)) ==
              doctest::Approx(energy_oracle(in, kind, alpha, Assignment(model.variables(), 0))).epsilon(1e-12));
    }
  }
}

TEST_CASE("crf energy on a hand-built 3x3 lattice") {
  // Patch side 1: the unary is 0 or 1 and the lattice is the full 3x3 grid.
  LabelMap pred(3, 3);
  for (int v = 0; v < 3; ++v) {
    for (int u = 0; u < 3; ++u) pred(u, v) = static_cast<std::uint8_t>(u < 2 ? 1 : 2);
  }
  PatchDictionary d(1);
  d.add(patchdict::LabelPatch(1, {1}), {});
  d.add(patchdict::LabelPatch(1, {2}), {});
  d = patchdict::build_index(std::move(d));
  const auto field = query_field(pred, d, 2);
  const CrfModel model(field, d, PairwiseKind::kPottsCenter, 0.5);
  CHECK(model.variables() == 9);
  CHECK(model.edges().size() == 12);
  // Rank 0 reproduces pred exactly: unary 0, three disagreeing horizontal edges.
  CHECK(crf_energy(model, Assignment(9, 0)) == doctest::Approx(1.5));
  // All rank 1: every unary 1, still three disagreeing edges.
  CHECK(crf_energy(model, Assignment(9, 1)) == doctest::Approx(9 + 1.5));
  Assignment x(9, 0);
  x[2] = x[5] = x[8] = 1;  // right column takes label 1: no disagreement, three unary misses.
  CHECK(crf_energy(model, x) == doctest::Approx(3.0));
  CHECK_THROWS_AS(crf_energy(model, Assignment(9, 2)), ContractError);
  CHECK_THROWS_AS(crf_energy(model, Assignment(8, 0)), ContractError);
}

TEST_CASE("icm energy trace is nonincreasing and matches recomputation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = make_instance(400 + seed, 16, 16, 3, 5);
    for (auto kind : {PairwiseKind::kPottsCenter, PairwiseKind::kOverlapHamming}) {
      const CrfModel model(in.field, in.dict, kind, 0.5 + seed * 0.3);
      const auto r = crf_icm(model, 20);
      REQUIRE(r.energy_trace.size() == static_cast<std::size_t>(r.sweeps) + 1);
      REQUIRE(r.energy_trace.front() == doctest::Approx(crf_energy(model, Assignment(model.variables(), 0))));
      REQUIRE(r.energy_trace.back() == doctest::Approx(crf_energy(model, r.assignment)));
      for (std::size_t i = 1; i < r.energy_trace.size(); ++i) REQUIRE(r.energy_trace[i] <= r.energy_trace[i - 1]);
      REQUIRE(r.sweeps <= 20);
      // Local optimality: no single-variable change lowers the energy.
      if (r.sweeps < 20) {
        auto x = r.assignment;
        const double e = crf_energy(model, x);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const auto keep = x[i];
          for (std::uint32_t k = 0; k < model.ranks(); ++k) {
            x[i] = k;
            REQUIRE(crf_energy(model, x) >= e - 1e-9);
          }
          x[i] = keep;
        }
      }
      for (int v = 0; v < 16; ++v) {
        for (int u = 0; u < 16; ++u) {
          if (!in.field.has(u, v)) REQUIRE(r.labels(u, v) == 0);
        }
      }
    }
  }
}

TEST_CASE("alpha zero reduces icm to center restoration") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = make_instance(500 + seed, 16, 16, 3, 4);
    for (auto kind : {PairwiseKind::kPottsCenter, PairwiseKind::kOverlapHamming}) {
      const CrfModel model(in.field, in.dict, kind, 0.0);
      const auto r = crf_icm(model, 20);
      CHECK(r.labels == restore_center(in.field, in.dict));
      CHECK(r.sweeps <= 1);
    }
  }
}

TEST_CASE("two pixels with a dominating pairwise term agree") {
  // Left pixel: rank 0 centers on 3, rank 1 on 5. Right pixel: rank 0 on 5.
  LabelMap pred(3, 3);
  pred(0, 1) = 3;
  pred(1, 1) = 5;
  PatchDictionary d(3);
  d.add(patchdict::extract_patch(pred, 0, 1, 3), {});
  d.add(patchdict::extract_patch(pred, 1, 1, 3), {});
  d = patchdict::build_index(std::move(d));
  const auto field = query_field(pred, d, 2);
  const CrfModel model(field, d, PairwiseKind::kPottsCenter, 100.0);
  REQUIRE(model.variables() == 2);
  const auto r = crf_icm(model, 10);
  CHECK(r.labels(0, 1) == r.labels(1, 1));
  double best = 1e300;
  for (std::uint32_t a = 0; a < 2; ++a) {
    for (std::uint32_t b = 0; b < 2; ++b) best = std::min(best, crf_energy(model, {a, b}));
  }
  CHECK(crf_energy(model, r.assignment) == best);
}

TEST_CASE("restore dispatches every method") {
  const auto in = make_instance(7, 16, 16, 3, 3);
  RestorationConfig cfg;
  cfg.window = 3;
  cfg.crf_ranks = 3;
  CHECK(restore(in.pred, in.dict, Method::kCenter, cfg) == restore_center(in.field, in.dict));
  CHECK(restore(in.pred, in.dict, Method::kVote, cfg) == restore_vote(in.field, in.dict, cfg));
  std::vector<double> trace;
  const auto crf = restore(in.pred, in.dict, Method::kCrfPotts, cfg, 1, &trace);
  CHECK_FALSE(trace.empty());
  CHECK(crf == crf_icm(CrfModel(in.field, in.dict, PairwiseKind::kPottsCenter, 1.0), cfg.crf_max_sweeps).labels);
  for (auto m : {Method::kCenter, Method::kVote, Method::kCrfPotts, Method::kCrfOverlap}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("median"), ConfigError);
}
