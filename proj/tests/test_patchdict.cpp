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
#include <fstream>

#include "doctest.h"
#include "handlab/image_io.hpp"
#include "handlab/patchdict.hpp"
#include "test_util.hpp"

using namespace handlab;
using namespace handlab::patchdict;
using handlab::testing::TempDir;

namespace {

int cell_mismatches(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

// Full sort of (distance, id) pairs, truncated to k.
NNQueryResult sort_oracle(const LabelPatch& q, const PatchDictionary& d, std::size_t k) {
  NNQueryResult all;
  for (std::uint32_t id = 0; id < d.size(); ++id) {
    all.push_back({id, static_cast<std::uint32_t>(cell_mismatches(q.cells, d.cells(id)))});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  all.resize(k);
  return all;
}

LabelPatch random_patch(Rng& rng, int side, int max_label) {
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(side) * side);
  for (auto& c : cells) c = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(max_label) + 1));
  return LabelPatch(side, std::move(cells));
}

PatchDictionary random_dictionary(Rng& rng, int side, std::size_t n, int max_label) {
  PatchDictionary d(side);
  for (std::size_t i = 0; i < n; ++i) d.add(random_patch(rng, side, max_label), {0, static_cast<std::uint32_t>(i)});
  return d;
}

}  // namespace

TEST_CASE("hamming distance counts differing cells") {
  const LabelPatch a(3, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  const LabelPatch b(3, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(hamming_distance(a, b) == 0);
  // Labels 1 and 3 differ in one bit only; the distance still counts one cell.
  const LabelPatch c(3, {0, 3, 2, 3, 4, 5, 6, 7, 20});
  CHECK(hamming_distance(a, c) == 2);
  CHECK_THROWS_AS(hamming_distance(a, LabelPatch(1, {0})), ContractError);

  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const int side = 1 + 2 * static_cast<int>(rng.below(14));
    const auto p = random_patch(rng, side, 20);
    const auto q = random_patch(rng, side, 20);
    REQUIRE(hamming_distance(p, q) == cell_mismatches(p.cells, q.cells));
    PatchDictionary d(side);
    d.add(p, {});
    REQUIRE(d.distance_to(encode_patch(q), 0) == static_cast<std::uint32_t>(cell_mismatches(p.cells, q.cells)));
  }
}

TEST_CASE("cell packing round trip") {
  Rng rng(8);
  for (int side : {1, 3, 9, 27}) {
    const auto p = random_patch(rng, side, 20);
    const auto packed = pack_cells(p.cells);
    CHECK(packed.size() == packed_bytes(side));
    CHECK(packed.size() == (p.cells.size() * kBitsPerCell + 7) / 8);
    CHECK(unpack_cells(packed, p.cells.size()) == p.cells);
  }
}

TEST_CASE("extract_patch zero-fills outside the map") {
  LabelMap m(4, 4);
  for (int v = 0; v < 4; ++v) {
    for (int u = 0; u < 4; ++u) m(u, v) = static_cast<std::uint8_t>(1 + u + 4 * v);
  }
  const auto p = extract_patch(m, 0, 0, 3);
  CHECK(p.cells == std::vector<std::uint8_t>{0, 0, 0, 0, 1, 2, 0, 5, 6});
  CHECK(p.center() == 1);
  CHECK_THROWS_AS(extract_patch(m, 0, 0, 4), ContractError);
}

TEST_CASE("extract_patches respects stride and foreground filter") {
  LabelMap m(6, 6);
  m(2, 2) = 4;
  m(3, 3) = 5;
  const std::vector<LabelMap> maps{m};
  CHECK(extract_patches(maps, 3, 1, true).size() == 2);
  CHECK(extract_patches(maps, 3, 1, false).size() == 36);
  CHECK(extract_patches(maps, 3, 2, false).size() == 9);
  CHECK_THROWS_AS(extract_patches(std::vector<LabelMap>{LabelMap(6, 6)}, 3, 1, true), EmptyDictionaryError);
  const auto d = extract_patches(maps, 3, 1, true);
  CHECK(d.center_label(0) == 4);
  CHECK(d.source(1).pixel_index == static_cast<std::uint32_t>(3 + 3 * 6));
}

TEST_CASE("indexed search equals the sort oracle, ties included") {
  Rng rng(9);
  for (int trial = 0; trial < 12; ++trial) {
    const int side = std::array<int, 3>{3, 5, 9}[trial % 3];
    // Few labels give heavy duplication and many equal distances.
    const int max_label = trial % 2 == 0 ? 1 : 20;
    auto d = build_index(random_dictionary(rng, side, 400 + rng.below(400), max_label), trial);
    REQUIRE(d.indexed());
    for (int q = 0; q < 40; ++q) {
      const auto query = random_patch(rng, side, max_label);
      const std::size_t k = 1 + rng.below(12);
      const auto got = nn_search(query, d, k);
      REQUIRE(got == sort_oracle(query, d, k));
      REQUIRE(got == linear_scan(encode_patch(query), d, k));
    }
  }
}

TEST_CASE("nn_search on duplicated patches returns ascending ids") {
  PatchDictionary d(3);
  const LabelPatch p(3, {1, 1, 1, 1, 1, 1, 1, 1, 1});
  for (int i = 0; i < 50; ++i) d.add(p, {});
  d = build_index(std::move(d), 3);
  const auto r = nn_search(p, d, 5);
  for (std::uint32_t i = 0; i < 5; ++i) CHECK(r[i] == Neighbor{i, 0});
  CHECK_THROWS_AS(nn_search(p, d, 51), ContractError);
  CHECK_THROWS_AS(nn_search(LabelPatch(5, std::vector<std::uint8_t>(25, 1)), d, 1), ContractError);
}

TEST_CASE("subsample is deterministic and keeps the original order") {
  Rng rng(10);
  const auto d = random_dictionary(rng, 3, 300, 20);
  const auto a = subsample(d, 50, 4);
  CHECK(a.size() == 50);
  CHECK(a == subsample(d, 50, 4));
  CHECK_FALSE(a == subsample(d, 50, 5));
  for (std::uint32_t i = 1; i < a.size(); ++i) CHECK(a.source(i - 1).pixel_index < a.source(i).pixel_index);
  CHECK(subsample(d, 1000, 4) == d);
}

TEST_CASE("dictionary file round trip and corruption") {
  TempDir dir("dict");
  Rng rng(12);
  auto d = random_dictionary(rng, 9, 120, 20);
  const auto path = dir / "d.pdct";
  save_dictionary(d, path);
  const auto back = load_dictionary(path);
  CHECK(back == d);
  CHECK(back.indexed());
  const auto q = random_patch(rng, 9, 20);
  CHECK(nn_search(q, back, 4) == sort_oracle(q, d, 4));

  const std::string bytes = io::read_text_file(path);
  CHECK(bytes.size() == kHeaderBytes + d.size() * (packed_bytes(9) + kProvenanceBytes));

  std::string bad = bytes;
  bad[0] = 'X';
  io::write_text_file(dir / "magic.pdct", bad);
  CHECK_THROWS_AS(load_dictionary(dir / "magic.pdct"), FormatError);

  io::write_text_file(dir / "trunc.pdct", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_dictionary(dir / "trunc.pdct"), FormatError);

  io::write_text_file(dir / "head.pdct", bytes.substr(0, 7));
  CHECK_THROWS_AS(load_dictionary(dir / "head.pdct"), FormatError);
}

TEST_CASE("dictionary stats") {
  Rng rng(13);
  const auto d = random_dictionary(rng, 3, 100, 20);
  const auto s = compute_stats(d, 500, 1);
  CHECK(s.count == 100);
  CHECK(s.patch_size == 3);
  std::size_t centers = 0;
  for (auto c : s.center_labels) centers += c;
  CHECK(centers == 100);
  std::size_t pairs = 0;
  for (auto c : s.pair_histogram) pairs += c;
  CHECK(pairs == s.sampled_pairs);
}
