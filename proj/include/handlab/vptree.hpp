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
#pragma once

#include <cstdint>
#include <vector>

#include "handlab/patchdict.hpp"

namespace handlab::patchdict {

/// Vantage-point tree over dictionary ids under the Hamming metric.
///
/// Each inner node keeps a vantage id and an integer radius mu; the inside
/// child holds ids with d(vantage, x) <= mu, the outside child those with
/// d(vantage, x) >= mu + 1. A subtree is skipped only when its triangle
/// lower bound exceeds the current k-th distance, so equal-distance
/// candidates with smaller ids are never lost and results stay exact.
class VpTree {
 public:
  static VpTree build(const PatchDictionary& d, std::uint64_t seed, std::size_t leaf_size = 8);

  void search(const PatchDictionary& d, const EncodedPatch& q, KBest& best) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t depth() const;

 private:
  struct Node {
    std::uint32_t vantage = 0;
    std::uint32_t mu = 0;
    std::int32_t inside = -1;
    std::int32_t outside = -1;
    // Leaves reference [begin, end) of bucket_.
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    bool leaf = false;
  };

  std::int32_t build_node(const PatchDictionary& d, std::vector<std::uint32_t>& ids, std::size_t begin,
                          std::size_t end, Rng& rng, std::size_t leaf_size, std::vector<std::uint32_t>& scratch);

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> bucket_;
};

}  // namespace handlab::patchdict
