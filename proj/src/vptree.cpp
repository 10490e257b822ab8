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
#include "handlab/vptree.hpp"

#include <algorithm>

namespace handlab::patchdict {

VpTree VpTree::build(const PatchDictionary& d, std::uint64_t seed, std::size_t leaf_size) {
  VpTree tree;
  if (d.empty()) return tree;
  std::vector<std::uint32_t> ids(d.size());
  for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Rng rng(seed);
  std::vector<std::uint32_t> scratch;
  tree.nodes_.reserve(2 * d.size() / std::max<std::size_t>(1, leaf_size) + 1);
  tree.build_node(d, ids, 0, ids.size(), rng, std::max<std::size_t>(1, leaf_size), scratch);
  return tree;
}

std::int32_t VpTree::build_node(const PatchDictionary& d, std::vector<std::uint32_t>& ids, std::size_t begin,
                                std::size_t end, Rng& rng, std::size_t leaf_size, std::vector<std::uint32_t>& scratch) {
  const std::size_t n = end - begin;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  nodes_.emplace_back();

  auto make_leaf = [&] {
    Node& node = nodes_[static_cast<std::size_t>(self)];
    node.leaf = true;
    node.begin = static_cast<std::uint32_t>(bucket_.size());
    bucket_.insert(bucket_.end(), ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
    node.end = static_cast<std::uint32_t>(bucket_.size());
    return self;
  };

  if (n <= leaf_size) return make_leaf();

  std::swap(ids[begin], ids[begin + rng.below(n)]);
  const std::uint32_t vantage = ids[begin];

  std::vector<std::uint32_t> dist(n - 1);
  for (std::size_t i = begin + 1; i < end; ++i) dist[i - begin - 1] = d.distance(vantage, ids[i]);
  const auto [lo, hi] = std::minmax_element(dist.begin(), dist.end());
  const std::uint32_t min_d = *lo;
  const std::uint32_t max_d = *hi;
  // No split can separate equidistant points.
  if (min_d == max_d) return make_leaf();

  scratch.assign(dist.begin(), dist.end());
  const auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
  std::nth_element(scratch.begin(), mid, scratch.end());
  std::uint32_t mu = *mid;
  if (mu == max_d) {
    // Keep the outside child non-empty.
    mu = min_d;
    for (std::uint32_t x : dist) {
      if (x < max_d) mu = std::max(mu, x);
    }
  }

  std::vector<std::uint32_t> inside;
  std::vector<std::uint32_t> outside;
  for (std::size_t i = begin + 1; i < end; ++i) {
    (dist[i - begin - 1] <= mu ? inside : outside).push_back(ids[i]);
  }
  std::copy(inside.begin(), inside.end(), ids.begin() + static_cast<std::ptrdiff_t>(begin + 1));
  std::copy(outside.begin(), outside.end(), ids.begin() + static_cast<std::ptrdiff_t>(begin + 1 + inside.size()));
  const std::size_t split = begin + 1 + inside.size();

  const std::int32_t in_child = inside.empty() ? -1 : build_node(d, ids, begin + 1, split, rng, leaf_size, scratch);
  const std::int32_t out_child = outside.empty() ? -1 : build_node(d, ids, split, end, rng, leaf_size, scratch);
  Node& node = nodes_[static_cast<std::size_t>(self)];
  node.vantage = vantage;
  node.mu = mu;
  node.inside = in_child;
  node.outside = out_child;
  return self;
}

void VpTree::search(const PatchDictionary& d, const EncodedPatch& q, KBest& best) const {
  if (nodes_.empty()) return;
  // Explicit stack of (node, lower bound on distance to anything below it).
  struct Pending {
    std::int32_t node;
    std::uint32_t lower_bound;
  };
  std::vector<Pending> stack;
  stack.push_back({0, 0});
  while (!stack.empty()) {
    const Pending top = stack.back();
    stack.pop_back();
    if (top.lower_bound > best.bound()) continue;
    const Node& node = nodes_[static_cast<std::size_t>(top.node)];
    if (node.leaf) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t id = bucket_[i];
        best.offer(id, d.distance_to(q, id));
      }
      continue;
    }
    const std::uint32_t dv = d.distance_to(q, node.vantage);
    best.offer(node.vantage, dv);
    // Push the far side first so the near side is explored first.
    if (dv <= node.mu) {
      if (node.outside >= 0) stack.push_back({node.outside, node.mu + 1 - dv});
      if (node.inside >= 0) stack.push_back({node.inside, 0});
    } else {
      if (node.inside >= 0) stack.push_back({node.inside, dv - node.mu});
      if (node.outside >= 0) stack.push_back({node.outside, 0});
    }
  }
}

std::size_t VpTree::depth() const {
  if (nodes_.empty()) return 0;
  std::size_t best = 0;
  std::vector<std::pair<std::int32_t, std::size_t>> stack{{0, 1}};
  while (!stack.empty()) {
    const auto [id, level] = stack.back();
    stack.pop_back();
    best = std::max(best, level);
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.leaf) continue;
    if (node.inside >= 0) stack.push_back({node.inside, level + 1});
    if (node.outside >= 0) stack.push_back({node.outside, level + 1});
  }
  return best;
}

}  // namespace handlab::patchdict
