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

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "handlab/patchdict.hpp"

// Restoration of noisy part-label maps by aligning every foreground pixel's
// local patch with its nearest synthetic patches.
namespace handlab::restoration {

enum class PairwiseKind { kPottsCenter, kOverlapHamming };
enum class Method { kCenter, kVote, kCrfPotts, kCrfOverlap };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct RestorationConfig {
  int window = 17;
  double crf_alpha = 1.0;
  int crf_ranks = 10;
  PairwiseKind crf_pairwise_kind = PairwiseKind::kPottsCenter;
  int crf_max_sweeps = 20;

  void validate() const;
};

/// Ranked neighbors for every foreground pixel of the queried map.
class RankedNeighborField {
 public:
  RankedNeighborField() = default;
  RankedNeighborField(int width, int height, std::size_t ranks, int patch_size);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t ranks() const { return ranks_; }
  int patch_size() const { return patch_size_; }

  bool has(int u, int v) const { return slot_[index(u, v)] >= 0; }
  std::span<const patchdict::Neighbor> at(int u, int v) const;
  void set(int u, int v, const patchdict::NNQueryResult& result);
  std::size_t entries() const { return entries_.size() / std::max<std::size_t>(1, ranks_); }

 private:
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width_ + u; }

  int width_ = 0;
  int height_ = 0;
  std::size_t ranks_ = 0;
  int patch_size_ = 0;
  std::vector<std::int32_t> slot_;
  std::vector<patchdict::Neighbor> entries_;
};

/// One exact k-NN query per foreground pixel of `pred`.
RankedNeighborField query_field(const LabelMap& pred, const patchdict::PatchDictionary& d, std::size_t k,
                                int jobs = 1);

/// Each foreground pixel takes its rank-0 patch's center label.
LabelMap restore_center(const RankedNeighborField& field, const patchdict::PatchDictionary& d);

/// Per-pixel label tallies of the windowed vote; index = label.
using VoteTally = std::array<std::uint32_t, kNumLabels>;

/// Tally for pixel (u, v): every foreground neighbor k in the window whose
/// rank-0 patch covers (u, v) votes for the covering cell's label.
VoteTally vote_tally(const RankedNeighborField& field, const patchdict::PatchDictionary& d, int window, int u, int v);

/// Argmax of the windowed vote, ties to the smallest label.
LabelMap restore_vote(const RankedNeighborField& field, const patchdict::PatchDictionary& d,
                      const RestorationConfig& cfg);

/// Pairwise CRF over the foreground pixels of a field: variable i picks one of
/// its `ranks` neighbors; unary = that neighbor's Hamming distance.
class CrfModel {
 public:
  CrfModel(const RankedNeighborField& field, const patchdict::PatchDictionary& d, PairwiseKind kind, double alpha,
           std::size_t ranks = 0);

  std::size_t variables() const { return pixels_.size(); }
  std::size_t ranks() const { return ranks_; }
  double alpha() const { return alpha_; }
  PairwiseKind kind() const { return kind_; }

  double unary(std::size_t var, std::size_t rank) const;
  /// Pairwise cost b(x_i, x_j) for 4-neighbors i, j.
  double pairwise(std::size_t i, std::size_t rank_i, std::size_t j, std::size_t rank_j) const;
  std::uint32_t patch_id(std::size_t var, std::size_t rank) const;
  std::pair<int, int> pixel(std::size_t var) const { return pixels_[var]; }

  /// Neighbor variable ids of var (4-connected, foreground only).
  std::span<const std::uint32_t> neighbors(std::size_t var) const;
  /// Each undirected edge once, i < j.
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges() const { return edges_; }

  int width() const { return width_; }
  int height() const { return height_; }
  const patchdict::PatchDictionary& dictionary() const { return *dict_; }

 private:
  const patchdict::PatchDictionary* dict_;
  PairwiseKind kind_;
  double alpha_;
  std::size_t ranks_;
  int width_;
  int height_;
  std::vector<std::pair<int, int>> pixels_;
  std::vector<patchdict::Neighbor> choices_;  // variables x ranks
  std::vector<std::uint32_t> adjacency_offsets_;
  std::vector<std::uint32_t> adjacency_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges_;
};

using Assignment = std::vector<std::uint32_t>;

/// E(x) = sum_i u(x_i) + alpha * sum_{i~j} b(x_i, x_j). Throws ContractError
/// on a rank out of range or a wrong-sized assignment.
double crf_energy(const CrfModel& model, const Assignment& x);

struct IcmResult {
  Assignment assignment;
  LabelMap labels;
  /// Energy of the initial assignment followed by the energy after each sweep.
  std::vector<double> energy_trace;
  int sweeps = 0;
};

/// Iterated conditional modes from the all-zero (rank-0) assignment, raster
/// sweeps; a variable moves only on strict local improvement.
IcmResult crf_icm(const CrfModel& model, int max_sweeps);

/// Dispatches to the configured restoration method.
LabelMap restore(const LabelMap& pred, const patchdict::PatchDictionary& d, Method method,
                 const RestorationConfig& cfg, int jobs = 1, std::vector<double>* energy_trace = nullptr);

/// Picks the alpha from `grid` with the highest mean per-pixel accuracy of
/// CRF restoration over (prediction, truth) pairs; ties keep the earlier value.
double select_crf_alpha(std::span<const LabelMap> predictions, std::span<const LabelMap> truths,
                        const patchdict::PatchDictionary& d, PairwiseKind kind, const RestorationConfig& cfg,
                        std::span<const double> grid, int jobs = 1);

}  // namespace handlab::restoration
