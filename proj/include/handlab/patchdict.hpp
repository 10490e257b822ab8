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

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "handlab/common.hpp"

namespace handlab::patchdict {

/// Bits per stored cell; 21 label values fit in 5 bits.
inline constexpr int kBitsPerCell = 5;
inline constexpr int kDefaultPatchSize = 27;

/// Square label patch, row-major, odd side so a center cell exists.
struct LabelPatch {
  int size = 0;
  std::vector<std::uint8_t> cells;

  LabelPatch() = default;
  LabelPatch(int side, std::vector<std::uint8_t> values);

  std::uint8_t at(int row, int col) const { return cells[static_cast<std::size_t>(row) * size + col]; }
  std::uint8_t center() const { return at(size / 2, size / 2); }
  friend bool operator==(const LabelPatch&, const LabelPatch&) = default;
};

std::size_t packed_bytes(int patch_size);
std::vector<std::uint8_t> pack_cells(std::span<const std::uint8_t> cells);
std::vector<std::uint8_t> unpack_cells(std::span<const std::uint8_t> packed, std::size_t cell_count);

/// Number of cells whose labels differ. Throws ContractError on size mismatch.
int hamming_distance(const LabelPatch& a, const LabelPatch& b);

/// Patch centered on (u, v); cells outside the map read as background (0).
LabelPatch extract_patch(const LabelMap& map, int u, int v, int patch_size);

struct PatchSource {
  std::uint32_t image_id = 0;
  std::uint32_t pixel_index = 0;
  friend bool operator==(const PatchSource&, const PatchSource&) = default;
};

struct Neighbor {
  std::uint32_t id = 0;
  std::uint32_t distance = 0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Ascending by (distance, id).
using NNQueryResult = std::vector<Neighbor>;

/// Patch in the search encoding: five bit planes of ceil(P*P/64) words, one
/// plane per label bit. Two cells differ iff any plane differs.
struct EncodedPatch {
  int size = 0;
  std::vector<std::uint64_t> planes;
};

EncodedPatch encode_patch(const LabelPatch& patch);

/// Bounded best-k collector under the total order (distance, id).
class KBest {
 public:
  explicit KBest(std::size_t k);
  void offer(std::uint32_t id, std::uint32_t distance);
  bool full() const { return heap_.size() == k_; }
  /// Largest distance that can still enter; UINT32_MAX while not full.
  std::uint32_t bound() const;
  NNQueryResult take_sorted();

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

class VpTree;

class PatchDictionary {
 public:
  PatchDictionary() = default;
  explicit PatchDictionary(int patch_size);

  void add(const LabelPatch& patch, PatchSource source);

  int patch_size() const { return patch_size_; }
  std::size_t size() const { return sources_.size(); }
  bool empty() const { return sources_.empty(); }
  int cells_per_patch() const { return patch_size_ * patch_size_; }
  int words_per_plane() const { return words_per_plane_; }

  std::span<const std::uint8_t> cells(std::uint32_t id) const;
  LabelPatch patch(std::uint32_t id) const;
  std::uint8_t cell(std::uint32_t id, int row, int col) const {
    return cells_[static_cast<std::size_t>(id) * cells_per_patch() + static_cast<std::size_t>(row) * patch_size_ + col];
  }
  std::uint8_t center_label(std::uint32_t id) const { return cell(id, patch_size_ / 2, patch_size_ / 2); }
  const PatchSource& source(std::uint32_t id) const { return sources_[id]; }
  const std::uint64_t* planes(std::uint32_t id) const {
    return planes_.data() + static_cast<std::size_t>(id) * kBitsPerCell * words_per_plane_;
  }

  std::uint32_t distance(std::uint32_t a, std::uint32_t b) const;
  std::uint32_t distance_to(const EncodedPatch& q, std::uint32_t id) const;

  bool indexed() const { return index_ != nullptr; }
  const VpTree* index() const { return index_.get(); }
  void set_index(std::shared_ptr<const VpTree> index) { index_ = std::move(index); }
  void drop_index() { index_.reset(); }

  /// Content equality (patch size, cells, provenance); the index is ignored.
  friend bool operator==(const PatchDictionary& a, const PatchDictionary& b) {
    return a.patch_size_ == b.patch_size_ && a.cells_ == b.cells_ && a.sources_ == b.sources_;
  }

 private:
  int patch_size_ = 0;
  int words_per_plane_ = 0;
  std::vector<std::uint8_t> cells_;
  std::vector<std::uint64_t> planes_;
  std::vector<PatchSource> sources_;
  std::shared_ptr<const VpTree> index_;
};

/// One patch per eligible center on the stride grid (u % stride == 0 and
/// v % stride == 0); provenance image id is the position in `maps`.
/// Throws EmptyDictionaryError when no center qualifies.
PatchDictionary extract_patches(std::span<const LabelMap> maps, int patch_size, int stride, bool foreground_only);

/// Uniform random subset of at most `max_count` patches, original order kept.
PatchDictionary subsample(const PatchDictionary& d, std::size_t max_count, std::uint64_t seed);

/// Returns a copy carrying a vantage-point tree; construction is a pure function of seed.
PatchDictionary build_index(PatchDictionary d, std::uint64_t seed = 0);

/// Exact k nearest patches; uses the index when present, a blocked linear scan otherwise.
NNQueryResult nn_search(const LabelPatch& q, const PatchDictionary& d, std::size_t k);
NNQueryResult nn_search(const EncodedPatch& q, const PatchDictionary& d, std::size_t k);
NNQueryResult linear_scan(const EncodedPatch& q, const PatchDictionary& d, std::size_t k);

inline constexpr std::uint16_t kFormatVersion = 1;
/// magic(4) + version(2) + patch_size(2) + count(8)
inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::size_t kProvenanceBytes = 8;

void save_dictionary(const PatchDictionary& d, const std::filesystem::path& path);
/// Rebuilds the index with `index_seed`. Throws FormatError on bad magic,
/// version or truncation.
PatchDictionary load_dictionary(const std::filesystem::path& path, std::uint64_t index_seed = 0);

struct DictionaryStats {
  std::size_t count = 0;
  int patch_size = 0;
  std::size_t file_bytes = 0;
  std::array<std::size_t, kNumLabels> center_labels{};
  /// Pairwise distances over sampled pairs, bucketed by `bucket_width`.
  std::vector<std::size_t> pair_histogram;
  std::uint32_t bucket_width = 1;
  std::size_t sampled_pairs = 0;
};

DictionaryStats compute_stats(const PatchDictionary& d, std::size_t sample_pairs, std::uint64_t seed, int buckets = 16);

}  // namespace handlab::patchdict
