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
#include "handlab/patchdict.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "handlab/vptree.hpp"

namespace handlab::patchdict {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'T'};
constexpr std::size_t kScanBlock = 256;

inline std::uint32_t plane_distance(const std::uint64_t* a, const std::uint64_t* b, int words) {
  std::uint32_t total = 0;
  for (int w = 0; w < words; ++w) {
    std::uint64_t diff = 0;
    for (int p = 0; p < kBitsPerCell; ++p) diff |= a[p * words + w] ^ b[p * words + w];
    total += static_cast<std::uint32_t>(std::popcount(diff));
  }
  return total;
}

int words_for(int patch_size) { return (patch_size * patch_size + 63) / 64; }

void encode_into(std::span<const std::uint8_t> cells, int words, std::uint64_t* planes) {
  std::fill(planes, planes + static_cast<std::size_t>(kBitsPerCell) * words, 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::uint8_t label = cells[i];
    for (int p = 0; p < kBitsPerCell; ++p) {
      if ((label >> p) & 1U) planes[p * words + i / 64] |= std::uint64_t{1} << (i % 64);
    }
  }
}

void check_patch_size(int patch_size) {
  if (patch_size < 1 || patch_size % 2 == 0) throw ContractError("patch size must be odd and >= 1");
  if (patch_size > 255) throw ContractError("patch size too large");
}

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (in.size() - pos < sizeof(T) || pos > in.size()) throw FormatError("truncated dictionary file: " + path.string());
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(value);
}

}  // namespace

LabelPatch::LabelPatch(int side, std::vector<std::uint8_t> values) : size(side), cells(std::move(values)) {
  check_patch_size(side);
  if (cells.size() != static_cast<std::size_t>(side) * side) throw ContractError("patch cell count does not match side");
  for (std::uint8_t c : cells) {
    if (c > kNumParts) throw ContractError("patch label out of range");
  }
}

std::size_t packed_bytes(int patch_size) {
  const std::size_t bits = static_cast<std::size_t>(kBitsPerCell) * patch_size * patch_size;
  return (bits + 7) / 8;
}

std::vector<std::uint8_t> pack_cells(std::span<const std::uint8_t> cells) {
  std::vector<std::uint8_t> out((cells.size() * kBitsPerCell + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint8_t c : cells) {
    if (c >= (1U << kBitsPerCell)) throw ContractError("cell value does not fit in 5 bits");
    for (int b = 0; b < kBitsPerCell; ++b, ++bit) {
      if ((c >> b) & 1U) out[bit / 8] |= static_cast<std::uint8_t>(1U << (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint8_t> unpack_cells(std::span<const std::uint8_t> packed, std::size_t cell_count) {
  if (packed.size() * 8 < cell_count * kBitsPerCell) throw FormatError("packed patch too short");
  std::vector<std::uint8_t> cells(cell_count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < cell_count; ++i) {
    std::uint8_t c = 0;
    for (int b = 0; b < kBitsPerCell; ++b, ++bit) {
      if ((packed[bit / 8] >> (bit % 8)) & 1U) c |= static_cast<std::uint8_t>(1U << b);
    }
    cells[i] = c;
  }
  return cells;
}

int hamming_distance(const LabelPatch& a, const LabelPatch& b) {
  if (a.size != b.size || a.cells.size() != b.cells.size()) throw ContractError("hamming_distance: patch size mismatch");
  int d = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) d += a.cells[i] != b.cells[i];
  return d;
}

LabelPatch extract_patch(const LabelMap& map, int u, int v, int patch_size) {
  check_patch_size(patch_size);
  const int h = patch_size / 2;
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(patch_size) * patch_size, 0);
  for (int r = 0; r < patch_size; ++r) {
    const int y = v - h + r;
    for (int c = 0; c < patch_size; ++c) {
      const int x = u - h + c;
      if (map.labels.in_bounds(x, y)) cells[static_cast<std::size_t>(r) * patch_size + c] = map(x, y);
    }
  }
  LabelPatch p;
  p.size = patch_size;
  p.cells = std::move(cells);
  return p;
}

EncodedPatch encode_patch(const LabelPatch& patch) {
  check_patch_size(patch.size);
  EncodedPatch e;
  e.size = patch.size;
  const int words = words_for(patch.size);
  e.planes.resize(static_cast<std::size_t>(kBitsPerCell) * words);
  encode_into(patch.cells, words, e.planes.data());
  return e;
}

KBest::KBest(std::size_t k) : k_(k) {
  if (k == 0) throw ContractError("KBest: k must be >= 1");
  heap_.reserve(k);
}

namespace {
bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
}
}  // namespace

void KBest::offer(std::uint32_t id, std::uint32_t distance) {
  const Neighbor n{id, distance};
  if (heap_.size() < k_) {
    heap_.push_back(n);
    std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
    return;
  }
  if (!neighbor_less(n, heap_.front())) return;
  std::pop_heap(heap_.begin(), heap_.end(), neighbor_less);
  heap_.back() = n;
  std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
}

std::uint32_t KBest::bound() const {
  return full() ? heap_.front().distance : std::numeric_limits<std::uint32_t>::max();
}

NNQueryResult KBest::take_sorted() {
  std::sort_heap(heap_.begin(), heap_.end(), neighbor_less);
  return std::move(heap_);
}

PatchDictionary::PatchDictionary(int patch_size) : patch_size_(patch_size), words_per_plane_(words_for(patch_size)) {
  check_patch_size(patch_size);
}

void PatchDictionary::add(const LabelPatch& patch, PatchSource source) {
  if (patch.size != patch_size_) throw ContractError("dictionary patch size mismatch");
  if (sources_.size() >= std::numeric_limits<std::uint32_t>::max()) throw ContractError("dictionary full");
  cells_.insert(cells_.end(), patch.cells.begin(), patch.cells.end());
  const std::size_t offset = planes_.size();
  planes_.resize(offset + static_cast<std::size_t>(kBitsPerCell) * words_per_plane_);
  encode_into(patch.cells, words_per_plane_, planes_.data() + offset);
  sources_.push_back(source);
  index_.reset();
}

std::span<const std::uint8_t> PatchDictionary::cells(std::uint32_t id) const {
  return {cells_.data() + static_cast<std::size_t>(id) * cells_per_patch(), static_cast<std::size_t>(cells_per_patch())};
}

LabelPatch PatchDictionary::patch(std::uint32_t id) const {
  const auto c = cells(id);
  LabelPatch p;
  p.size = patch_size_;
  p.cells.assign(c.begin(), c.end());
  return p;
}

std::uint32_t PatchDictionary::distance(std::uint32_t a, std::uint32_t b) const {
  return plane_distance(planes(a), planes(b), words_per_plane_);
}

std::uint32_t PatchDictionary::distance_to(const EncodedPatch& q, std::uint32_t id) const {
  return plane_distance(q.planes.data(), planes(id), words_per_plane_);
}

PatchDictionary extract_patches(std::span<const LabelMap> maps, int patch_size, int stride, bool foreground_only) {
  check_patch_size(patch_size);
  if (stride < 1) throw ContractError("stride must be >= 1");
  PatchDictionary d(patch_size);
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const LabelMap& map = maps[m];
    if (patch_size > std::min(map.width(), map.height())) throw ContractError("patch size exceeds map dimensions");
    for (int v = 0; v < map.height(); v += stride) {
      for (int u = 0; u < map.width(); u += stride) {
        if (foreground_only && map(u, v) == 0) continue;
        d.add(extract_patch(map, u, v, patch_size),
              {static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(map.labels.index(u, v))});
      }
    }
  }
  if (d.empty()) throw EmptyDictionaryError("no eligible patch centers");
  return d;
}

PatchDictionary subsample(const PatchDictionary& d, std::size_t max_count, std::uint64_t seed) {
  if (d.size() <= max_count) return d;
  std::vector<std::uint32_t> ids(d.size());
  for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first max_count slots form the sample.
  for (std::size_t i = 0; i < max_count; ++i) {
    const std::size_t j = i + rng.below(ids.size() - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(max_count);
  std::sort(ids.begin(), ids.end());
  PatchDictionary out(d.patch_size());
  for (std::uint32_t id : ids) out.add(d.patch(id), d.source(id));
  return out;
}

PatchDictionary build_index(PatchDictionary d, std::uint64_t seed) {
  if (d.empty()) throw EmptyDictionaryError("cannot index an empty dictionary");
  d.set_index(std::make_shared<const VpTree>(VpTree::build(d, seed)));
  return d;
}

NNQueryResult linear_scan(const EncodedPatch& q, const PatchDictionary& d, std::size_t k) {
  KBest best(k);
  std::array<std::uint32_t, kScanBlock> dist{};
  const auto n = static_cast<std::uint32_t>(d.size());
  for (std::uint32_t start = 0; start < n; start += kScanBlock) {
    const std::uint32_t stop = std::min<std::uint32_t>(n, start + kScanBlock);
    for (std::uint32_t id = start; id < stop; ++id) dist[id - start] = d.distance_to(q, id);
    for (std::uint32_t id = start; id < stop; ++id) {
      if (dist[id - start] <= best.bound()) best.offer(id, dist[id - start]);
    }
  }
  return best.take_sorted();
}

NNQueryResult nn_search(const EncodedPatch& q, const PatchDictionary& d, std::size_t k) {
  if (q.size != d.patch_size()) throw ContractError("nn_search: query patch size does not match dictionary");
  if (k < 1 || k > d.size()) throw ContractError("nn_search: k out of range");
  if (!d.indexed()) return linear_scan(q, d, k);
  KBest best(k);
  d.index()->search(d, q, best);
  return best.take_sorted();
}

NNQueryResult nn_search(const LabelPatch& q, const PatchDictionary& d, std::size_t k) {
  if (q.size != d.patch_size()) throw ContractError("nn_search: query patch size does not match dictionary");
  return nn_search(encode_patch(q), d, k);
}

void save_dictionary(const PatchDictionary& d, const fs::path& path) {
  std::string out(kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, kFormatVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(d.patch_size()));
  put_le<std::uint64_t>(out, d.size());
  for (std::uint32_t id = 0; id < d.size(); ++id) {
    put_le<std::uint32_t>(out, d.source(id).image_id);
    put_le<std::uint32_t>(out, d.source(id).pixel_index);
  }
  for (std::uint32_t id = 0; id < d.size(); ++id) {
    const auto packed = pack_cells(d.cells(id));
    out.append(reinterpret_cast<const char*>(packed.data()), packed.size());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

PatchDictionary load_dictionary(const fs::path& path, std::uint64_t index_seed) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < kHeaderBytes || in.compare(0, 4, std::string(kMagic, 4)) != 0) {
    throw FormatError("not a patch dictionary (bad magic): " + path.string());
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint16_t>(in, pos, path);
  if (version != kFormatVersion) throw FormatError("unsupported dictionary version " + std::to_string(version));
  const auto patch_size = get_le<std::uint16_t>(in, pos, path);
  if (patch_size == 0 || patch_size % 2 == 0) throw FormatError("invalid patch size in " + path.string());
  const auto count = get_le<std::uint64_t>(in, pos, path);
  const std::size_t per_patch = packed_bytes(patch_size);
  const std::size_t remaining = in.size() - pos;
  if (count > remaining / (kProvenanceBytes + per_patch) || remaining != count * (kProvenanceBytes + per_patch)) {
    throw FormatError("dictionary size does not match header count (truncated?): " + path.string());
  }
  std::vector<PatchSource> sources(count);
  for (auto& s : sources) {
    s.image_id = get_le<std::uint32_t>(in, pos, path);
    s.pixel_index = get_le<std::uint32_t>(in, pos, path);
  }
  PatchDictionary d(patch_size);
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(in.data());
  for (std::size_t i = 0; i < count; ++i) {
    auto cells = unpack_cells({bytes + pos, per_patch}, static_cast<std::size_t>(patch_size) * patch_size);
    for (std::uint8_t c : cells) {
      if (c > kNumParts) throw FormatError("label out of range in " + path.string());
    }
    LabelPatch p;
    p.size = patch_size;
    p.cells = std::move(cells);
    d.add(p, sources[i]);
    pos += per_patch;
  }
  if (d.empty()) return d;
  return build_index(std::move(d), index_seed);
}

DictionaryStats compute_stats(const PatchDictionary& d, std::size_t sample_pairs, std::uint64_t seed, int buckets) {
  DictionaryStats s;
  s.count = d.size();
  s.patch_size = d.patch_size();
  s.file_bytes = kHeaderBytes + d.size() * (kProvenanceBytes + packed_bytes(d.patch_size()));
  for (std::uint32_t id = 0; id < d.size(); ++id) ++s.center_labels[d.center_label(id)];
  const std::uint32_t max_distance = static_cast<std::uint32_t>(d.cells_per_patch());
  buckets = std::max(1, buckets);
  s.bucket_width = (max_distance + 1 + buckets - 1) / static_cast<std::uint32_t>(buckets);
  s.pair_histogram.assign(static_cast<std::size_t>(buckets), 0);
  if (d.size() < 2) return s;
  Rng rng(seed);
  for (std::size_t i = 0; i < sample_pairs; ++i) {
    const auto a = static_cast<std::uint32_t>(rng.below(d.size()));
    auto b = static_cast<std::uint32_t>(rng.below(d.size() - 1));
    if (b >= a) ++b;
    ++s.pair_histogram[d.distance(a, b) / s.bucket_width];
  }
  s.sampled_pairs = sample_pairs;
  return s;
}

}  // namespace handlab::patchdict
