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

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace handlab {

// Part labels: 0 = background, 1 = palm, 2..20 finger segments.
inline constexpr int kNumParts = 20;
inline constexpr int kNumLabels = kNumParts + 1;
inline constexpr int kNumJoints = 14;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// The hand could not be rendered inside the frame; callers resample.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class EmptyDictionaryError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was asked to run before its upstream artifacts exist.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Row-major 2-D grid addressed as (u = column, v = row).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    if (width < 0 || height < 0) throw ContractError("negative grid dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
  }

  T& operator()(int u, int v) { return data_[index(u, v)]; }
  const T& operator()(int u, int v) const { return data_[index(u, v)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Grid& other) const { return width_ == other.width_ && height_ == other.height_; }
  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct LabelMap {
  Grid<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int width, int height) : labels(width, height, 0) {}
  explicit LabelMap(Grid<std::uint8_t> g) : labels(std::move(g)) {}

  int width() const { return labels.width(); }
  int height() const { return labels.height(); }
  std::uint8_t operator()(int u, int v) const { return labels(u, v); }
  std::uint8_t& operator()(int u, int v) { return labels(u, v); }
  std::size_t foreground_count() const;
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Depth in normalized units; background pixels carry value 0 and mask 0.
struct DepthMap {
  Grid<double> values;
  Grid<std::uint8_t> foreground;

  DepthMap() = default;
  DepthMap(int width, int height) : values(width, height, 0.0), foreground(width, height, 0) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }
  bool is_foreground(int u, int v) const { return foreground(u, v) != 0; }
  std::size_t foreground_count() const;
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

struct Joint {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
  friend bool operator==(const Joint&, const Joint&) = default;
};

using JointSet = std::array<Joint, kNumJoints>;

/// Seeded generator. The engine's output sequence is fixed by the standard;
/// the helpers below avoid the implementation-defined std distributions so
/// that a seed means the same thing on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1), first + static_cast<std::ptrdiff_t>(j));
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with a stream id (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Worker cap used by parallel_for when jobs <= 0 is passed.
void set_default_jobs(int jobs);
int default_jobs();

/// Runs fn(i) for i in [0, n) over up to `jobs` threads with static chunking.
/// fn must only write state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int jobs = 0);

}  // namespace handlab
