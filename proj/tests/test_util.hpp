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

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <string>

#include "handlab/common.hpp"

namespace handlab::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("handlab_" + tag + "_" + std::to_string(counter()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  static std::uint64_t counter() {
    static std::uint64_t n = static_cast<std::uint64_t>(::getpid()) << 20;
    return ++n;
  }
  std::filesystem::path path_;
};

/// Random label map: each pixel background with probability `p_bg`, else a
/// uniform label in [1, max_label].
inline LabelMap random_labels(Rng& rng, int w, int h, int max_label, double p_bg) {
  LabelMap m(w, h);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      m(u, v) = rng.uniform() < p_bg ? 0 : static_cast<std::uint8_t>(1 + rng.below(static_cast<std::uint64_t>(max_label)));
    }
  }
  return m;
}

/// Piecewise-constant blobs: labels change in square tiles, giving patches
/// with realistic repetition and many distance ties.
inline LabelMap blocky_labels(Rng& rng, int w, int h, int tile, int max_label) {
  LabelMap m(w, h);
  for (int tv = 0; tv < h; tv += tile) {
    for (int tu = 0; tu < w; tu += tile) {
      const auto l = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(max_label) + 1));
      for (int v = tv; v < std::min(h, tv + tile); ++v) {
        for (int u = tu; u < std::min(w, tu + tile); ++u) m(u, v) = l;
      }
    }
  }
  return m;
}

}  // namespace handlab::testing
