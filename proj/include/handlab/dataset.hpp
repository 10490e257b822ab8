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
#include <string>
#include <string_view>
#include <vector>

#include "handlab/datagen.hpp"

namespace handlab::dataset {

enum class Split { kSynth, kReal, kTest };

inline constexpr std::array<Split, 3> kAllSplits{Split::kSynth, Split::kReal, Split::kTest};

std::string_view split_name(Split split);

struct Sample {
  std::string id;
  DepthMap depth;
  LabelMap labels;
  JointSet joints;
};

struct DatasetConfig {
  int n_synth = 1;
  int n_real = 1;
  int n_test = 1;
  std::uint64_t seed = 0;
  datagen::GeneratorConfig generator;
  /// Applied to the real-proxy and test splits; its seed field is replaced per sample.
  datagen::DomainShiftConfig noise;

  void validate() const;
};

/// Zero-padded sample id, e.g. "000042".
std::string sample_id(int index);

/// Pure function of (split, index, cfg): resamples the pose until the hand
/// renders inside the frame.
Sample generate_sample(Split split, int index, const DatasetConfig& cfg);

/// Writes `<root>/{synth,real,test}/<id>.{depth.pgm,labels.pgm,joints.csv}`
/// plus `<root>/manifest.json`. Returns every file written, sorted.
std::vector<std::filesystem::path> generate_dataset(const std::filesystem::path& root, const DatasetConfig& cfg,
                                                    int jobs = 0);

void write_sample(const std::filesystem::path& root, Split split, const Sample& sample);
Sample read_sample(const std::filesystem::path& root, Split split, const std::string& id);

/// Sample ids present on disk for a split, sorted.
std::vector<std::string> list_samples(const std::filesystem::path& root, Split split);
std::vector<Sample> load_split(const std::filesystem::path& root, Split split, int jobs = 0);

std::vector<std::filesystem::path> sample_files(const std::filesystem::path& root, Split split, const std::string& id);

}  // namespace handlab::dataset
