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
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "handlab/common.hpp"

namespace handlab::config {

// ---------------------------------------------------------------------------
// Text format: `[section]` headers, `key = value` lines, `#` comments. Values
// are quoted strings, true/false, numbers, or flat arrays of numbers.

using Value = std::variant<bool, double, std::string, std::vector<double>>;
using Section = std::map<std::string, Value>;
using Document = std::map<std::string, Section>;

/// Throws ConfigError with the offending line number on syntax errors.
Document parse(const std::string& text);
std::string render(const Document& doc);

// ---------------------------------------------------------------------------

struct RunSection {
  std::uint64_t seed = 7;
  std::string out = "runs/default";
  int jobs = 0;
};

struct DataSection {
  int n_synth = 1500;
  int n_real = 500;
  int n_test = 200;
  int image_size = 48;
};

struct NoiseSection {
  double sigma = 0.01;
  double hole_probability = 0.03;
  double quantization_step = 0.004;
  int edge_erosion_radius = 1;
};

struct DictSection {
  int patch_size = 27;
  int stride = 1;
  /// Fraction of the synthetic split (leading ids) whose labels feed the dictionary.
  double source_fraction = 1.0 / 3.0;
  /// 0 keeps every extracted patch; otherwise a seeded subsample of this size.
  int max_patches = 0;
  bool foreground_only = true;
};

struct RestoreSection {
  std::string method = "vote";
  int window = 17;
  int ranks = 10;
  double alpha = 1.0;
  std::string pairwise = "potts";
  int max_sweeps = 20;
  /// When non-empty, crf methods pick alpha from this grid on the real-proxy split.
  std::vector<double> alpha_grid;
};

struct SegSection {
  int patch = 9;
  int hidden = 64;
  int contrast_kernel = 9;
  int epochs = 100;
  double lr = 0.1;
  double lr_decay = 1e-5;
  int pixels_per_image = 0;
};

struct FinetuneSection {
  int epochs = 10;
  int ratio = 9;
  double lr = 0.1;
  double lr_decay = 1e-5;
  int pixels_per_image = 0;
};

struct RegSection {
  int epochs = 150;
  double lr = 0.05;
  int batch = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int hidden = 128;
  int mask_radius = 1;
  /// "predicted" (fine-tuned segmenter output) or "truth" (diagnostics only).
  std::string seg_source = "predicted";
};

struct MetricsSection {
  std::vector<double> thresholds;
  double mm_per_pixel = 4.0;
  double mm_per_depth_unit = 100.0;
};

struct PipelineConfig {
  RunSection run;
  DataSection data;
  NoiseSection noise;
  DictSection dict;
  RestoreSection restore;
  SegSection seg;
  FinetuneSection finetune;
  RegSection reg;
  MetricsSection metrics;

  PipelineConfig();

  /// Unknown sections or keys and out-of-range values throw ConfigError.
  static PipelineConfig from_document(const Document& doc);
  static PipelineConfig from_text(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);

  Document to_document() const;
  std::string to_text() const;
  /// Canonical rendering of the named sections, used for stage hashing.
  std::string section_text(const std::vector<std::string>& sections) const;

  void validate() const;
};

}  // namespace handlab::config
