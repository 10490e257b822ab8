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
#include <vector>

#include "handlab/config.hpp"

namespace handlab::pipeline {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string_view tool_version();

/// generate, train-seg, build-dict, restore, gate, finetune-seg, train-reg, eval, ablation.
const std::vector<std::string>& stage_names();
/// Stages whose outputs the named stage reads.
const std::vector<std::string>& stage_dependencies(const std::string& stage);

struct StageRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  /// Paths relative to the run root, mapped to SHA-256.
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  double duration_s = 0.0;
};

struct RunManifest {
  std::string tool_version;
  std::uint64_t seed = 0;
  std::map<std::string, StageRecord> stages;

  static RunManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct StageOutcome {
  std::string stage;
  bool ran = false;
  std::string reason;
  double duration_s = 0.0;
};

/// Stage runner over one output root. A stage is skipped when its config
/// hash, recorded input hashes and recorded output hashes all still match;
/// within `run_all`, every stage downstream of one that ran runs as well.
class Pipeline {
 public:
  explicit Pipeline(config::PipelineConfig cfg);

  const config::PipelineConfig& config() const { return cfg_; }
  const std::filesystem::path& root() const { return root_; }
  const RunManifest& manifest() const { return manifest_; }
  std::filesystem::path manifest_path() const { return root_ / "manifest.json"; }

  /// Throws DependencyError naming the producing stage when an upstream
  /// artifact is missing or no longer matches its recorded hash.
  StageOutcome run_stage(const std::string& name, bool force = false);
  std::vector<StageOutcome> run_all(bool include_ablation = true);

  /// Why the stage would run now, or empty when it is up to date.
  std::string stale_reason(const std::string& name) const;

  std::uint64_t stage_seed(const std::string& name) const;
  std::string stage_config_hash(const std::string& name) const;

 private:
  StageOutcome execute(const std::string& name, const std::string& reason);
  std::map<std::string, std::string> gather_inputs(const std::string& name) const;

  config::PipelineConfig cfg_;
  std::filesystem::path root_;
  RunManifest manifest_;
};

// Artifact locations relative to the run root.
namespace paths {
inline const char* const kData = "data";
inline const char* const kSegPretrained = "models/seg_pretrained.bin";
inline const char* const kSegFinetuned = "models/seg_finetuned.bin";
inline const char* const kReg = "models/reg.bin";
inline const char* const kDictionary = "dict/dictionary.pdct";
inline const char* const kRestoreDir = "restore";
inline const char* const kGateReport = "gate/gate_report.csv";
inline const char* const kStream = "gate/stream.json";
inline const char* const kEvalDir = "eval";
inline const char* const kAblationDir = "ablation";
}  // namespace paths

}  // namespace handlab::pipeline
