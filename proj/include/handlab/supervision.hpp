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
#include <string>
#include <vector>

#include "handlab/common.hpp"

// Weak supervision: judge restored label maps against known joint positions
// and assemble the mixed fine-tuning stream from the ones that improved.
namespace handlab::supervision {

struct JointLabelTable {
  std::array<std::vector<std::uint8_t>, kNumJoints> labels;

  /// Tips map to the tip segment, knuckles to the proximal segment, wrist and
  /// palm center to the palm, thumb/little bases to palm + proximal segment.
  static JointLabelTable standard();
  void validate() const;
};

struct Point2 {
  double u = 0.0;
  double v = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

using Barycenters = std::array<std::optional<Point2>, kNumJoints>;

/// Unweighted mean pixel coordinate of each joint's labels; empty when absent.
Barycenters part_barycenters(const LabelMap& m, const JointLabelTable& table);

/// Penalty charged per joint with no labeled pixels: the image diagonal.
double absent_penalty(const LabelMap& m);

/// Sum over joints of ||barycenter - (u, v)||, absent joints charged absent_penalty.
double quality_measure(const LabelMap& m, const JointSet& joints, const JointLabelTable& table);

struct QualityReport {
  Barycenters before;
  Barycenters after;
  double sum_before = 0.0;
  double sum_after = 0.0;
  bool accepted = false;
  std::string reason;
};

/// Accepts iff quality_measure(restored) < quality_measure(pred).
QualityReport gate_sample(const LabelMap& pred, const LabelMap& restored, const JointSet& joints,
                          const JointLabelTable& table);

struct PseudoLabel {
  std::string sample_id;
  LabelMap labels;
};

struct Rejection {
  std::string sample_id;
  std::string reason;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> accepted;
  std::vector<Rejection> rejected;

  double rejection_rate() const;
};

enum class Source { kSynthetic, kPseudo };
std::string_view source_name(Source s);

struct StreamEntry {
  Source source = Source::kSynthetic;
  /// Index into the synthetic set or into PseudoLabelSet::accepted.
  std::size_t index = 0;
  std::string sample_id;
  friend bool operator==(const StreamEntry&, const StreamEntry&) = default;
};

struct FinetuneStream {
  std::vector<StreamEntry> entries;
  /// Set when the pseudo set was empty; the stream is then plain supervised data.
  bool degenerate = false;

  std::size_t count(Source s) const;
};

/// Mixes `ratio` synthetic samples per pseudo-labeled sample (all synthetic
/// samples when fewer are available) and shuffles deterministically.
FinetuneStream build_finetune_stream(std::span<const std::string> synth_ids, const PseudoLabelSet& pseudo, int ratio,
                                     std::uint64_t seed);

/// True iff every pseudo entry names an accepted sample and none names a rejected one.
bool audit_stream(const FinetuneStream& stream, const PseudoLabelSet& pseudo);

}  // namespace handlab::supervision
