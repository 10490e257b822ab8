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
#include <utility>
#include <vector>

#include "handlab/common.hpp"
#include "handlab/datagen.hpp"

namespace handlab::metrics {

/// Per-class correct/total counts over truth-foreground pixels. Counts from
/// several frames add up; scores are computed from the pooled counts.
struct SegCounts {
  std::array<std::uint64_t, kNumParts> correct{};
  std::array<std::uint64_t, kNumParts> total{};

  SegCounts& operator+=(const SegCounts& other);
};

struct SegScore {
  double per_pixel = 0.0;
  double per_class = 0.0;
  /// Recall per label 1..20; empty for classes absent from the truth.
  std::array<std::optional<double>, kNumParts> recall;
};

SegCounts seg_counts(const LabelMap& pred, const LabelMap& truth);
SegScore score(const SegCounts& counts);
SegScore seg_accuracy(const LabelMap& pred, const LabelMap& truth);
SegScore seg_accuracy(std::span<const LabelMap> pred, std::span<const LabelMap> truth);

/// Per-joint errors of one frame in millimetres.
struct FrameError {
  std::array<double, kNumJoints> e2d{};
  std::array<double, kNumJoints> e3d{};

  double mean_2d() const;
  double mean_3d() const;
  double max_3d() const;
};

FrameError pose_error(const JointSet& pred, const JointSet& truth, const datagen::UnitScale& scale);

struct CurvePoint {
  double threshold = 0.0;
  double fraction = 0.0;
};

/// 0, 4, ..., 80 mm.
std::vector<double> default_thresholds();

/// Fraction of frames whose maximum joint error is <= t, for each t.
std::vector<CurvePoint> threshold_curve(std::span<const double> frame_max_errors, std::span<const double> thresholds);

struct PoseScore {
  double mean_2d = 0.0;
  double mean_3d = 0.0;
  std::array<double, kNumJoints> joint_2d{};
  std::array<double, kNumJoints> joint_3d{};
  std::vector<CurvePoint> curve;
  std::size_t frames = 0;
};

PoseScore aggregate(std::span<const FrameError> frames, std::span<const double> thresholds);

// ---------------------------------------------------------------------------
// Tables

/// One row per named score: per-pixel, per-class, then recall of labels 1..20
/// (empty cell for absent classes).
std::string seg_scores_csv(std::span<const std::pair<std::string, SegScore>> scores);
std::string pose_scores_csv(const PoseScore& s);
std::string threshold_curve_csv(std::span<const CurvePoint> curve);

struct RunResult {
  std::string name;
  std::optional<SegScore> seg;
  std::optional<PoseScore> pose;
};

struct ComparisonTable {
  std::vector<std::string> headers;
  /// Cells already formatted; "-" marks values the run does not have.
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  std::string to_text() const;
};

/// One row per run: per-pixel and per-class accuracy (%), mean 2-D/3-D error
/// (mm), each followed by its delta against the baseline run. Throws
/// ContractError when no run is named `baseline`.
ComparisonTable comparison_report(std::span<const RunResult> runs, const std::string& baseline);

}  // namespace handlab::metrics
