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
#include "handlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "handlab/datagen.hpp"
#include "handlab/image_io.hpp"

namespace handlab::metrics {

SegCounts& SegCounts::operator+=(const SegCounts& other) {
  for (int c = 0; c < kNumParts; ++c) {
    correct[c] += other.correct[c];
    total[c] += other.total[c];
  }
  return *this;
}

SegCounts seg_counts(const LabelMap& pred, const LabelMap& truth) {
  if (pred.width() != truth.width() || pred.height() != truth.height()) {
    throw ContractError("seg_accuracy: prediction and truth differ in size");
  }
  SegCounts c;
  const auto& t = truth.labels.data();
  const auto& p = pred.labels.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 0) continue;
    if (t[i] > kNumParts) throw ContractError("seg_accuracy: truth label out of range");
    ++c.total[t[i] - 1];
    if (p[i] == t[i]) ++c.correct[t[i] - 1];
  }
  return c;
}

SegScore score(const SegCounts& counts) {
  SegScore s;
  std::uint64_t correct = 0, total = 0;
  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumParts; ++c) {
    correct += counts.correct[c];
    total += counts.total[c];
    if (counts.total[c] == 0) continue;
    const double r = static_cast<double>(counts.correct[c]) / static_cast<double>(counts.total[c]);
    s.recall[c] = r;
    recall_sum += r;
    ++present;
  }
  s.per_pixel = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  s.per_class = present ? recall_sum / present : 0.0;
  return s;
}

SegScore seg_accuracy(const LabelMap& pred, const LabelMap& truth) { return score(seg_counts(pred, truth)); }

SegScore seg_accuracy(std::span<const LabelMap> pred, std::span<const LabelMap> truth) {
  if (pred.size() != truth.size()) throw ContractError("seg_accuracy: frame counts differ");
  SegCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) c += seg_counts(pred[i], truth[i]);
  return score(c);
}

double FrameError::mean_2d() const {
  double s = 0.0;
  for (double e : e2d) s += e;
  return s / kNumJoints;
}

double FrameError::mean_3d() const {
  double s = 0.0;
  for (double e : e3d) s += e;
  return s / kNumJoints;
}

double FrameError::max_3d() const { return *std::max_element(e3d.begin(), e3d.end()); }

FrameError pose_error(const JointSet& pred, const JointSet& truth, const datagen::UnitScale& scale) {
  FrameError f;
  for (int j = 0; j < kNumJoints; ++j) {
    const double du = (pred[j].u - truth[j].u) * scale.mm_per_pixel;
    const double dv = (pred[j].v - truth[j].v) * scale.mm_per_pixel;
    const double dz = (pred[j].z - truth[j].z) * scale.mm_per_depth_unit;
    f.e2d[j] = std::sqrt(du * du + dv * dv);
    f.e3d[j] = std::sqrt(du * du + dv * dv + dz * dz);
  }
  return f;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int mm = 0; mm <= 80; mm += 4) t.push_back(mm);
  return t;
}

std::vector<CurvePoint> threshold_curve(std::span<const double> frame_max_errors, std::span<const double> thresholds) {
  std::vector<double> sorted(frame_max_errors.begin(), frame_max_errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<CurvePoint> curve;
  curve.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto within = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve.push_back({t, sorted.empty() ? 0.0 : static_cast<double>(within) / static_cast<double>(sorted.size())});
  }
  return curve;
}

PoseScore aggregate(std::span<const FrameError> frames, std::span<const double> thresholds) {
  PoseScore s;
  s.frames = frames.size();
  std::vector<double> maxima;
  maxima.reserve(frames.size());
  for (const auto& f : frames) {
    for (int j = 0; j < kNumJoints; ++j) {
      s.joint_2d[j] += f.e2d[j];
      s.joint_3d[j] += f.e3d[j];
    }
    maxima.push_back(f.max_3d());
  }
  if (!frames.empty()) {
    const auto n = static_cast<double>(frames.size());
    for (int j = 0; j < kNumJoints; ++j) {
      s.joint_2d[j] /= n;
      s.joint_3d[j] /= n;
      s.mean_2d += s.joint_2d[j] / kNumJoints;
      s.mean_3d += s.joint_3d[j] / kNumJoints;
    }
  }
  s.curve = threshold_curve(maxima, thresholds);
  return s;
}

// ---------------------------------------------------------------------------
// Tables

namespace {

std::string fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return buf;
}

std::string signed_fixed(double x, int decimals) {
  char buf[64];
  // Avoid printing "-0.00" for deltas that round to zero.
  if (std::abs(x) < 0.5 * std::pow(10.0, -decimals)) x = 0.0;
  std::snprintf(buf, sizeof buf, "%+.*f", decimals, x);
  return buf;
}

}  // namespace

std::string seg_scores_csv(std::span<const std::pair<std::string, SegScore>> scores) {
  std::ostringstream os;
  os << "variant,per_pixel,per_class";
  for (int c = 1; c <= kNumParts; ++c) os << ",recall_" << c;
  os << '\n';
  for (const auto& [name, s] : scores) {
    os << name << ',' << io::format_double(s.per_pixel) << ',' << io::format_double(s.per_class);
    for (int c = 0; c < kNumParts; ++c) os << ',' << (s.recall[c] ? io::format_double(*s.recall[c]) : std::string());
    os << '\n';
  }
  return os.str();
}

std::string pose_scores_csv(const PoseScore& s) {
  std::ostringstream os;
  os << "joint,name,error_2d_mm,error_3d_mm\n";
  const auto& names = datagen::joint_names();
  for (int j = 0; j < kNumJoints; ++j) {
    os << j << ',' << names[j] << ',' << io::format_double(s.joint_2d[j]) << ',' << io::format_double(s.joint_3d[j])
       << '\n';
  }
  os << "mean,all," << io::format_double(s.mean_2d) << ',' << io::format_double(s.mean_3d) << '\n';
  return os.str();
}

std::string threshold_curve_csv(std::span<const CurvePoint> curve) {
  std::ostringstream os;
  os << "threshold_mm,fraction\n";
  for (const auto& p : curve) os << io::format_double(p.threshold) << ',' << io::format_double(p.fraction) << '\n';
  return os.str();
}

ComparisonTable comparison_report(std::span<const RunResult> runs, const std::string& baseline) {
  const auto base = std::find_if(runs.begin(), runs.end(), [&](const RunResult& r) { return r.name == baseline; });
  if (base == runs.end()) throw ContractError("comparison_report: no run named '" + baseline + "'");

  ComparisonTable t;
  t.headers = {"variant",       "per_pixel_%",   "d_per_pixel", "per_class_%", "d_per_class",
               "mean_2d_mm",    "d_mean_2d",     "mean_3d_mm",  "d_mean_3d"};
  auto value_pair = [](std::vector<std::string>& row, std::optional<double> v, std::optional<double> b, int decimals) {
    row.push_back(v ? fixed(*v, decimals) : "-");
    row.push_back(v && b ? signed_fixed(*v - *b, decimals) : "-");
  };
  auto pick = [](const RunResult& r, int which) -> std::optional<double> {
    switch (which) {
      case 0: return r.seg ? std::optional(100.0 * r.seg->per_pixel) : std::nullopt;
      case 1: return r.seg ? std::optional(100.0 * r.seg->per_class) : std::nullopt;
      case 2: return r.pose ? std::optional(r.pose->mean_2d) : std::nullopt;
      default: return r.pose ? std::optional(r.pose->mean_3d) : std::nullopt;
    }
  };
  for (const auto& r : runs) {
    std::vector<std::string> row{r.name};
    for (int k = 0; k < 4; ++k) value_pair(row, pick(r, k), pick(*base, k), 2);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(headers);
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string ComparisonTable::to_text() const {
  std::vector<std::size_t> width(headers.size());
  for (std::size_t i = 0; i < headers.size(); ++i) width[i] = headers[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == 0) {
        out += cells[i] + std::string(width[i] - cells[i].size(), ' ');
      } else {
        out += "  " + std::string(width[i] - cells[i].size(), ' ') + cells[i];
      }
    }
    os << out << '\n';
  };
  line(headers);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace handlab::metrics
