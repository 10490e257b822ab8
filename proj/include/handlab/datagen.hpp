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

#include <array>
#include <string_view>

#include "handlab/common.hpp"

// Procedural 2-D articulated hand: a palm ellipse plus one capsule per finger
// segment, each segment flexing out of the image plane. Pixels take the label
// of the nearest covering primitive.
namespace handlab::datagen {

inline constexpr int kNumFingers = 5;
inline constexpr int kMaxSegments = 4;
inline constexpr int kPalmLabel = 1;

/// Thumb has three segments, the other fingers four (19 finger parts).
inline constexpr std::array<int, kNumFingers> kSegmentsPerFinger{3, 4, 4, 4, 4};

/// Label of finger `finger` (0 = thumb .. 4 = little), segment 0 = proximal.
int part_label(int finger, int segment);

enum JointId : int {
  kThumbTip = 0,
  kThumbKnuckle,
  kIndexTip,
  kIndexKnuckle,
  kMiddleTip,
  kMiddleKnuckle,
  kRingTip,
  kRingKnuckle,
  kLittleTip,
  kLittleKnuckle,
  kWrist,
  kPalmCenter,
  kThumbBase,
  kLittleBase,
};

inline constexpr int tip_joint(int finger) { return 2 * finger; }
inline constexpr int knuckle_joint(int finger) { return 2 * finger + 1; }

const std::array<std::string_view, kNumJoints>& joint_names();
const std::array<std::string_view, kNumLabels>& part_names();

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct GeneratorConfig {
  int image_size = 48;
  /// Per finger, per segment flexion bounds (radians); unused thumb slot ignored.
  std::array<std::array<Interval, kMaxSegments>, kNumFingers> flexion{};
  /// Per finger in-plane spread around the rest direction (radians).
  std::array<Interval, kNumFingers> abduction{};
  Interval global_rotation{-0.5, 0.5};
  Interval palm_scale{0.9, 1.1};
  Interval finger_width{2.8, 3.6};
  Interval depth_offset{-0.08, 0.08};

  GeneratorConfig();
  /// Throws ConfigError on empty or non-finite intervals.
  void validate() const;
};

struct HandPoseParams {
  std::array<std::array<double, kMaxSegments>, kNumFingers> finger_angles{};
  std::array<double, kNumFingers> finger_abduction{};
  double global_rotation = 0.0;
  double palm_scale = 1.0;
  std::array<double, kNumFingers> finger_widths{};
  double camera_depth_offset = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const HandPoseParams&, const HandPoseParams&) = default;
};

/// Fully extended hand with zero rotation, unit scale and mid-range widths.
HandPoseParams canonical_pose();

HandPoseParams sample_pose(const GeneratorConfig& bounds, std::uint64_t seed);

struct RenderedHand {
  DepthMap depth;
  LabelMap labels;
  JointSet joints;
};

/// Throws GenerationError when a joint falls outside the frame or no pixel is
/// covered; callers resample.
RenderedHand render_hand(const HandPoseParams& params, int size = 48);

struct DomainShiftConfig {
  double gaussian_depth_sigma = 0.0;
  double hole_probability = 0.0;
  double quantization_step = 0.0;
  int edge_erosion_radius = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sensor degradation for the real-proxy domain. Steps run in the order
/// erosion, holes, gaussian noise, quantization; zeroed steps are skipped.
DepthMap apply_sensor_noise(const DepthMap& depth, const DomainShiftConfig& cfg);

inline constexpr double kContrastFloor = 1e-2;

/// Subtracts the foreground box mean and divides by max(box std, floor).
/// Background pixels stay 0 and are excluded from the statistics.
DepthMap local_contrast_normalize(const DepthMap& depth, int kernel = 9, double floor = kContrastFloor);

/// Mean foreground depth, 0 when the map is empty.
double mean_foreground_depth(const DepthMap& depth);

/// Millimetre conversions used by the metrics tables.
struct UnitScale {
  double mm_per_pixel = 4.0;
  double mm_per_depth_unit = 100.0;
};

/// Depth units travelled per pixel of out-of-plane finger motion.
inline constexpr double kDepthPerPixel = 0.04;

}  // namespace handlab::datagen
