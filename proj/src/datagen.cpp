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
#include "handlab/datagen.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "handlab/image_io.hpp"

namespace handlab::datagen {

namespace {

// Hand-frame geometry in pixels at 48x48 and unit palm scale. x points right,
// y points down, fingers extend towards -y.
constexpr double kPalmSemiX = 7.0;
constexpr double kPalmSemiY = 7.5;
constexpr double kPalmDome = 0.02;
constexpr double kPalmDepth = 0.7;
constexpr double kChainLift = 0.015;
constexpr double kThumbWidthFactor = 1.15;

struct FingerRest {
  double base_x;
  double base_y;
  double angle;  // rest direction, radians from -y towards +x
  std::array<double, kMaxSegments> lengths;
};

constexpr std::array<FingerRest, kNumFingers> kRest{{
    {-5.8, 2.0, -1.0, {4.2, 3.6, 3.0, 0.0}},
    {-4.6, -6.2, -0.12, {3.8, 3.6, 2.6, 2.2}},
    {-1.5, -7.2, -0.03, {4.2, 3.9, 2.9, 2.4}},
    {1.6, -6.9, 0.06, {4.0, 3.7, 2.7, 2.2}},
    {4.5, -5.6, 0.16, {3.2, 2.9, 2.2, 1.8}},
}};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

struct Capsule {
  Vec2 a;
  Vec2 b;
  double za = 0.0;
  double zb = 0.0;
  double radius = 0.0;
  int label = 0;
};

struct Similarity {
  double cos_r = 1.0;
  double sin_r = 0.0;
  double scale = 1.0;
  Vec2 offset;

  Vec2 apply(Vec2 p) const {
    return Vec2{scale * (cos_r * p.x - sin_r * p.y), scale * (sin_r * p.x + cos_r * p.y)} + offset;
  }
  Vec2 invert(Vec2 q) const {
    const Vec2 d = q - offset;
    return Vec2{(cos_r * d.x + sin_r * d.y) / scale, (-sin_r * d.x + cos_r * d.y) / scale};
  }
};

double sample_interval(Rng& rng, const Interval& iv) { return iv.lo == iv.hi ? iv.lo : rng.uniform(iv.lo, iv.hi); }

void check_interval(const Interval& iv, const std::string& what) {
  if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi)) throw ConfigError(what + ": non-finite bound");
  if (iv.lo > iv.hi) throw ConfigError(what + ": empty interval");
}

}  // namespace

int part_label(int finger, int segment) {
  if (finger < 0 || finger >= kNumFingers || segment < 0 || segment >= kSegmentsPerFinger[finger]) {
    throw ContractError("part_label: finger/segment out of range");
  }
  int label = 2;
  for (int f = 0; f < finger; ++f) label += kSegmentsPerFinger[f];
  return label + segment;
}

const std::array<std::string_view, kNumJoints>& joint_names() {
  static const std::array<std::string_view, kNumJoints> names{
      "thumb_tip", "thumb_knuckle", "index_tip", "index_knuckle", "middle_tip",  "middle_knuckle", "ring_tip",
      "ring_knuckle", "little_tip", "little_knuckle", "wrist", "palm_center", "thumb_base", "little_base"};
  return names;
}

const std::array<std::string_view, kNumLabels>& part_names() {
  static const std::array<std::string_view, kNumLabels> names{
      "background", "palm",     "thumb_1",  "thumb_2",  "thumb_3",  "index_1",  "index_2",
      "index_3",    "index_4",  "middle_1", "middle_2", "middle_3", "middle_4", "ring_1",
      "ring_2",     "ring_3",   "ring_4",   "little_1", "little_2", "little_3", "little_4"};
  return names;
}

GeneratorConfig::GeneratorConfig() {
  const std::array<Interval, kMaxSegments> finger{{{-0.15, 0.9}, {0.0, 1.2}, {0.0, 1.0}, {0.0, 0.5}}};
  const std::array<Interval, kMaxSegments> thumb{{{-0.2, 0.8}, {0.0, 0.9}, {0.0, 0.8}, {0.0, 0.0}}};
  flexion[0] = thumb;
  for (int f = 1; f < kNumFingers; ++f) flexion[f] = finger;
  abduction[0] = {-0.3, 0.3};
  for (int f = 1; f < kNumFingers; ++f) abduction[f] = {-0.15, 0.15};
}

void GeneratorConfig::validate() const {
  if (image_size < 24) throw ConfigError("image_size must be >= 24");
  for (int f = 0; f < kNumFingers; ++f) {
    for (int s = 0; s < kSegmentsPerFinger[f]; ++s) {
      check_interval(flexion[f][s], "flexion[" + std::to_string(f) + "][" + std::to_string(s) + "]");
    }
    check_interval(abduction[f], "abduction[" + std::to_string(f) + "]");
  }
  check_interval(global_rotation, "global_rotation");
  check_interval(palm_scale, "palm_scale");
  check_interval(finger_width, "finger_width");
  check_interval(depth_offset, "depth_offset");
  if (palm_scale.lo <= 0.0) throw ConfigError("palm_scale must be > 0");
  if (finger_width.lo <= 0.0) throw ConfigError("finger_width must be > 0");
}

HandPoseParams canonical_pose() {
  HandPoseParams p;
  p.finger_widths.fill(3.2);
  return p;
}

HandPoseParams sample_pose(const GeneratorConfig& bounds, std::uint64_t seed) {
  bounds.validate();
  Rng rng(seed);
  HandPoseParams p;
  p.seed = seed;
  for (int f = 0; f < kNumFingers; ++f) {
    for (int s = 0; s < kSegmentsPerFinger[f]; ++s) p.finger_angles[f][s] = sample_interval(rng, bounds.flexion[f][s]);
    p.finger_abduction[f] = sample_interval(rng, bounds.abduction[f]);
    p.finger_widths[f] = sample_interval(rng, bounds.finger_width);
  }
  p.global_rotation = sample_interval(rng, bounds.global_rotation);
  p.palm_scale = sample_interval(rng, bounds.palm_scale);
  p.camera_depth_offset = sample_interval(rng, bounds.depth_offset);
  return p;
}

RenderedHand render_hand(const HandPoseParams& params, int size) {
  if (size < 24) throw ContractError("render_hand: size must be >= 24");
  if (params.palm_scale <= 0.0) throw ContractError("render_hand: palm_scale must be > 0");
  for (double w : params.finger_widths) {
    if (w <= 0.0) throw ContractError("render_hand: finger widths must be > 0");
  }

  const double scale = params.palm_scale * size / 48.0;
  const double z0 = kPalmDepth + params.camera_depth_offset;

  // Kinematic chains in the hand frame (unscaled).
  std::array<std::array<Vec2, kMaxSegments + 1>, kNumFingers> points{};
  std::array<std::array<double, kMaxSegments + 1>, kNumFingers> depths{};
  for (int f = 0; f < kNumFingers; ++f) {
    const FingerRest& rest = kRest[f];
    const double angle = rest.angle + params.finger_abduction[f];
    const Vec2 dir{std::sin(angle), -std::cos(angle)};
    points[f][0] = {rest.base_x, rest.base_y};
    depths[f][0] = z0 - kChainLift;
    double flex = 0.0;
    for (int s = 0; s < kSegmentsPerFinger[f]; ++s) {
      flex += params.finger_angles[f][s];
      const double len = rest.lengths[s];
      points[f][s + 1] = points[f][s] + (len * std::cos(flex)) * dir;
      // Out-of-plane travel is measured in rendered pixels.
      depths[f][s + 1] = depths[f][s] - len * std::sin(flex) * scale * kDepthPerPixel;
    }
  }

  Similarity xf;
  xf.cos_r = std::cos(params.global_rotation);
  xf.sin_r = std::sin(params.global_rotation);
  xf.scale = scale;

  std::vector<Capsule> capsules;
  for (int f = 0; f < kNumFingers; ++f) {
    const double radius = 0.5 * params.finger_widths[f] * (f == 0 ? kThumbWidthFactor : 1.0) * size / 48.0;
    for (int s = 0; s < kSegmentsPerFinger[f]; ++s) {
      capsules.push_back({xf.apply(points[f][s]), xf.apply(points[f][s + 1]), depths[f][s], depths[f][s + 1], radius,
                          part_label(f, s)});
    }
  }

  // Center the hand's bounding box in the frame.
  const double ex = scale * std::hypot(kPalmSemiX * xf.cos_r, kPalmSemiY * xf.sin_r);
  const double ey = scale * std::hypot(kPalmSemiX * xf.sin_r, kPalmSemiY * xf.cos_r);
  double min_x = -ex, max_x = ex, min_y = -ey, max_y = ey;
  for (const Capsule& c : capsules) {
    for (const Vec2& p : {c.a, c.b}) {
      min_x = std::min(min_x, p.x - c.radius);
      max_x = std::max(max_x, p.x + c.radius);
      min_y = std::min(min_y, p.y - c.radius);
      max_y = std::max(max_y, p.y + c.radius);
    }
  }
  const double center = 0.5 * (size - 1);
  const Vec2 shift{center - 0.5 * (min_x + max_x), center - 0.5 * (min_y + max_y)};
  xf.offset = shift;
  for (Capsule& c : capsules) {
    c.a = c.a + shift;
    c.b = c.b + shift;
  }

  RenderedHand out{DepthMap(size, size), LabelMap(size, size), JointSet{}};
  const double min_depth = 1.0 / 65535.0;
  for (int v = 0; v < size; ++v) {
    for (int u = 0; u < size; ++u) {
      const Vec2 q{static_cast<double>(u), static_cast<double>(v)};
      double best = std::numeric_limits<double>::infinity();
      int label = 0;
      const Vec2 h = xf.invert(q);
      const double r2 = (h.x / kPalmSemiX) * (h.x / kPalmSemiX) + (h.y / kPalmSemiY) * (h.y / kPalmSemiY);
      if (r2 <= 1.0) {
        best = z0 - kPalmDome * (1.0 - r2);
        label = kPalmLabel;
      }
      for (const Capsule& c : capsules) {
        const Vec2 ab = c.b - c.a;
        const double len2 = dot(ab, ab);
        const double t = len2 > 0.0 ? std::clamp(dot(q - c.a, ab) / len2, 0.0, 1.0) : 0.0;
        const Vec2 closest = c.a + t * ab;
        const Vec2 d = q - closest;
        const double dist2 = dot(d, d);
        if (dist2 > c.radius * c.radius) continue;
        const double axis_z = c.za + t * (c.zb - c.za);
        const double z = axis_z - std::sqrt(c.radius * c.radius - dist2) * kDepthPerPixel;
        if (z < best) {
          best = z;
          label = c.label;
        }
      }
      if (label == 0) continue;
      out.labels(u, v) = static_cast<std::uint8_t>(label);
      out.depth.values(u, v) = std::max(min_depth, io::quantize_depth(best));
      out.depth.foreground(u, v) = 1;
    }
  }

  auto joint_at = [&](Vec2 hand_point, double z) {
    const Vec2 p = xf.apply(hand_point);
    return Joint{p.x, p.y, z};
  };
  for (int f = 0; f < kNumFingers; ++f) {
    const int n = kSegmentsPerFinger[f];
    out.joints[tip_joint(f)] = joint_at(points[f][n], depths[f][n]);
    out.joints[knuckle_joint(f)] = joint_at(points[f][1], depths[f][1]);
  }
  out.joints[kWrist] = joint_at({0.0, kPalmSemiY}, z0);
  out.joints[kPalmCenter] = joint_at({0.0, 0.0}, z0 - kPalmDome);
  out.joints[kThumbBase] = joint_at(points[0][0], depths[0][0]);
  out.joints[kLittleBase] = joint_at(points[4][0], depths[4][0]);

  if (out.labels.foreground_count() == 0) throw GenerationError("hand does not cover any pixel");
  for (int j = 0; j < kNumJoints; ++j) {
    const Joint& jt = out.joints[j];
    if (!(jt.u >= 0.0 && jt.v >= 0.0 && jt.u <= size - 1 && jt.v <= size - 1)) {
      throw GenerationError("joint " + std::string(joint_names()[j]) + " outside the frame");
    }
  }
  return out;
}

void DomainShiftConfig::validate() const {
  if (!(gaussian_depth_sigma >= 0.0) || !(quantization_step >= 0.0)) {
    throw ConfigError("noise sigma and quantization step must be >= 0");
  }
  if (!(hole_probability >= 0.0 && hole_probability <= 1.0)) throw ConfigError("hole_probability must be in [0, 1]");
  if (edge_erosion_radius < 0) throw ConfigError("edge_erosion_radius must be >= 0");
}

DepthMap apply_sensor_noise(const DepthMap& depth, const DomainShiftConfig& cfg) {
  cfg.validate();
  DepthMap out = depth;
  const int w = depth.width();
  const int h = depth.height();

  if (cfg.edge_erosion_radius > 0) {
    const int r = cfg.edge_erosion_radius;
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (!depth.is_foreground(u, v)) continue;
        bool touches_background = false;
        for (int dv = -r; dv <= r && !touches_background; ++dv) {
          for (int du = -r; du <= r; ++du) {
            if (du * du + dv * dv > r * r || !depth.values.in_bounds(u + du, v + dv)) continue;
            if (!depth.is_foreground(u + du, v + dv)) {
              touches_background = true;
              break;
            }
          }
        }
        if (touches_background) {
          out.foreground(u, v) = 0;
          out.values(u, v) = 0.0;
        }
      }
    }
  }

  Rng rng(cfg.seed);
  if (cfg.hole_probability > 0.0) {
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      if (out.foreground[i] && rng.uniform() < cfg.hole_probability) {
        out.foreground[i] = 0;
        out.values[i] = 0.0;
      }
    }
  }

  const bool perturb = cfg.gaussian_depth_sigma > 0.0 || cfg.quantization_step > 0.0;
  if (perturb) {
    const double min_depth = 1.0 / 65535.0;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      if (!out.foreground[i]) continue;
      double d = out.values[i];
      if (cfg.gaussian_depth_sigma > 0.0) d += cfg.gaussian_depth_sigma * rng.normal();
      if (cfg.quantization_step > 0.0) d = std::round(d / cfg.quantization_step) * cfg.quantization_step;
      out.values[i] = std::max(min_depth, io::quantize_depth(d));
    }
  }
  return out;
}

DepthMap local_contrast_normalize(const DepthMap& depth, int kernel, double floor) {
  if (kernel < 3 || kernel % 2 == 0) throw ContractError("contrast normalization kernel must be odd and >= 3");
  const int w = depth.width();
  const int h = depth.height();
  const int r = kernel / 2;
  DepthMap out(w, h);
  out.foreground = depth.foreground;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!depth.is_foreground(u, v)) continue;
      double sum = 0.0;
      int count = 0;
      const int v0 = std::max(0, v - r), v1 = std::min(h - 1, v + r);
      const int u0 = std::max(0, u - r), u1 = std::min(w - 1, u + r);
      for (int y = v0; y <= v1; ++y) {
        for (int x = u0; x <= u1; ++x) {
          if (!depth.is_foreground(x, y)) continue;
          sum += depth.values(x, y);
          ++count;
        }
      }
      const double mean = sum / count;
      double ss = 0.0;
      for (int y = v0; y <= v1; ++y) {
        for (int x = u0; x <= u1; ++x) {
          if (!depth.is_foreground(x, y)) continue;
          const double d = depth.values(x, y) - mean;
          ss += d * d;
        }
      }
      const double sd = std::sqrt(ss / count);
      out.values(u, v) = (depth.values(u, v) - mean) / std::max(sd, floor);
    }
  }
  return out;
}

double mean_foreground_depth(const DepthMap& depth) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    if (!depth.foreground[i]) continue;
    sum += depth.values[i];
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace handlab::datagen
