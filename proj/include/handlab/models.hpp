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
#include <span>
#include <string>
#include <vector>

#include "handlab/mlp.hpp"
#include "handlab/supervision.hpp"

namespace handlab::models {

// ---------------------------------------------------------------------------
// Segmenter: K x K contrast-normalized depth patch -> 20-way softmax over parts.

struct SegModel {
  int patch = 9;
  int hidden = 64;
  Mlp net;

  static std::size_t parameter_count(int patch, int hidden);
  friend bool operator==(const SegModel&, const SegModel&) = default;
};

/// `output_scale` 0 yields a zero output layer (uniform predictions).
SegModel make_seg_model(int patch, int hidden, std::uint64_t seed, double output_scale = 1.0);

using PartProbabilities = std::array<double, kNumParts>;

/// Gathers the K x K input patch around (u, v); cells outside the map read 0.
void seg_input(const DepthMap& normalized, int patch, int u, int v, std::span<double> out);

/// Probabilities over labels 1..20 (index 0 = label 1). Throws ContractError
/// for background pixels.
PartProbabilities seg_forward(const SegModel& model, const DepthMap& normalized, int u, int v);

/// Per-pixel argmax on the depth foreground, ties to the smaller label.
LabelMap predict_labelmap(const SegModel& model, const DepthMap& normalized, int jobs = 1);

/// A training image: contrast-normalized depth plus target labels (0 = no target).
struct SegImage {
  std::string id;
  DepthMap normalized;
  LabelMap targets;
};

struct PixelSample {
  std::uint32_t image = 0;
  int u = 0;
  int v = 0;
};

/// Pixels that are foreground in both depth and targets.
std::vector<PixelSample> trainable_pixels(const SegImage& image, std::uint32_t image_index);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean negative log-likelihood over the batch and its gradient. Throws
/// DivergenceError naming the image when the loss is not finite.
LossGrad seg_loss_grad(const SegModel& model, std::span<const SegImage> images, std::span<const PixelSample> batch);

struct SegTrainConfig {
  int epochs = 100;
  double lr = 0.1;
  double lr_decay = 1e-5;
  /// Pixels drawn per image step; 0 uses every trainable pixel.
  int pixels_per_image = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainCurvePoint {
  int epoch = 0;
  double mean_loss = 0.0;
};

struct SegTrainResult {
  SegModel model;
  std::vector<TrainCurvePoint> curve;
  long steps = 0;
};

/// Runs SGD over `order` (indices into images) for cfg.epochs epochs; one step
/// per image with lr_t = lr / (1 + decay * t). When `reshuffle` is set, each
/// epoch permutes `order` with a seed derived from cfg.seed.
SegTrainResult sgd_segmenter(SegModel model, std::span<const SegImage> images, std::vector<std::size_t> order,
                             const SegTrainConfig& cfg, bool reshuffle);

/// Supervised pre-training from a freshly initialized model.
SegTrainResult train_segmenter(std::span<const SegImage> images, const SegTrainConfig& cfg, int patch = 9,
                               int hidden = 64);

struct FinetuneConfig {
  int epochs = 10;
  int ratio = 9;
  double lr = 0.1;
  double lr_decay = 1e-5;
  int pixels_per_image = 0;
  std::uint64_t seed = 0;
};

/// Continues SGD over the mixed stream. `synth` and `pseudo` hold the images
/// the stream's entries index into (pseudo images carry restored labels).
SegTrainResult finetune_segmenter(const SegModel& model, const supervision::FinetuneStream& stream,
                                  std::span<const SegImage> synth, std::span<const SegImage> pseudo,
                                  const FinetuneConfig& cfg);

/// Supervised continuation on the synthetic set alone with the fine-tune schedule.
SegTrainResult continue_supervised(const SegModel& model, std::span<const SegImage> synth, const FinetuneConfig& cfg);

// ---------------------------------------------------------------------------
// Joint regressor: per joint, depth features fused with masked segmentation
// statistics -> (u, v, z).

inline constexpr int kRegDepthSide = 24;
inline constexpr int kMaskStats = 9;
inline constexpr int kRegFeatureLength = kRegDepthSide * kRegDepthSide + kMaskStats;

using JointMasks = std::array<Grid<std::uint8_t>, kNumJoints>;

/// Binary opening (erosion then dilation) with a disc of the given radius;
/// pixels outside the grid count as unset.
Grid<std::uint8_t> morphological_open(const Grid<std::uint8_t>& mask, int radius);

JointMasks joint_masks(const LabelMap& seg, const supervision::JointLabelTable& table, int radius);

/// [24x24 crop-relative depth | area, centroid u/v, second moments uu/vv/uv,
/// masked depth mean/min/max]. An empty mask zeroes the statistics block.
std::vector<double> reg_features(const DepthMap& depth, const Grid<std::uint8_t>& mask);
std::vector<double> reg_features(const DepthMap& depth, const LabelMap& seg, int joint,
                                 const supervision::JointLabelTable& table, int radius = 1);

struct RegHead {
  Mlp net;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  std::array<double, 3> target_mean{};
  std::array<double, 3> target_scale{1.0, 1.0, 1.0};
  friend bool operator==(const RegHead&, const RegHead&) = default;
};

struct RegModel {
  int hidden = 128;
  int mask_radius = 1;
  /// When false the segmentation statistics are zeroed (depth-only variant).
  bool use_segmentation = true;
  std::array<RegHead, kNumJoints> heads;
  friend bool operator==(const RegModel&, const RegModel&) = default;
};

struct RegSample {
  std::string id;
  DepthMap depth;
  LabelMap seg;
  JointSet joints;
};

struct RegTrainConfig {
  int epochs = 150;
  double lr = 0.05;
  int batch = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int hidden = 128;
  int mask_radius = 1;
  bool use_segmentation = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Squared-L2 loss averaged over rows of a standardized design matrix.
LossGrad reg_loss_grad(const Mlp& head, std::span<const double> features, std::span<const double> targets,
                       std::span<const std::size_t> rows);

struct RegTrainResult {
  RegModel model;
  /// Final-epoch mean loss per joint head (standardized units).
  std::array<double, kNumJoints> final_loss{};
};

RegTrainResult train_regressor(std::span<const RegSample> samples, const RegTrainConfig& cfg, int jobs = 1);

/// Design matrix rows for one joint (features before standardization).
std::vector<double> joint_design(std::span<const RegSample> samples, int joint, int mask_radius, bool use_segmentation,
                                 const supervision::JointLabelTable& table);

/// z is returned in absolute depth units (crop depth added back).
JointSet predict_pose(const RegModel& model, const DepthMap& depth, const LabelMap& seg);

// ---------------------------------------------------------------------------
// Gradient checking.

struct GradCheckReport {
  struct BlockError {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
  };
  std::vector<BlockError> blocks;
  double step = 1e-5;
  double tolerance = 1e-4;
  bool pass = false;
  double max_rel_error() const;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-6) between analytic and central
/// difference gradients, over at most `per_block` coordinates per block.
GradCheckReport grad_check_seg(const SegModel& model, std::span<const SegImage> images,
                               std::span<const PixelSample> batch, std::size_t per_block, std::uint64_t seed,
                               double step = 1e-5, double tolerance = 1e-4);

GradCheckReport grad_check_reg(const Mlp& head, std::span<const double> features, std::span<const double> targets,
                               std::span<const std::size_t> rows, std::size_t per_block, std::uint64_t seed,
                               double step = 1e-5, double tolerance = 1e-4);

std::string format_report(const GradCheckReport& report);

// ---------------------------------------------------------------------------
// Model files: versioned binary header + little-endian doubles, with a JSON
// sidecar (`<path>.json`) holding the architecture hyperparameters.

void save_seg_model(const SegModel& model, const std::filesystem::path& path);
SegModel load_seg_model(const std::filesystem::path& path);
void save_reg_model(const RegModel& model, const std::filesystem::path& path);
RegModel load_reg_model(const std::filesystem::path& path);

}  // namespace handlab::models
