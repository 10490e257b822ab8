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
#include "handlab/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "handlab/datagen.hpp"
#include "json.hpp"

namespace handlab::models {

namespace fs = std::filesystem;
using supervision::JointLabelTable;

namespace {

constexpr char kSegMagic[4] = {'H', 'S', 'E', 'G'};
constexpr char kRegMagic[4] = {'H', 'R', 'E', 'G'};
constexpr std::uint32_t kModelVersion = 1;

// Stream ids mixed into the seed for independent random streams.
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kPixelStream = 0x5058;
constexpr std::uint64_t kInitStream = 0x494e;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double x) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x)); }

struct Reader {
  const std::string& in;
  const fs::path& path;
  std::size_t pos = 0;

  template <typename T>
  T get() {
    if (pos + sizeof(T) > in.size()) throw FormatError("model file truncated: " + path.string());
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i));
    }
    pos += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
};

std::string read_all(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_all(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing " + path.string());
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

void check_finite(const std::vector<double>& params, const std::string& what) {
  for (double p : params) {
    if (!std::isfinite(p)) throw DivergenceError(what + ": non-finite parameter");
  }
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Central-difference check of `loss` against `analytic` over a sample of
// coordinates per block.
template <typename LossFn>
GradCheckReport run_grad_check(std::vector<double>& params, const std::vector<double>& analytic,
                               const std::vector<Mlp::Block>& blocks, LossFn&& loss, std::size_t per_block,
                               std::uint64_t seed, double step, double tolerance) {
  GradCheckReport report;
  report.step = step;
  report.tolerance = tolerance;
  Rng rng(seed);
  for (const auto& b : blocks) {
    GradCheckReport::BlockError be{b.name, 0.0, 0};
    const std::size_t n = std::min(per_block, b.size);
    std::vector<std::size_t> idx(b.size);
    std::iota(idx.begin(), idx.end(), b.offset);
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(b.size - i)]);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t p = idx[i];
      const double saved = params[p];
      params[p] = saved + step;
      const double lp = loss();
      params[p] = saved - step;
      const double lm = loss();
      params[p] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      be.max_rel_error = std::max(be.max_rel_error, rel_error(analytic[p], numeric));
      ++be.checked;
    }
    report.blocks.push_back(be);
  }
  report.pass = report.max_rel_error() < tolerance;
  return report;
}

}  // namespace

// ---------------------------------------------------------------------------
// Segmenter

std::size_t SegModel::parameter_count(int patch, int hidden) {
  return Mlp::parameter_count(patch * patch, hidden, kNumParts);
}

SegModel make_seg_model(int patch, int hidden, std::uint64_t seed, double output_scale) {
  if (patch < 1 || patch % 2 == 0) throw ConfigError("segmenter patch size must be odd and >= 1");
  if (hidden < 1) throw ConfigError("segmenter hidden width must be >= 1");
  SegModel m;
  m.patch = patch;
  m.hidden = hidden;
  m.net = Mlp(patch * patch, hidden, kNumParts);
  Rng rng(derive_seed(seed, kInitStream));
  m.net.init(rng, output_scale);
  return m;
}

void seg_input(const DepthMap& normalized, int patch, int u, int v, std::span<double> out) {
  const int h = patch / 2;
  std::size_t k = 0;
  for (int dv = -h; dv <= h; ++dv) {
    for (int du = -h; du <= h; ++du) {
      const int x = u + du, y = v + dv;
      out[k++] = normalized.values.in_bounds(x, y) ? normalized.values(x, y) : 0.0;
    }
  }
}

PartProbabilities seg_forward(const SegModel& model, const DepthMap& normalized, int u, int v) {
  if (!normalized.values.in_bounds(u, v) || !normalized.is_foreground(u, v)) {
    throw ContractError("seg_forward: pixel (" + std::to_string(u) + "," + std::to_string(v) + ") is not foreground");
  }
  std::vector<double> x(static_cast<std::size_t>(model.patch) * model.patch);
  std::vector<double> hidden(static_cast<std::size_t>(model.hidden));
  PartProbabilities p{};
  seg_input(normalized, model.patch, u, v, x);
  model.net.forward(x, hidden, p);
  softmax(p);
  return p;
}

LabelMap predict_labelmap(const SegModel& model, const DepthMap& normalized, int jobs) {
  LabelMap out(normalized.width(), normalized.height());
  parallel_for(
      static_cast<std::size_t>(normalized.height()),
      [&](std::size_t row) {
        const int v = static_cast<int>(row);
        std::vector<double> x(static_cast<std::size_t>(model.patch) * model.patch);
        std::vector<double> hidden(static_cast<std::size_t>(model.hidden));
        std::array<double, kNumParts> logits{};
        for (int u = 0; u < normalized.width(); ++u) {
          if (!normalized.is_foreground(u, v)) continue;
          seg_input(normalized, model.patch, u, v, x);
          model.net.forward(x, hidden, logits);
          // argmax of the logits equals argmax of the softmax.
          int best = 0;
          for (int l = 1; l < kNumParts; ++l) {
            if (logits[l] > logits[best]) best = l;
          }
          out(u, v) = static_cast<std::uint8_t>(best + 1);
        }
      },
      jobs);
  return out;
}

std::vector<PixelSample> trainable_pixels(const SegImage& image, std::uint32_t image_index) {
  std::vector<PixelSample> out;
  for (int v = 0; v < image.normalized.height(); ++v) {
    for (int u = 0; u < image.normalized.width(); ++u) {
      if (image.normalized.is_foreground(u, v) && image.targets(u, v) != 0) out.push_back({image_index, u, v});
    }
  }
  return out;
}

LossGrad seg_loss_grad(const SegModel& model, std::span<const SegImage> images, std::span<const PixelSample> batch) {
  LossGrad r;
  r.grad.assign(model.net.params().size(), 0.0);
  if (batch.empty()) return r;
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<double> x(static_cast<std::size_t>(model.patch) * model.patch);
  std::vector<double> hidden(static_cast<std::size_t>(model.hidden));
  std::array<double, kNumParts> p{};
  for (const auto& s : batch) {
    const SegImage& img = images[s.image];
    const int target = img.targets(s.u, s.v);
    if (target < 1 || target > kNumParts) throw ContractError("seg_loss_grad: target label out of range in " + img.id);
    seg_input(img.normalized, model.patch, s.u, s.v, x);
    model.net.forward(x, hidden, p);
    softmax(p);
    const double nll = -std::log(p[target - 1]);
    if (!std::isfinite(nll)) throw DivergenceError("non-finite segmenter loss on sample " + img.id);
    r.loss += nll * inv;
    for (auto& q : p) q *= inv;
    p[target - 1] -= inv;
    model.net.backward(x, hidden, p, r.grad);
  }
  return r;
}

void SegTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("segmenter epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("segmenter learning rate must be > 0");
  if (lr_decay < 0.0) throw ConfigError("segmenter learning-rate decay must be >= 0");
  if (pixels_per_image < 0) throw ConfigError("pixels_per_image must be >= 0");
}

namespace {

std::vector<PixelSample> draw_pixels(const SegImage& image, std::uint32_t index, int per_image, std::uint64_t seed) {
  auto px = trainable_pixels(image, index);
  const auto n = static_cast<std::size_t>(per_image);
  if (per_image > 0 && px.size() > n) {
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) std::swap(px[i], px[i + rng.below(px.size() - i)]);
    px.resize(n);
  }
  return px;
}

// One SGD step per entry of `order`; entries index into `images`.
SegTrainResult run_sgd(SegModel model, std::span<const SegImage> images, std::vector<std::size_t> order,
                       const SegTrainConfig& cfg, bool reshuffle) {
  cfg.validate();
  SegTrainResult result;
  const std::uint64_t pixel_seed = derive_seed(cfg.seed, kPixelStream);

  // Epoch 0: loss of the starting model on each image's first pixel draw.
  double initial = 0.0;
  std::size_t counted = 0;
  for (std::size_t i : order) {
    const auto px = draw_pixels(images[i], static_cast<std::uint32_t>(i), cfg.pixels_per_image, derive_seed(pixel_seed, i));
    if (px.empty()) continue;
    initial += seg_loss_grad(model, images, px).loss;
    ++counted;
  }
  result.curve.push_back({0, counted ? initial / static_cast<double>(counted) : 0.0});

  long t = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (reshuffle) {
      Rng rng(derive_seed(derive_seed(cfg.seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order.begin(), order.end());
    }
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t i : order) {
      const auto px = draw_pixels(images[i], static_cast<std::uint32_t>(i), cfg.pixels_per_image,
                                  derive_seed(pixel_seed, static_cast<std::uint64_t>(t) * 0x9e37 + i));
      if (px.empty()) continue;
      const auto lg = seg_loss_grad(model, images, px);
      const double lr_t = cfg.lr / (1.0 + cfg.lr_decay * static_cast<double>(t));
      auto& params = model.net.params();
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr_t * lg.grad[k];
      sum += lg.loss;
      ++steps;
      ++t;
    }
    check_finite(model.net.params(), "segmenter training");
    result.curve.push_back({epoch, steps ? sum / static_cast<double>(steps) : 0.0});
  }
  result.steps = t;
  result.model = std::move(model);
  return result;
}

}  // namespace

SegTrainResult sgd_segmenter(SegModel model, std::span<const SegImage> images, std::vector<std::size_t> order,
                             const SegTrainConfig& cfg, bool reshuffle) {
  for (std::size_t i : order) {
    if (i >= images.size()) throw ContractError("sgd_segmenter: order index out of range");
  }
  return run_sgd(std::move(model), images, std::move(order), cfg, reshuffle);
}

SegTrainResult train_segmenter(std::span<const SegImage> images, const SegTrainConfig& cfg, int patch, int hidden) {
  if (images.empty()) throw ContractError("train_segmenter: no training images");
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  return run_sgd(make_seg_model(patch, hidden, cfg.seed), images, std::move(order), cfg, true);
}

namespace {

SegTrainConfig finetune_schedule(const FinetuneConfig& cfg) {
  SegTrainConfig c;
  c.epochs = cfg.epochs;
  c.lr = cfg.lr;
  c.lr_decay = cfg.lr_decay;
  c.pixels_per_image = cfg.pixels_per_image;
  c.seed = cfg.seed;
  return c;
}

}  // namespace

SegTrainResult finetune_segmenter(const SegModel& model, const supervision::FinetuneStream& stream,
                                  std::span<const SegImage> synth, std::span<const SegImage> pseudo,
                                  const FinetuneConfig& cfg) {
  // Pseudo images follow the synthetic ones in one combined image table.
  std::vector<SegImage> images;
  images.reserve(synth.size() + pseudo.size());
  images.insert(images.end(), synth.begin(), synth.end());
  images.insert(images.end(), pseudo.begin(), pseudo.end());
  std::vector<std::size_t> order;
  order.reserve(stream.entries.size());
  for (const auto& e : stream.entries) {
    if (e.source == supervision::Source::kSynthetic) {
      if (e.index >= synth.size()) throw ContractError("fine-tune stream references a missing synthetic sample");
      order.push_back(e.index);
    } else {
      if (e.index >= pseudo.size()) throw ContractError("fine-tune stream references a missing pseudo-label");
      order.push_back(synth.size() + e.index);
    }
  }
  if (order.empty()) throw ContractError("finetune_segmenter: empty stream");
  return run_sgd(model, images, std::move(order), finetune_schedule(cfg), false);
}

SegTrainResult continue_supervised(const SegModel& model, std::span<const SegImage> synth, const FinetuneConfig& cfg) {
  if (synth.empty()) throw ContractError("continue_supervised: no synthetic images");
  std::vector<std::size_t> order(synth.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  rng.shuffle(order.begin(), order.end());
  return run_sgd(model, synth, std::move(order), finetune_schedule(cfg), false);
}

// ---------------------------------------------------------------------------
// Masks and features

Grid<std::uint8_t> morphological_open(const Grid<std::uint8_t>& mask, int radius) {
  if (radius < 0) throw ContractError("morphological_open: radius must be >= 0");
  if (radius == 0) return mask;
  std::vector<std::pair<int, int>> disc;
  for (int dv = -radius; dv <= radius; ++dv) {
    for (int du = -radius; du <= radius; ++du) {
      if (du * du + dv * dv <= radius * radius) disc.emplace_back(du, dv);
    }
  }
  const int w = mask.width(), h = mask.height();
  Grid<std::uint8_t> eroded(w, h, 0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      bool all = true;
      for (auto [du, dv] : disc) {
        const int x = u + du, y = v + dv;
        if (!mask.in_bounds(x, y) || mask(x, y) == 0) {
          all = false;
          break;
        }
      }
      eroded(u, v) = all ? 1 : 0;
    }
  }
  Grid<std::uint8_t> opened(w, h, 0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (eroded(u, v) == 0) continue;
      for (auto [du, dv] : disc) {
        const int x = u + du, y = v + dv;
        if (opened.in_bounds(x, y)) opened(x, y) = 1;
      }
    }
  }
  return opened;
}

namespace {

Grid<std::uint8_t> label_union(const LabelMap& seg, const std::vector<std::uint8_t>& labels) {
  std::array<bool, kNumLabels> member{};
  for (std::uint8_t l : labels) member[l] = true;
  Grid<std::uint8_t> m(seg.width(), seg.height(), 0);
  for (std::size_t i = 0; i < m.data().size(); ++i) m[i] = member[seg.labels[i]] ? 1 : 0;
  return m;
}

void depth_block(const DepthMap& depth, double ref, std::span<double> out) {
  const int w = depth.width(), h = depth.height();
  for (int by = 0; by < kRegDepthSide; ++by) {
    const int v0 = by * h / kRegDepthSide, v1 = std::max(v0 + 1, (by + 1) * h / kRegDepthSide);
    for (int bx = 0; bx < kRegDepthSide; ++bx) {
      const int u0 = bx * w / kRegDepthSide, u1 = std::max(u0 + 1, (bx + 1) * w / kRegDepthSide);
      double sum = 0.0;
      int n = 0;
      for (int v = v0; v < v1 && v < h; ++v) {
        for (int u = u0; u < u1 && u < w; ++u) {
          if (depth.is_foreground(u, v)) sum += depth.values(u, v) - ref;
          ++n;
        }
      }
      out[static_cast<std::size_t>(by) * kRegDepthSide + bx] = n ? sum / n : 0.0;
    }
  }
}

void mask_block(const DepthMap& depth, const Grid<std::uint8_t>& mask, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const int w = mask.width(), h = mask.height();
  double n = 0.0, su = 0.0, sv = 0.0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (mask(u, v) == 0) continue;
      n += 1.0;
      su += u;
      sv += v;
    }
  }
  if (n == 0.0) return;
  const double cu = su / n, cv = sv / n;
  double uu = 0.0, vv = 0.0, uv = 0.0;
  double dsum = 0.0, dmin = 0.0, dmax = 0.0;
  int dn = 0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (mask(u, v) == 0) continue;
      uu += (u - cu) * (u - cu);
      vv += (v - cv) * (v - cv);
      uv += (u - cu) * (v - cv);
      if (depth.is_foreground(u, v)) {
        const double d = depth.values(u, v);
        dmin = dn ? std::min(dmin, d) : d;
        dmax = dn ? std::max(dmax, d) : d;
        dsum += d;
        ++dn;
      }
    }
  }
  const double W = w, H = h;
  out[0] = n / (W * H);
  out[1] = cu / W;
  out[2] = cv / H;
  out[3] = uu / n / (W * W);
  out[4] = vv / n / (H * H);
  out[5] = uv / n / (W * H);
  if (dn > 0) {
    out[6] = dsum / dn;
    out[7] = dmin;
    out[8] = dmax;
  }
}

}  // namespace

JointMasks joint_masks(const LabelMap& seg, const JointLabelTable& table, int radius) {
  table.validate();
  JointMasks out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = morphological_open(label_union(seg, table.labels[j]), radius);
  return out;
}

std::vector<double> reg_features(const DepthMap& depth, const Grid<std::uint8_t>& mask) {
  if (!mask.same_shape(depth.foreground)) throw ContractError("reg_features: mask and depth differ in size");
  std::vector<double> f(kRegFeatureLength, 0.0);
  std::span<double> all(f);
  depth_block(depth, datagen::mean_foreground_depth(depth), all.first(kRegDepthSide * kRegDepthSide));
  mask_block(depth, mask, all.last(kMaskStats));
  return f;
}

std::vector<double> reg_features(const DepthMap& depth, const LabelMap& seg, int joint, const JointLabelTable& table,
                                 int radius) {
  if (joint < 0 || joint >= kNumJoints) throw ContractError("reg_features: joint index out of range");
  return reg_features(depth, morphological_open(label_union(seg, table.labels[joint]), radius));
}

// ---------------------------------------------------------------------------
// Regressor

void RegTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("regressor epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("regressor learning rate must be > 0");
  if (batch < 1) throw ConfigError("regressor batch must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (hidden < 1) throw ConfigError("regressor hidden width must be >= 1");
  if (mask_radius < 0) throw ConfigError("mask radius must be >= 0");
}

std::vector<double> joint_design(std::span<const RegSample> samples, int joint, int mask_radius, bool use_segmentation,
                                 const JointLabelTable& table) {
  std::vector<double> design(samples.size() * kRegFeatureLength);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto f = reg_features(samples[i].depth, samples[i].seg, joint, table, mask_radius);
    if (!use_segmentation) std::fill(f.end() - kMaskStats, f.end(), 0.0);
    std::copy(f.begin(), f.end(), design.begin() + static_cast<std::ptrdiff_t>(i * kRegFeatureLength));
  }
  return design;
}

LossGrad reg_loss_grad(const Mlp& head, std::span<const double> features, std::span<const double> targets,
                       std::span<const std::size_t> rows) {
  LossGrad r;
  r.grad.assign(head.params().size(), 0.0);
  if (rows.empty()) return r;
  const auto in = static_cast<std::size_t>(head.inputs());
  const auto outs = static_cast<std::size_t>(head.outputs());
  const double inv = 1.0 / static_cast<double>(rows.size());
  std::vector<double> hidden(static_cast<std::size_t>(head.hidden()));
  std::vector<double> y(outs), dy(outs);
  for (std::size_t row : rows) {
    const auto x = features.subspan(row * in, in);
    head.forward(x, hidden, y);
    double sq = 0.0;
    for (std::size_t o = 0; o < outs; ++o) {
      const double e = y[o] - targets[row * outs + o];
      sq += e * e;
      dy[o] = 2.0 * e * inv;
    }
    r.loss += sq * inv;
    head.backward(x, hidden, dy, r.grad);
  }
  if (!std::isfinite(r.loss)) throw DivergenceError("non-finite regressor loss");
  return r;
}

namespace {

void standardize_columns(std::vector<double>& m, std::size_t cols, std::vector<double>& mean, std::vector<double>& scale) {
  const std::size_t rows = m.size() / cols;
  mean.assign(cols, 0.0);
  scale.assign(cols, 1.0);
  if (rows == 0) return;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) mean[c] += m[r * cols + c];
  }
  for (auto& x : mean) x /= static_cast<double>(rows);
  std::vector<double> var(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = m[r * cols + c] - mean[c];
      var[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    const double s = std::sqrt(var[c] / static_cast<double>(rows));
    scale[c] = s > 1e-8 ? s : 1.0;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] = (m[r * cols + c] - mean[c]) / scale[c];
  }
}

}  // namespace

RegTrainResult train_regressor(std::span<const RegSample> samples, const RegTrainConfig& cfg, int jobs) {
  cfg.validate();
  if (samples.empty()) throw ContractError("train_regressor: no training samples");
  const auto table = JointLabelTable::standard();
  std::vector<double> refs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) refs[i] = datagen::mean_foreground_depth(samples[i].depth);

  RegTrainResult result;
  result.model.hidden = cfg.hidden;
  result.model.mask_radius = cfg.mask_radius;
  result.model.use_segmentation = cfg.use_segmentation;

  parallel_for(
      kNumJoints,
      [&](std::size_t jj) {
        const int j = static_cast<int>(jj);
        RegHead& head = result.model.heads[jj];
        auto design = joint_design(samples, j, cfg.mask_radius, cfg.use_segmentation, table);
        standardize_columns(design, kRegFeatureLength, head.feature_mean, head.feature_scale);
        std::vector<double> targets(samples.size() * 3);
        for (std::size_t i = 0; i < samples.size(); ++i) {
          targets[i * 3 + 0] = samples[i].joints[jj].u;
          targets[i * 3 + 1] = samples[i].joints[jj].v;
          targets[i * 3 + 2] = samples[i].joints[jj].z - refs[i];
        }
        std::vector<double> tmean, tscale;
        standardize_columns(targets, 3, tmean, tscale);
        std::copy(tmean.begin(), tmean.end(), head.target_mean.begin());
        std::copy(tscale.begin(), tscale.end(), head.target_scale.begin());

        const std::uint64_t seed = derive_seed(cfg.seed, jj);
        head.net = Mlp(kRegFeatureLength, cfg.hidden, 3);
        Rng init(derive_seed(seed, kInitStream));
        head.net.init(init);
        Adam adam;
        adam.lr = cfg.lr;
        adam.beta1 = cfg.beta1;
        adam.beta2 = cfg.beta2;
        adam.eps = cfg.eps;
        Rng order_rng(derive_seed(seed, kShuffleStream));
        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        const auto batch = static_cast<std::size_t>(cfg.batch);
        double last = 0.0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
          order_rng.shuffle(order.begin(), order.end());
          double sum = 0.0;
          for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::span<const std::size_t> rows(order.data() + b, std::min(batch, order.size() - b));
            const auto lg = reg_loss_grad(head.net, design, targets, rows);
            sum += lg.loss * static_cast<double>(rows.size());
            adam.update(head.net.params(), lg.grad);
          }
          last = sum / static_cast<double>(order.size());
          if (!std::isfinite(last)) throw DivergenceError("regressor for joint " + std::to_string(j) + " diverged");
        }
        check_finite(head.net.params(), "regressor training");
        result.final_loss[jj] = last;
      },
      jobs);
  return result;
}

JointSet predict_pose(const RegModel& model, const DepthMap& depth, const LabelMap& seg) {
  const auto table = JointLabelTable::standard();
  const double ref = datagen::mean_foreground_depth(depth);
  JointSet out{};
  std::vector<double> hidden(static_cast<std::size_t>(model.hidden));
  std::array<double, 3> y{};
  for (int j = 0; j < kNumJoints; ++j) {
    const RegHead& head = model.heads[j];
    auto f = reg_features(depth, seg, j, table, model.mask_radius);
    if (!model.use_segmentation) std::fill(f.end() - kMaskStats, f.end(), 0.0);
    for (std::size_t c = 0; c < f.size(); ++c) f[c] = (f[c] - head.feature_mean[c]) / head.feature_scale[c];
    head.net.forward(f, hidden, y);
    for (int k = 0; k < 3; ++k) y[k] = y[k] * head.target_scale[k] + head.target_mean[k];
    out[j] = {y[0], y[1], y[2] + ref};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checks

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

GradCheckReport grad_check_seg(const SegModel& model, std::span<const SegImage> images,
                               std::span<const PixelSample> batch, std::size_t per_block, std::uint64_t seed,
                               double step, double tolerance) {
  SegModel probe = model;
  const auto analytic = seg_loss_grad(probe, images, batch).grad;
  return run_grad_check(
      probe.net.params(), analytic, probe.net.blocks(), [&] { return seg_loss_grad(probe, images, batch).loss; },
      per_block, seed, step, tolerance);
}

GradCheckReport grad_check_reg(const Mlp& head, std::span<const double> features, std::span<const double> targets,
                               std::span<const std::size_t> rows, std::size_t per_block, std::uint64_t seed,
                               double step, double tolerance) {
  Mlp probe = head;
  const auto analytic = reg_loss_grad(probe, features, targets, rows).grad;
  return run_grad_check(
      probe.params(), analytic, probe.blocks(), [&] { return reg_loss_grad(probe, features, targets, rows).loss; },
      per_block, seed, step, tolerance);
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  char buf[160];
  for (const auto& b : report.blocks) {
    std::snprintf(buf, sizeof buf, "  %-4s checked=%-5zu max_rel_error=%.3e\n", b.name.c_str(), b.checked,
                  b.max_rel_error);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "  step=%.1e tolerance=%.1e max=%.3e %s\n", report.step, report.tolerance,
                report.max_rel_error(), report.pass ? "PASS" : "FAIL");
  os << buf;
  return os.str();
}

// ---------------------------------------------------------------------------
// Model files

void save_seg_model(const SegModel& model, const fs::path& path) {
  std::string out(kSegMagic, kSegMagic + 4);
  put_le<std::uint32_t>(out, kModelVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.patch));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden));
  put_le<std::uint64_t>(out, model.net.params().size());
  for (double p : model.net.params()) put_f64(out, p);
  write_all(path, out);
  nlohmann::json j = {{"format", "handlab-seg"},
                      {"version", kModelVersion},
                      {"patch", model.patch},
                      {"hidden", model.hidden},
                      {"outputs", kNumParts},
                      {"parameter_count", model.net.params().size()}};
  write_all(sidecar(path), j.dump(2) + "\n");
}

SegModel load_seg_model(const fs::path& path) {
  const std::string in = read_all(path);
  if (in.size() < 4 || in.compare(0, 4, std::string(kSegMagic, 4)) != 0) {
    throw FormatError("not a segmenter model (bad magic): " + path.string());
  }
  Reader r{in, path, 4};
  if (r.get<std::uint32_t>() != kModelVersion) throw FormatError("unsupported segmenter model version: " + path.string());
  const auto patch = static_cast<int>(r.get<std::uint32_t>());
  const auto hidden = static_cast<int>(r.get<std::uint32_t>());
  const auto count = r.get<std::uint64_t>();
  if (patch < 1 || patch % 2 == 0 || hidden < 1 || count != SegModel::parameter_count(patch, hidden)) {
    throw FormatError("inconsistent segmenter header: " + path.string());
  }
  if (in.size() - r.pos != count * 8) throw FormatError("segmenter parameter block size mismatch: " + path.string());
  SegModel m;
  m.patch = patch;
  m.hidden = hidden;
  m.net = Mlp(patch * patch, hidden, kNumParts);
  for (auto& p : m.net.params()) p = r.f64();
  check_finite(m.net.params(), path.string());
  return m;
}

void save_reg_model(const RegModel& model, const fs::path& path) {
  std::string out(kRegMagic, kRegMagic + 4);
  put_le<std::uint32_t>(out, kModelVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.mask_radius));
  put_le<std::uint32_t>(out, model.use_segmentation ? 1u : 0u);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kRegFeatureLength));
  for (const auto& h : model.heads) {
    put_le<std::uint64_t>(out, h.net.params().size());
    for (double p : h.net.params()) put_f64(out, p);
    for (double x : h.feature_mean) put_f64(out, x);
    for (double x : h.feature_scale) put_f64(out, x);
    for (double x : h.target_mean) put_f64(out, x);
    for (double x : h.target_scale) put_f64(out, x);
  }
  write_all(path, out);
  nlohmann::json j = {{"format", "handlab-reg"},
                      {"version", kModelVersion},
                      {"joints", kNumJoints},
                      {"features", kRegFeatureLength},
                      {"hidden", model.hidden},
                      {"outputs", 3},
                      {"mask_radius", model.mask_radius},
                      {"use_segmentation", model.use_segmentation}};
  write_all(sidecar(path), j.dump(2) + "\n");
}

RegModel load_reg_model(const fs::path& path) {
  const std::string in = read_all(path);
  if (in.size() < 4 || in.compare(0, 4, std::string(kRegMagic, 4)) != 0) {
    throw FormatError("not a regressor model (bad magic): " + path.string());
  }
  Reader r{in, path, 4};
  if (r.get<std::uint32_t>() != kModelVersion) throw FormatError("unsupported regressor model version: " + path.string());
  RegModel m;
  m.hidden = static_cast<int>(r.get<std::uint32_t>());
  m.mask_radius = static_cast<int>(r.get<std::uint32_t>());
  m.use_segmentation = r.get<std::uint32_t>() != 0;
  const auto features = r.get<std::uint32_t>();
  if (m.hidden < 1 || features != static_cast<std::uint32_t>(kRegFeatureLength)) {
    throw FormatError("inconsistent regressor header: " + path.string());
  }
  for (auto& h : m.heads) {
    const auto count = r.get<std::uint64_t>();
    if (count != Mlp::parameter_count(kRegFeatureLength, m.hidden, 3)) {
      throw FormatError("regressor head size mismatch: " + path.string());
    }
    h.net = Mlp(kRegFeatureLength, m.hidden, 3);
    for (auto& p : h.net.params()) p = r.f64();
    h.feature_mean.resize(features);
    h.feature_scale.resize(features);
    for (auto& x : h.feature_mean) x = r.f64();
    for (auto& x : h.feature_scale) x = r.f64();
    for (auto& x : h.target_mean) x = r.f64();
    for (auto& x : h.target_scale) x = r.f64();
    check_finite(h.net.params(), path.string());
  }
  if (r.pos != in.size()) throw FormatError("trailing bytes in regressor model: " + path.string());
  return m;
}

}  // namespace handlab::models
