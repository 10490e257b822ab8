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
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "handlab/datagen.hpp"
#include "handlab/dataset.hpp"
#include "handlab/image_io.hpp"
#include "handlab/metrics.hpp"
#include "handlab/models.hpp"
#include "test_util.hpp"

using namespace handlab;
using namespace handlab::models;
using handlab::testing::TempDir;

namespace {

std::vector<SegImage> seg_images(dataset::Split split, int n, std::uint64_t seed) {
  dataset::DatasetConfig cfg;
  cfg.seed = seed;
  std::vector<SegImage> out;
  for (int i = 0; i < n; ++i) {
    auto s = dataset::generate_sample(split, i, cfg);
    out.push_back({s.id, datagen::local_contrast_normalize(s.depth, 9), s.labels});
  }
  return out;
}

std::vector<PixelSample> some_pixels(const std::vector<SegImage>& images, std::size_t per_image) {
  std::vector<PixelSample> out;
  for (std::uint32_t i = 0; i < images.size(); ++i) {
    auto px = trainable_pixels(images[i], i);
    for (std::size_t k = 0; k < std::min(per_image, px.size()); ++k) out.push_back(px[k * (px.size() / per_image)]);
  }
  return out;
}

// Opening from the definition: union of every disc placement that fits inside the mask.
Grid<std::uint8_t> opening_oracle(const Grid<std::uint8_t>& m, int r) {
  Grid<std::uint8_t> out(m.width(), m.height(), 0);
  for (int cv = 0; cv < m.height(); ++cv) {
    for (int cu = 0; cu < m.width(); ++cu) {
      bool fits = true;
      for (int dv = -r; dv <= r && fits; ++dv) {
        for (int du = -r; du <= r; ++du) {
          if (du * du + dv * dv > r * r) continue;
          if (!m.in_bounds(cu + du, cv + dv) || !m(cu + du, cv + dv)) {
            fits = false;
            break;
          }
        }
      }
      if (!fits) continue;
      for (int dv = -r; dv <= r; ++dv) {
        for (int du = -r; du <= r; ++du) {
          if (du * du + dv * dv <= r * r) out(cu + du, cv + dv) = 1;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("segmenter parameter count") {
  const auto m = make_seg_model(9, 64, 1);
  CHECK(m.net.params().size() == static_cast<std::size_t>((81 + 1) * 64 + (64 + 1) * 20));
  CHECK(SegModel::parameter_count(9, 64) == m.net.params().size());
}

TEST_CASE("uniform segmenter gives probability 1/20 and loss ln 20") {
  const auto images = seg_images(dataset::Split::kSynth, 2, 3);
  const auto m = make_seg_model(9, 16, 4, 0.0);
  const auto px = some_pixels(images, 20);
  const auto p = seg_forward(m, images[0].normalized, px[0].u, px[0].v);
  for (double x : p) CHECK(x == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(std::abs(seg_loss_grad(m, images, px).loss - std::log(20.0)) < 1e-12);
  // Argmax of a uniform distribution is label 1.
  const auto pred = predict_labelmap(m, images[0].normalized);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    CHECK(pred.labels[i] == (images[0].normalized.foreground[i] ? 1 : 0));
  }
}

TEST_CASE("toy 3x3 forward pass by hand") {
  SegModel m;
  m.patch = 3;
  m.hidden = 2;
  m.net = Mlp(9, 2, 20);
  auto& p = m.net.params();
  std::fill(p.begin(), p.end(), 0.0);
  // Hidden 0 sums the center row; hidden 1 reads the top-left cell (zero, out of bounds) minus one.
  p[3] = p[4] = p[5] = 1.0;
  p[9 + 0] = 1.0;
  p[18 + 0] = 0.0;
  p[18 + 1] = -1.0;
  // Output l reads hidden 0 with weight l/10.
  for (int l = 0; l < 20; ++l) p[20 + 2 * l] = l / 10.0;
  p[20 + 40 + 7] = 0.5;

  DepthMap d(3, 2);
  d.values(0, 0) = 1.0;
  d.values(1, 0) = 2.0;
  d.values(2, 0) = 4.0;
  d.values(0, 1) = 8.0;
  d.foreground(0, 0) = 1;
  // Centered at (0, 0): center row reads (-1,0)=0, (0,0)=1, (1,0)=2 -> h0 = 3.
  const auto prob = seg_forward(m, d, 0, 0);
  std::array<double, 20> z{};
  for (int l = 0; l < 20; ++l) z[l] = 3.0 * l / 10.0 + (l == 7 ? 0.5 : 0.0);
  double norm = 0.0;
  for (double x : z) norm += std::exp(x);
  for (int l = 0; l < 20; ++l) CHECK(prob[l] == doctest::Approx(std::exp(z[l]) / norm).epsilon(1e-12));
  CHECK_THROWS_AS(seg_forward(m, d, 1, 0), ContractError);
}

TEST_CASE("probabilities are normalized on random inputs") {
  const auto images = seg_images(dataset::Split::kReal, 2, 5);
  const auto m = make_seg_model(9, 32, 6, 3.0);
  for (const auto& px : some_pixels(images, 30)) {
    const auto p = seg_forward(m, images[px.image].normalized, px.u, px.v);
    double s = 0.0;
    for (double x : p) {
      REQUIRE(x > 0.0);
      s += x;
    }
    REQUIRE(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("duplicating samples leaves the mean loss unchanged") {
  const auto images = seg_images(dataset::Split::kSynth, 2, 7);
  const auto m = make_seg_model(9, 16, 8);
  auto px = some_pixels(images, 25);
  const double once = seg_loss_grad(m, images, px).loss;
  auto twice = px;
  twice.insert(twice.end(), px.begin(), px.end());
  CHECK(seg_loss_grad(m, images, twice).loss == doctest::Approx(once).epsilon(1e-13));
}

TEST_CASE("segmenter gradient check") {
  const auto images = seg_images(dataset::Split::kSynth, 2, 9);
  const auto px = some_pixels(images, 8);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto m = make_seg_model(5, 8, 100 + s, 1.0);
    const auto r = grad_check_seg(m, images, px, 20, s);
    CHECK_MESSAGE(r.pass, format_report(r));
    CHECK(r.blocks.size() == 4);
  }
}

TEST_CASE("regressor gradient check") {
  Rng rng(1);
  const int in = 12, rows = 9;
  std::vector<double> x(static_cast<std::size_t>(in) * rows), y(3 * rows);
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::uint64_t s = 0; s < 3; ++s) {
    Mlp head(in, 7, 3);
    Rng init(s);
    head.init(init);
    const auto r = grad_check_reg(head, x, y, idx, 40, s);
    CHECK_MESSAGE(r.pass, format_report(r));
  }
}

TEST_CASE("regressor loss by hand") {
  // Zero network: outputs are the output biases.
  Mlp head(2, 1, 3);
  std::fill(head.params().begin(), head.params().end(), 0.0);
  head.params()[head.params().size() - 3] = 1.0;
  const std::vector<double> x{0.0, 0.0, 0.0, 0.0};
  const std::vector<double> y{1.0, 2.0, 0.0, 0.0, 0.0, 0.0};
  const std::vector<std::size_t> rows{0, 1};
  // Row 0 error (0, -2, 0) -> 4; row 1 error (1, 0, 0) -> 1; mean 2.5.
  CHECK(reg_loss_grad(head, x, y, rows).loss == doctest::Approx(2.5));
}

TEST_CASE("segmenter training") {
  const auto train = seg_images(dataset::Split::kSynth, 50, 11);
  SegTrainConfig cfg;
  cfg.epochs = 3;
  cfg.pixels_per_image = 64;
  cfg.seed = 5;
  const auto a = train_segmenter(train, cfg, 9, 32);
  const auto b = train_segmenter(train, cfg, 9, 32);
  CHECK(a.model == b.model);
  REQUIRE(a.curve.size() == 4);
  CHECK(a.curve[0].epoch == 0);
  CHECK(a.curve[1].mean_loss < a.curve[0].mean_loss);
  cfg.seed = 6;
  CHECK_FALSE(train_segmenter(train, cfg, 9, 32).model == a.model);

  // Held-out synthetic accuracy well above the 5% chance level.
  SegTrainConfig full = cfg;
  full.epochs = 8;
  const auto model = train_segmenter(train, full, 9, 32).model;
  const auto held = seg_images(dataset::Split::kSynth, 10, 12);
  metrics::SegCounts counts;
  for (const auto& im : held) counts += metrics::seg_counts(predict_labelmap(model, im.normalized), im.targets);
  CHECK(metrics::score(counts).per_pixel >= 0.5);
}

TEST_CASE("empty pseudo set matches supervised continuation bitwise") {
  const auto synth = seg_images(dataset::Split::kSynth, 6, 13);
  const auto base = make_seg_model(9, 16, 1);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.pixels_per_image = 32;
  cfg.seed = 21;
  std::vector<std::string> ids;
  for (const auto& s : synth) ids.push_back(s.id);
  const auto stream = supervision::build_finetune_stream(ids, supervision::PseudoLabelSet{}, 9, cfg.seed);
  REQUIRE(stream.degenerate);
  const auto tuned = finetune_segmenter(base, stream, synth, {}, cfg);
  const auto cont = continue_supervised(base, synth, cfg);
  CHECK(tuned.model == cont.model);
  CHECK_FALSE(tuned.model == base);
}

TEST_CASE("morphological opening") {
  Rng rng(2);
  SUBCASE("radius zero is the identity") {
    Grid<std::uint8_t> m(9, 9, 0);
    for (auto& c : m.data()) c = rng.uniform() < 0.5;
    CHECK(morphological_open(m, 0) == m);
  }
  SUBCASE("isolated pixel vanishes") {
    Grid<std::uint8_t> m(7, 7, 0);
    m(3, 3) = 1;
    CHECK(morphological_open(m, 1) == Grid<std::uint8_t>(7, 7, 0));
  }
  SUBCASE("salt noise is removed from a blob") {
    Grid<std::uint8_t> blob(20, 20, 0);
    for (int v = 5; v < 13; ++v) {
      for (int u = 4; u < 12; ++u) blob(u, v) = 1;
    }
    auto salty = blob;
    salty(16, 2) = salty(1, 17) = salty(17, 17) = salty(15, 9) = 1;
    CHECK(morphological_open(salty, 1) == morphological_open(blob, 1));
    CHECK(morphological_open(blob, 1) == opening_oracle(blob, 1));
  }
  SUBCASE("agrees with the definition, is anti-extensive and idempotent") {
    for (int t = 0; t < 20; ++t) {
      Grid<std::uint8_t> m(16, 16, 0);
      for (auto& c : m.data()) c = rng.uniform() < 0.7;
      for (int r : {1, 2}) {
        const auto o = morphological_open(m, r);
        REQUIRE(o == opening_oracle(m, r));
        for (std::size_t i = 0; i < o.size(); ++i) REQUIRE((o[i] == 0 || m[i] != 0));
        REQUIRE(morphological_open(o, r) == o);
      }
    }
  }
  CHECK_THROWS_AS(morphological_open(Grid<std::uint8_t>(3, 3, 0), -1), ContractError);
}

TEST_CASE("regression features") {
  DepthMap d(48, 48);
  for (int v = 10; v < 30; ++v) {
    for (int u = 12; u < 28; ++u) {
      d.values(u, v) = 0.5 + 0.001 * u;
      d.foreground(u, v) = 1;
    }
  }
  Grid<std::uint8_t> empty(48, 48, 0);
  const auto f = reg_features(d, empty);
  CHECK(f.size() == 24 * 24 + 9);
  CHECK(static_cast<int>(f.size()) == kRegFeatureLength);
  for (int k = 0; k < kMaskStats; ++k) CHECK(f[576 + k] == 0.0);

  Grid<std::uint8_t> one(48, 48, 0);
  one(20, 15) = 1;
  const auto g = reg_features(d, one);
  const double dv = d.values(20, 15);
  CHECK(g[576 + 6] == dv);
  CHECK(g[576 + 7] == dv);
  CHECK(g[576 + 8] == dv);
  CHECK(g[576] == doctest::Approx(1.0 / (48 * 48)));
  CHECK(g[577] == doctest::Approx(20.0 / 48));
  CHECK(g[578] == doctest::Approx(15.0 / 48));
  CHECK(g[579] == 0.0);

  // The 2x2 block at (6, 5) covers pixels u 12..13, v 10..11.
  const double mean = datagen::mean_foreground_depth(d);
  const double want = (2 * (0.5 + 0.012 - mean) + 2 * (0.5 + 0.013 - mean)) / 4.0;
  CHECK(g[5 * 24 + 6] == doctest::Approx(want));
  CHECK(g[0] == 0.0);
  CHECK(std::equal(f.begin(), f.begin() + 576, g.begin()));
}

TEST_CASE("regressor memorizes a constant target") {
  dataset::DatasetConfig dc;
  dc.seed = 4;
  std::vector<RegSample> samples;
  for (int i = 0; i < 12; ++i) {
    auto s = dataset::generate_sample(dataset::Split::kSynth, i, dc);
    JointSet joints{};
    const double ref = datagen::mean_foreground_depth(s.depth);
    for (int j = 0; j < kNumJoints; ++j) joints[j] = {10.0 + j, 20.0 - j, ref + 0.01 * j};
    samples.push_back({s.id, s.depth, s.labels, joints});
  }
  RegTrainConfig cfg;
  cfg.epochs = 1500;
  cfg.hidden = 16;
  cfg.lr = 2e-4;
  cfg.batch = 12;
  cfg.seed = 3;
  const auto r = train_regressor(samples, cfg);
  for (double l : r.final_loss) CHECK(l < 1e-5);
  const auto pose = predict_pose(r.model, samples[3].depth, samples[3].seg);
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK(std::abs(pose[j].u - samples[3].joints[j].u) < 0.01);
    CHECK(std::abs(pose[j].v - samples[3].joints[j].v) < 0.01);
    CHECK(std::abs(pose[j].z - samples[3].joints[j].z) < 0.01);
  }
  CHECK(train_regressor(samples, cfg).model == r.model);
}

TEST_CASE("model files round trip") {
  TempDir dir("models");
  const auto seg = make_seg_model(9, 12, 3);
  save_seg_model(seg, dir / "seg.bin");
  CHECK(load_seg_model(dir / "seg.bin") == seg);

  RegModel reg;
  reg.hidden = 4;
  reg.use_segmentation = false;
  Rng rng(5);
  for (auto& h : reg.heads) {
    h.net = Mlp(kRegFeatureLength, 4, 3);
    h.net.init(rng);
    h.feature_mean.assign(kRegFeatureLength, 0.25);
    h.feature_scale.assign(kRegFeatureLength, 2.0);
    h.target_mean = {1.0, 2.0, 3.0};
    h.target_scale = {0.5, 0.25, 0.125};
  }
  save_reg_model(reg, dir / "reg.bin");
  CHECK(load_reg_model(dir / "reg.bin") == reg);

  const std::string bytes = io::read_text_file(dir / "seg.bin");
  io::write_text_file(dir / "cut.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_seg_model(dir / "cut.bin"), FormatError);
  CHECK_THROWS_AS(load_reg_model(dir / "seg.bin"), FormatError);
}
