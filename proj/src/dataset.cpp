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
#include "handlab/dataset.hpp"

#include <cstdio>
#include <json.hpp>

#include "handlab/image_io.hpp"

namespace handlab::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxAttempts = 1000;

std::uint64_t split_stream(Split split) { return static_cast<std::uint64_t>(split) + 1; }

json interval_json(const datagen::Interval& iv) { return json::array({iv.lo, iv.hi}); }

json generator_json(const datagen::GeneratorConfig& g) {
  json flexion = json::array();
  for (int f = 0; f < datagen::kNumFingers; ++f) {
    json segs = json::array();
    for (int s = 0; s < datagen::kSegmentsPerFinger[f]; ++s) segs.push_back(interval_json(g.flexion[f][s]));
    flexion.push_back(segs);
  }
  json abduction = json::array();
  for (const auto& iv : g.abduction) abduction.push_back(interval_json(iv));
  return {{"image_size", g.image_size},
          {"flexion", flexion},
          {"abduction", abduction},
          {"global_rotation", interval_json(g.global_rotation)},
          {"palm_scale", interval_json(g.palm_scale)},
          {"finger_width", interval_json(g.finger_width)},
          {"depth_offset", interval_json(g.depth_offset)}};
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kSynth:
      return "synth";
    case Split::kReal:
      return "real";
    case Split::kTest:
      return "test";
  }
  return "?";
}

void DatasetConfig::validate() const {
  if (n_synth < 1 || n_real < 1 || n_test < 1) throw ConfigError("dataset split counts must be >= 1");
  generator.validate();
  noise.validate();
}

std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

Sample generate_sample(Split split, int index, const DatasetConfig& cfg) {
  const std::uint64_t sample_seed = derive_seed(derive_seed(cfg.seed, split_stream(split)), static_cast<std::uint64_t>(index));
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t pose_seed = derive_seed(sample_seed, static_cast<std::uint64_t>(2 * attempt));
    datagen::RenderedHand hand;
    try {
      hand = datagen::render_hand(datagen::sample_pose(cfg.generator, pose_seed), cfg.generator.image_size);
    } catch (const GenerationError&) {
      continue;
    }
    Sample sample{sample_id(index), std::move(hand.depth), std::move(hand.labels), hand.joints};
    if (split != Split::kSynth) {
      datagen::DomainShiftConfig noise = cfg.noise;
      noise.seed = derive_seed(sample_seed, static_cast<std::uint64_t>(2 * attempt + 1));
      sample.depth = datagen::apply_sensor_noise(sample.depth, noise);
    }
    return sample;
  }
  throw GenerationError("could not render sample " + std::to_string(index) + " inside the frame");
}

std::vector<fs::path> sample_files(const fs::path& root, Split split, const std::string& id) {
  const fs::path dir = root / std::string(split_name(split));
  return {dir / (id + ".depth.pgm"), dir / (id + ".labels.pgm"), dir / (id + ".joints.csv")};
}

void write_sample(const fs::path& root, Split split, const Sample& sample) {
  const auto files = sample_files(root, split, sample.id);
  io::write_depth_pgm(files[0], sample.depth);
  io::write_label_pgm(files[1], sample.labels);
  io::write_joints_csv(files[2], sample.joints);
}

Sample read_sample(const fs::path& root, Split split, const std::string& id) {
  const auto files = sample_files(root, split, id);
  Sample s;
  s.id = id;
  s.depth = io::read_depth_pgm(files[0]);
  s.labels = io::read_label_pgm(files[1]);
  s.joints = io::read_joints_csv(files[2]);
  if (s.depth.width() != s.labels.width() || s.depth.height() != s.labels.height()) {
    throw FormatError("depth/label size mismatch for sample " + files[0].string());
  }
  return s;
}

std::vector<std::string> list_samples(const fs::path& root, Split split) {
  const fs::path dir = root / std::string(split_name(split));
  if (!fs::is_directory(dir)) throw IoError("missing split directory " + dir.string());
  std::vector<std::string> ids;
  const std::string suffix = ".joints.csv";
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Sample> load_split(const fs::path& root, Split split, int jobs) {
  const auto ids = list_samples(root, split);
  std::vector<Sample> samples(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) { samples[i] = read_sample(root, split, ids[i]); }, jobs);
  return samples;
}

std::vector<fs::path> generate_dataset(const fs::path& root, const DatasetConfig& cfg, int jobs) {
  cfg.validate();
  std::vector<fs::path> written;
  const std::array<int, 3> counts{cfg.n_synth, cfg.n_real, cfg.n_test};
  for (std::size_t s = 0; s < kAllSplits.size(); ++s) {
    const Split split = kAllSplits[s];
    const fs::path dir = root / std::string(split_name(split));
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    parallel_for(
        static_cast<std::size_t>(counts[s]),
        [&](std::size_t i) { write_sample(root, split, generate_sample(split, static_cast<int>(i), cfg)); }, jobs);
    for (int i = 0; i < counts[s]; ++i) {
      for (auto& f : sample_files(root, split, sample_id(i))) written.push_back(std::move(f));
    }
  }

  json labels = json::object();
  for (int l = 0; l < kNumLabels; ++l) labels[std::to_string(l)] = datagen::part_names()[l];
  json joints = json::object();
  for (int j = 0; j < kNumJoints; ++j) joints[std::to_string(j)] = datagen::joint_names()[j];
  const json manifest = {
      {"format", "handlab-dataset"},
      {"version", 1},
      {"seed", cfg.seed},
      {"counts", {{"synth", cfg.n_synth}, {"real", cfg.n_real}, {"test", cfg.n_test}}},
      {"generator", generator_json(cfg.generator)},
      {"noise",
       {{"gaussian_depth_sigma", cfg.noise.gaussian_depth_sigma},
        {"hole_probability", cfg.noise.hole_probability},
        {"quantization_step", cfg.noise.quantization_step},
        {"edge_erosion_radius", cfg.noise.edge_erosion_radius}}},
      {"labels", labels},
      {"joints", joints},
      {"layout", "<root>/{synth,real,test}/<id>.{depth.pgm,labels.pgm,joints.csv}"},
  };
  const fs::path manifest_path = root / "manifest.json";
  io::write_text_file(manifest_path, manifest.dump(2) + "\n");
  written.push_back(manifest_path);
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace handlab::dataset
