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
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "handlab/config.hpp"
#include "handlab/dataset.hpp"
#include "handlab/image_io.hpp"
#include "handlab/models.hpp"
#include "handlab/patchdict.hpp"
#include "handlab/pipeline.hpp"
#include "handlab/restoration.hpp"

namespace fs = std::filesystem;
using namespace handlab;

namespace {

constexpr int kExitError = 1;
constexpr int kExitContract = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
  bool force = false;
};

config::PipelineConfig resolve(const Globals& g) {
  auto cfg = g.config_path.empty() ? config::PipelineConfig() : config::PipelineConfig::load(g.config_path);
  if (g.seed) cfg.run.seed = *g.seed;
  if (g.out) cfg.run.out = *g.out;
  if (g.jobs) cfg.run.jobs = *g.jobs;
  cfg.validate();
  if (cfg.run.jobs > 0) set_default_jobs(cfg.run.jobs);
  return cfg;
}

void report(const pipeline::StageOutcome& o) {
  if (o.ran) {
    std::printf("%-13s ran      %8.2fs  (%s)\n", o.stage.c_str(), o.duration_s, o.reason.c_str());
  } else {
    std::printf("%-13s skipped            (%s)\n", o.stage.c_str(), o.reason.c_str());
  }
  std::fflush(stdout);
}

int run_stage(const Globals& g, const std::string& name) {
  pipeline::Pipeline p(resolve(g));
  report(p.run_stage(name, g.force));
  return 0;
}

// Small in-memory sample set so gradient checks need no pipeline artifacts.
std::vector<dataset::Sample> check_samples(std::uint64_t seed, int n) {
  dataset::DatasetConfig d;
  d.seed = seed;
  std::vector<dataset::Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(dataset::generate_sample(dataset::Split::kSynth, i, d));
  return out;
}

int grad_check_seg(const config::PipelineConfig& cfg) {
  const auto samples = check_samples(cfg.run.seed, 2);
  std::vector<models::SegImage> images;
  for (const auto& s : samples) {
    images.push_back({s.id, datagen::local_contrast_normalize(s.depth, cfg.seg.contrast_kernel), s.labels});
  }
  bool pass = true;
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = models::make_seg_model(cfg.seg.patch, cfg.seg.hidden, derive_seed(cfg.run.seed, trial));
    auto px = models::trainable_pixels(images[trial % 2], static_cast<std::uint32_t>(trial % 2));
    px.resize(std::min<std::size_t>(px.size(), 16));
    const auto r = models::grad_check_seg(model, images, px, 24, derive_seed(cfg.run.seed, 100 + trial));
    std::printf("segmenter NLL, parameter setting %d\n%s", trial, models::format_report(r).c_str());
    pass = pass && r.pass;
  }
  return pass ? 0 : kExitContract;
}

int grad_check_reg(const config::PipelineConfig& cfg) {
  const auto samples = check_samples(cfg.run.seed, 8);
  std::vector<models::RegSample> rs;
  for (const auto& s : samples) rs.push_back({s.id, s.depth, s.labels, s.joints});
  const auto table = supervision::JointLabelTable::standard();
  bool pass = true;
  for (int trial = 0; trial < 10; ++trial) {
    const int joint = trial % kNumJoints;
    const auto design = models::joint_design(rs, joint, cfg.reg.mask_radius, true, table);
    std::vector<double> targets;
    for (const auto& s : rs) targets.insert(targets.end(), {s.joints[joint].u / 48.0, s.joints[joint].v / 48.0, s.joints[joint].z});
    models::Mlp head(models::kRegFeatureLength, cfg.reg.hidden, 3);
    Rng rng(derive_seed(cfg.run.seed, 200 + trial));
    head.init(rng);
    std::vector<std::size_t> rows(rs.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    const auto r = models::grad_check_reg(head, design, targets, rows, 24, derive_seed(cfg.run.seed, 300 + trial));
    std::printf("regressor L2, joint %d, parameter setting %d\n%s", joint, trial, models::format_report(r).c_str());
    pass = pass && r.pass;
  }
  return pass ? 0 : kExitContract;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handlab: weakly supervised hand pose laboratory"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override [run] seed");
  app.add_option("--jobs", g.jobs, "Worker thread cap")->check(CLI::NonNegativeNumber);
  app.add_option("--out", g.out, "Override [run] out (run root)");
  app.add_flag("--force", g.force, "Run the stage even when it is up to date");
  app.set_version_flag("--version", std::string(pipeline::tool_version()));

  std::function<int()> action;

  auto* gen = app.add_subcommand("generate", "Generate synthetic, real-proxy and test splits");
  gen->callback([&] { action = [&] { return run_stage(g, "generate"); }; });

  bool grad_check = false;
  auto* train_seg = app.add_subcommand("train-seg", "Supervised segmenter pre-training on the synthetic split");
  train_seg->add_flag("--grad-check", grad_check, "Run the segmenter gradient check instead of training");
  train_seg->callback([&] {
    action = [&] { return grad_check ? grad_check_seg(resolve(g)) : run_stage(g, "train-seg"); };
  });

  auto* build_dict = app.add_subcommand("build-dict", "Extract the label patch dictionary");
  build_dict->callback([&] { action = [&] { return run_stage(g, "build-dict"); }; });

  std::optional<std::string> method, dict_path, input, output, energy_trace;
  std::optional<int> window, ranks;
  std::optional<double> alpha;
  auto* restore = app.add_subcommand("restore", "Restore predicted label maps with the patch dictionary");
  restore->add_option("--method", method, "center | vote | crf-potts | crf-overlap")
      ->check(CLI::IsMember({"center", "vote", "crf-potts", "crf-overlap"}));
  restore->add_option("--window", window, "Voting window (odd)");
  restore->add_option("--alpha", alpha, "CRF pairwise weight");
  restore->add_option("--ranks", ranks, "CRF candidates per pixel");
  restore->add_option("--dict", dict_path, "Dictionary file (default: <out>/dict/dictionary.pdct)");
  restore->add_option("--input", input, "Restore one label PGM instead of running the stage");
  restore->add_option("--output", output, "Output label PGM for --input");
  restore->add_option("--energy-trace", energy_trace, "CSV of per-sweep CRF energies (with --input)");
  restore->callback([&] {
    action = [&] {
      auto cfg = resolve(g);
      if (method) cfg.restore.method = *method;
      if (window) cfg.restore.window = *window;
      if (alpha) cfg.restore.alpha = *alpha;
      if (ranks) cfg.restore.ranks = *ranks;
      cfg.validate();
      if (!input) {
        if (dict_path || output || energy_trace) throw ConfigError("--dict/--output/--energy-trace require --input");
        pipeline::Pipeline p(cfg);
        report(p.run_stage("restore", g.force));
        return 0;
      }
      if (!output) throw ConfigError("--input requires --output");
      const fs::path dpath = dict_path ? fs::path(*dict_path) : fs::path(cfg.run.out) / pipeline::paths::kDictionary;
      const auto d = patchdict::load_dictionary(dpath);
      restoration::RestorationConfig r;
      r.window = cfg.restore.window;
      r.crf_alpha = cfg.restore.alpha;
      r.crf_ranks = cfg.restore.ranks;
      r.crf_max_sweeps = cfg.restore.max_sweeps;
      std::vector<double> trace;
      const auto restored = restoration::restore(io::read_label_pgm(*input), d, restoration::parse_method(cfg.restore.method),
                                                 r, cfg.run.jobs > 0 ? cfg.run.jobs : default_jobs(), &trace);
      io::write_label_pgm(*output, restored);
      if (energy_trace) {
        std::string csv = "sweep,energy\n";
        for (std::size_t i = 0; i < trace.size(); ++i) csv += std::to_string(i) + "," + io::format_double(trace[i]) + "\n";
        io::write_text_file(*energy_trace, csv);
      }
      return 0;
    };
  });

  auto* gate = app.add_subcommand("gate", "Gate restored maps and build the fine-tuning stream");
  gate->callback([&] { action = [&] { return run_stage(g, "gate"); }; });

  auto* finetune = app.add_subcommand("finetune-seg", "Fine-tune the segmenter on the mixed stream");
  finetune->add_flag("--grad-check", grad_check, "Run the segmenter gradient check instead of training");
  finetune->callback([&] {
    action = [&] { return grad_check ? grad_check_seg(resolve(g)) : run_stage(g, "finetune-seg"); };
  });

  auto* train_reg = app.add_subcommand("train-reg", "Train the per-joint regressors");
  train_reg->add_flag("--grad-check", grad_check, "Run the regressor gradient check instead of training");
  train_reg->callback([&] {
    action = [&] { return grad_check ? grad_check_reg(resolve(g)) : run_stage(g, "train-reg"); };
  });

  std::string depth_in, joints_out;
  std::optional<std::string> labels_out, seg_model, reg_model;
  auto* predict = app.add_subcommand("predict", "Predict labels and joints for one depth PGM");
  predict->add_option("--depth", depth_in, "Input 16-bit depth PGM")->required()->check(CLI::ExistingFile);
  predict->add_option("--joints", joints_out, "Output joints CSV")->required();
  predict->add_option("--labels", labels_out, "Output label PGM");
  predict->add_option("--seg-model", seg_model, "Segmenter (default: <out>/models/seg_finetuned.bin)");
  predict->add_option("--reg-model", reg_model, "Regressor (default: <out>/models/reg.bin)");
  predict->callback([&] {
    action = [&] {
      const auto cfg = resolve(g);
      const fs::path root(cfg.run.out);
      const auto seg = models::load_seg_model(seg_model ? fs::path(*seg_model) : root / pipeline::paths::kSegFinetuned);
      const auto reg = models::load_reg_model(reg_model ? fs::path(*reg_model) : root / pipeline::paths::kReg);
      const auto depth = io::read_depth_pgm(depth_in);
      const auto labels = models::predict_labelmap(seg, datagen::local_contrast_normalize(depth, cfg.seg.contrast_kernel),
                                                   cfg.run.jobs > 0 ? cfg.run.jobs : default_jobs());
      io::write_joints_csv(joints_out, models::predict_pose(reg, depth, labels));
      if (labels_out) io::write_label_pgm(*labels_out, labels);
      return 0;
    };
  });

  auto* eval = app.add_subcommand("eval", "Score segmenters, restoration and the regressor on the test split");
  eval->callback([&] { action = [&] { return run_stage(g, "eval"); }; });

  auto* ablation = app.add_subcommand("ablation", "Train and compare regressor variants a, c, d");
  ablation->callback([&] { action = [&] { return run_stage(g, "ablation"); }; });

  auto* run = app.add_subcommand("run", "Run pipeline stages");
  run->require_subcommand(1);
  bool no_ablation = false;
  auto* run_all = run->add_subcommand("all", "Run every stage, skipping those that are up to date");
  run_all->add_flag("--no-ablation", no_ablation, "Stop after eval");
  run_all->callback([&] {
    action = [&] {
      pipeline::Pipeline p(resolve(g));
      if (g.force) fs::remove(p.manifest_path());
      pipeline::Pipeline fresh(p.config());
      for (const auto& o : fresh.run_all(!no_ablation)) report(o);
      std::printf("manifest: %s\n", fresh.manifest_path().string().c_str());
      return 0;
    };
  });

  auto* dict = app.add_subcommand("dict", "Dictionary utilities");
  dict->require_subcommand(1);
  std::optional<std::string> stats_path;
  std::size_t pairs = 20000;
  auto* stats = dict->add_subcommand("stats", "Print dictionary size and distance histograms");
  stats->add_option("--dict", stats_path, "Dictionary file (default: <out>/dict/dictionary.pdct)");
  stats->add_option("--pairs", pairs, "Sampled pairs for the distance histogram");
  stats->callback([&] {
    action = [&] {
      const auto cfg = resolve(g);
      const fs::path path = stats_path ? fs::path(*stats_path) : fs::path(cfg.run.out) / pipeline::paths::kDictionary;
      const auto d = patchdict::load_dictionary(path);
      const auto s = patchdict::compute_stats(d, pairs, cfg.run.seed);
      std::printf("file        %s\n", path.string().c_str());
      std::printf("patches     %zu\n", s.count);
      std::printf("patch_size  %d\n", s.patch_size);
      std::printf("file_bytes  %zu (on disk %ju)\n", s.file_bytes, static_cast<std::uintmax_t>(fs::file_size(path)));
      std::printf("center label histogram\n");
      for (int l = 0; l < kNumLabels; ++l) {
        if (s.center_labels[l]) std::printf("  %2d  %zu\n", l, s.center_labels[l]);
      }
      std::printf("pair distance histogram (%zu pairs, bucket width %u)\n", s.sampled_pairs, s.bucket_width);
      for (std::size_t b = 0; b < s.pair_histogram.size(); ++b) {
        std::printf("  [%5zu, %5zu)  %zu\n", b * s.bucket_width, (b + 1) * s.bucket_width, s.pair_histogram[b]);
      }
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action ? action() : 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
