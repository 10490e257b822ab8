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
#include "handlab/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "handlab/dataset.hpp"
#include "handlab/image_io.hpp"
#include "handlab/metrics.hpp"
#include "handlab/models.hpp"
#include "handlab/patchdict.hpp"
#include "handlab/restoration.hpp"
#include "handlab/supervision.hpp"
#include "json.hpp"

#ifndef HANDLAB_VERSION
#define HANDLAB_VERSION "0.0.0"
#endif

namespace handlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using dataset::Split;

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return sha256_hex(ss.str());
}

std::string_view tool_version() { return HANDLAB_VERSION; }

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate",     "train-seg", "build-dict", "restore", "gate",
                                              "finetune-seg", "train-reg", "eval",       "ablation"};
  return names;
}

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps{
      {"generate", {}},
      {"train-seg", {"generate"}},
      {"build-dict", {"generate"}},
      {"restore", {"generate", "train-seg", "build-dict"}},
      {"gate", {"generate", "restore"}},
      {"finetune-seg", {"generate", "train-seg", "restore", "gate"}},
      {"train-reg", {"generate", "finetune-seg"}},
      {"eval", {"generate", "train-seg", "build-dict", "restore", "finetune-seg", "train-reg"}},
      {"ablation", {"generate", "train-seg", "finetune-seg", "train-reg"}},
  };
  const auto it = deps.find(stage);
  if (it == deps.end()) throw ConfigError("unknown stage '" + stage + "'");
  return it->second;
}

namespace {

// Config sections each stage's output depends on.
const std::vector<std::string>& stage_sections(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> s{
      {"generate", {"data", "noise"}},
      {"train-seg", {"seg"}},
      {"build-dict", {"dict"}},
      {"restore", {"restore", "dict"}},
      {"gate", {"finetune"}},
      {"finetune-seg", {"finetune", "seg"}},
      {"train-reg", {"reg", "seg"}},
      {"eval", {"restore", "seg", "reg", "metrics"}},
      {"ablation", {"reg", "seg", "metrics"}},
  };
  return s.at(stage);
}

std::string rel(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

RunManifest RunManifest::load(const fs::path& path) {
  RunManifest m;
  if (!fs::exists(path)) return m;
  json j;
  try {
    j = json::parse(io::read_text_file(path));
    m.tool_version = j.at("tool_version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.config_hash = s.at("config_hash").get<std::string>();
      r.seed = s.at("seed").get<std::uint64_t>();
      r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      r.duration_s = s.at("duration_s").get<double>();
      m.stages[name] = std::move(r);
    }
  } catch (const json::exception& e) {
    // An unreadable manifest only costs a rebuild.
    std::cerr << "warning: ignoring unreadable manifest " << path << ": " << e.what() << "\n";
    return RunManifest{};
  }
  return m;
}

void RunManifest::save(const fs::path& path) const {
  json stages_json = json::object();
  for (const auto& [name, r] : stages) {
    stages_json[name] = {{"config_hash", r.config_hash},
                         {"seed", r.seed},
                         {"inputs", r.inputs},
                         {"outputs", r.outputs},
                         {"duration_s", r.duration_s}};
  }
  json j = {{"tool_version", tool_version}, {"seed", seed}, {"stages", stages_json}};
  io::write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage implementations

namespace {

struct Ctx {
  const config::PipelineConfig& cfg;
  fs::path root;
  std::uint64_t seed;
  int jobs;

  fs::path data() const { return root / paths::kData; }
  fs::path at(const char* p) const { return root / p; }
};

using StageFn = std::function<std::vector<fs::path>(const Ctx&)>;

void write_file(std::vector<fs::path>& out, const fs::path& path, const std::string& contents) {
  io::write_text_file(path, contents);
  out.push_back(path);
}

void save_seg(std::vector<fs::path>& out, const models::SegModel& m, const fs::path& path) {
  models::save_seg_model(m, path);
  out.push_back(path);
  out.push_back(fs::path(path.string() + ".json"));
}

void save_reg(std::vector<fs::path>& out, const models::RegModel& m, const fs::path& path) {
  models::save_reg_model(m, path);
  out.push_back(path);
  out.push_back(fs::path(path.string() + ".json"));
}

std::string curve_csv(const std::vector<models::TrainCurvePoint>& curve) {
  std::string s = "epoch,mean_loss\n";
  for (const auto& p : curve) s += std::to_string(p.epoch) + "," + io::format_double(p.mean_loss) + "\n";
  return s;
}

dataset::DatasetConfig dataset_config(const config::PipelineConfig& cfg) {
  dataset::DatasetConfig d;
  d.n_synth = cfg.data.n_synth;
  d.n_real = cfg.data.n_real;
  d.n_test = cfg.data.n_test;
  d.seed = cfg.run.seed;
  d.generator.image_size = cfg.data.image_size;
  d.noise.gaussian_depth_sigma = cfg.noise.sigma;
  d.noise.hole_probability = cfg.noise.hole_probability;
  d.noise.quantization_step = cfg.noise.quantization_step;
  d.noise.edge_erosion_radius = cfg.noise.edge_erosion_radius;
  return d;
}

std::vector<dataset::Sample> load(const Ctx& c, Split split) { return dataset::load_split(c.data(), split, c.jobs); }

std::vector<models::SegImage> seg_images(const std::vector<dataset::Sample>& samples, int kernel, int jobs) {
  std::vector<models::SegImage> out(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        out[i] = {samples[i].id, datagen::local_contrast_normalize(samples[i].depth, kernel), samples[i].labels};
      },
      jobs);
  return out;
}

std::vector<LabelMap> predict_all(const models::SegModel& m, const std::vector<models::SegImage>& images, int jobs) {
  std::vector<LabelMap> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) { out[i] = models::predict_labelmap(m, images[i].normalized, 1); },
               jobs);
  return out;
}

std::vector<LabelMap> truths_of(const std::vector<dataset::Sample>& samples) {
  std::vector<LabelMap> out;
  for (const auto& s : samples) out.push_back(s.labels);
  return out;
}

restoration::RestorationConfig restore_config(const config::PipelineConfig& cfg, double alpha) {
  restoration::RestorationConfig r;
  r.window = cfg.restore.window;
  r.crf_ranks = cfg.restore.ranks;
  r.crf_alpha = alpha;
  r.crf_max_sweeps = cfg.restore.max_sweeps;
  r.crf_pairwise_kind =
      cfg.restore.pairwise == "overlap" ? restoration::PairwiseKind::kOverlapHamming : restoration::PairwiseKind::kPottsCenter;
  return r;
}

std::size_t dict_source_count(const config::PipelineConfig& cfg, std::size_t n_synth) {
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(n_synth) * cfg.dict.source_fraction + 1e-9));
  return std::clamp<std::size_t>(n, 1, n_synth);
}

patchdict::PatchDictionary load_dict(const Ctx& c) {
  return patchdict::load_dictionary(c.at(paths::kDictionary), derive_seed(c.seed, 0x4458));
}

std::vector<fs::path> stage_generate(const Ctx& c) {
  return dataset::generate_dataset(c.data(), dataset_config(c.cfg), c.jobs);
}

std::vector<fs::path> stage_train_seg(const Ctx& c) {
  const auto images = seg_images(load(c, Split::kSynth), c.cfg.seg.contrast_kernel, c.jobs);
  models::SegTrainConfig t;
  t.epochs = c.cfg.seg.epochs;
  t.lr = c.cfg.seg.lr;
  t.lr_decay = c.cfg.seg.lr_decay;
  t.pixels_per_image = c.cfg.seg.pixels_per_image;
  t.seed = c.seed;
  const auto result = models::train_segmenter(images, t, c.cfg.seg.patch, c.cfg.seg.hidden);
  std::vector<fs::path> out;
  save_seg(out, result.model, c.at(paths::kSegPretrained));
  write_file(out, c.root / "models/seg_pretrained_curve.csv", curve_csv(result.curve));
  return out;
}

std::vector<fs::path> stage_build_dict(const Ctx& c) {
  const auto ids = dataset::list_samples(c.data(), Split::kSynth);
  if (ids.empty()) throw DependencyError("no synthetic samples; run stage 'generate' first");
  const std::size_t n = dict_source_count(c.cfg, ids.size());
  std::vector<LabelMap> maps(n);
  parallel_for(
      n, [&](std::size_t i) { maps[i] = io::read_label_pgm(c.data() / "synth" / (ids[i] + ".labels.pgm")); }, c.jobs);
  auto d = patchdict::extract_patches(maps, c.cfg.dict.patch_size, c.cfg.dict.stride, c.cfg.dict.foreground_only);
  if (c.cfg.dict.max_patches > 0) {
    d = patchdict::subsample(d, static_cast<std::size_t>(c.cfg.dict.max_patches), c.seed);
  }
  std::vector<fs::path> out;
  patchdict::save_dictionary(d, c.at(paths::kDictionary));
  out.push_back(c.at(paths::kDictionary));
  const json summary = {{"patches", d.size()}, {"source_images", n}, {"patch_size", d.patch_size()}};
  write_file(out, c.root / "dict/summary.json", summary.dump(2) + "\n");
  return out;
}

// Alpha for CRF methods: chosen on noise-degraded synthetic images that did
// not feed the dictionary, so no real-proxy labels are consulted.
double choose_alpha(const Ctx& c, const models::SegModel& seg, const patchdict::PatchDictionary& d,
                    restoration::Method method) {
  const auto& r = c.cfg.restore;
  if (r.alpha_grid.empty() || (method != restoration::Method::kCrfPotts && method != restoration::Method::kCrfOverlap)) {
    return r.alpha;
  }
  const auto ids = dataset::list_samples(c.data(), Split::kSynth);
  const std::size_t first = dict_source_count(c.cfg, ids.size());
  const std::size_t n = std::min<std::size_t>(20, ids.size() - first);
  if (n == 0) return r.alpha;
  std::vector<LabelMap> preds(n), truths(n);
  const auto ds = dataset_config(c.cfg);
  parallel_for(
      n,
      [&](std::size_t i) {
        auto s = dataset::read_sample(c.data(), Split::kSynth, ids[first + i]);
        auto noise = ds.noise;
        noise.seed = derive_seed(c.seed, 0x414c + i);
        const auto noisy = datagen::apply_sensor_noise(s.depth, noise);
        preds[i] = models::predict_labelmap(seg, datagen::local_contrast_normalize(noisy, c.cfg.seg.contrast_kernel), 1);
        truths[i] = s.labels;
      },
      c.jobs);
  const auto kind = method == restoration::Method::kCrfPotts ? restoration::PairwiseKind::kPottsCenter
                                                               : restoration::PairwiseKind::kOverlapHamming;
  return restoration::select_crf_alpha(preds, truths, d, kind, restore_config(c.cfg, r.alpha), r.alpha_grid, c.jobs);
}

std::vector<fs::path> stage_restore(const Ctx& c) {
  const auto real = load(c, Split::kReal);
  const auto seg = models::load_seg_model(c.at(paths::kSegPretrained));
  const auto d = load_dict(c);
  const auto method = restoration::parse_method(c.cfg.restore.method);
  const double alpha = choose_alpha(c, seg, d, method);
  const auto rcfg = restore_config(c.cfg, alpha);
  const auto images = seg_images(real, c.cfg.seg.contrast_kernel, c.jobs);

  const fs::path dir = c.at(paths::kRestoreDir);
  fs::remove_all(dir);
  std::vector<fs::path> out(2 * real.size());
  parallel_for(
      real.size(),
      [&](std::size_t i) {
        const LabelMap pred = models::predict_labelmap(seg, images[i].normalized, 1);
        const LabelMap restored = restoration::restore(pred, d, method, rcfg, 1);
        out[2 * i] = dir / "pred" / (real[i].id + ".labels.pgm");
        out[2 * i + 1] = dir / "restored" / (real[i].id + ".labels.pgm");
        io::write_label_pgm(out[2 * i], pred);
        io::write_label_pgm(out[2 * i + 1], restored);
      },
      c.jobs);
  const json summary = {{"method", c.cfg.restore.method},
                        {"alpha", alpha},
                        {"window", rcfg.window},
                        {"ranks", rcfg.crf_ranks},
                        {"images", real.size()},
                        {"dictionary_patches", d.size()}};
  write_file(out, dir / "summary.json", summary.dump(2) + "\n");
  return out;
}

std::vector<fs::path> stage_gate(const Ctx& c) {
  const auto real = load(c, Split::kReal);
  const auto table = supervision::JointLabelTable::standard();
  const fs::path dir = c.at(paths::kRestoreDir);
  std::vector<supervision::QualityReport> reports(real.size());
  std::vector<LabelMap> restored(real.size());
  parallel_for(
      real.size(),
      [&](std::size_t i) {
        const auto pred = io::read_label_pgm(dir / "pred" / (real[i].id + ".labels.pgm"));
        restored[i] = io::read_label_pgm(dir / "restored" / (real[i].id + ".labels.pgm"));
        reports[i] = supervision::gate_sample(pred, restored[i], real[i].joints, table);
      },
      c.jobs);

  supervision::PseudoLabelSet pseudo;
  std::string csv = "sample_id,sum_before,sum_after,accepted,reason\n";
  for (std::size_t i = 0; i < real.size(); ++i) {
    const auto& r = reports[i];
    if (r.accepted && !(r.sum_after < r.sum_before)) throw ContractError("gate accepted a non-improving sample");
    csv += real[i].id + "," + io::format_double(r.sum_before) + "," + io::format_double(r.sum_after) + "," +
           (r.accepted ? "1" : "0") + "," + r.reason + "\n";
    if (r.accepted) {
      pseudo.accepted.push_back({real[i].id, restored[i]});
    } else {
      pseudo.rejected.push_back({real[i].id, r.reason});
    }
  }
  const auto synth_ids = dataset::list_samples(c.data(), Split::kSynth);
  const auto stream = supervision::build_finetune_stream(synth_ids, pseudo, c.cfg.finetune.ratio, c.seed);
  if (!supervision::audit_stream(stream, pseudo)) throw ContractError("fine-tune stream failed the source audit");

  json entries = json::array();
  for (const auto& e : stream.entries) {
    entries.push_back({{"source", std::string(supervision::source_name(e.source))}, {"index", e.index}, {"sample_id", e.sample_id}});
  }
  json accepted = json::array(), rejected = json::array();
  for (const auto& a : pseudo.accepted) accepted.push_back(a.sample_id);
  for (const auto& r : pseudo.rejected) rejected.push_back(r.sample_id);
  const json sj = {{"ratio", c.cfg.finetune.ratio}, {"seed", c.seed},         {"degenerate", stream.degenerate},
                   {"accepted", accepted},          {"rejected", rejected},   {"entries", entries}};
  const json summary = {{"accepted", pseudo.accepted.size()},
                        {"rejected", pseudo.rejected.size()},
                        {"rejection_rate", pseudo.rejection_rate()},
                        {"stream_synthetic", stream.count(supervision::Source::kSynthetic)},
                        {"stream_pseudo", stream.count(supervision::Source::kPseudo)}};
  std::vector<fs::path> out;
  write_file(out, c.at(paths::kGateReport), csv);
  write_file(out, c.at(paths::kStream), sj.dump(2) + "\n");
  write_file(out, c.root / "gate/summary.json", summary.dump(2) + "\n");
  return out;
}

std::vector<fs::path> stage_finetune_seg(const Ctx& c) {
  const json sj = json::parse(io::read_text_file(c.at(paths::kStream)));
  const auto synth = load(c, Split::kSynth);
  const auto synth_images = seg_images(synth, c.cfg.seg.contrast_kernel, c.jobs);

  supervision::FinetuneStream stream;
  stream.degenerate = sj.at("degenerate").get<bool>();
  for (const auto& e : sj.at("entries")) {
    const auto src = e.at("source").get<std::string>();
    stream.entries.push_back({src == "synth" ? supervision::Source::kSynthetic : supervision::Source::kPseudo,
                              e.at("index").get<std::size_t>(), e.at("sample_id").get<std::string>()});
  }
  const auto accepted = sj.at("accepted").get<std::vector<std::string>>();
  std::vector<models::SegImage> pseudo(accepted.size());
  parallel_for(
      accepted.size(),
      [&](std::size_t i) {
        const auto s = dataset::read_sample(c.data(), Split::kReal, accepted[i]);
        pseudo[i] = {s.id, datagen::local_contrast_normalize(s.depth, c.cfg.seg.contrast_kernel),
                     io::read_label_pgm(c.at(paths::kRestoreDir) / "restored" / (s.id + ".labels.pgm"))};
      },
      c.jobs);
  for (const auto& e : stream.entries) {
    if (e.source == supervision::Source::kSynthetic && synth[e.index].id != e.sample_id) {
      throw DependencyError("fine-tune stream does not match the synthetic split; re-run stage 'gate'");
    }
  }

  models::FinetuneConfig f;
  f.epochs = c.cfg.finetune.epochs;
  f.ratio = c.cfg.finetune.ratio;
  f.lr = c.cfg.finetune.lr;
  f.lr_decay = c.cfg.finetune.lr_decay;
  f.pixels_per_image = c.cfg.finetune.pixels_per_image;
  f.seed = c.seed;
  const auto pre = models::load_seg_model(c.at(paths::kSegPretrained));
  const auto result = models::finetune_segmenter(pre, stream, synth_images, pseudo, f);
  std::vector<fs::path> out;
  save_seg(out, result.model, c.at(paths::kSegFinetuned));
  write_file(out, c.root / "models/seg_finetuned_curve.csv", curve_csv(result.curve));
  return out;
}

models::RegTrainConfig reg_config(const Ctx& c) {
  models::RegTrainConfig r;
  r.epochs = c.cfg.reg.epochs;
  r.lr = c.cfg.reg.lr;
  r.batch = c.cfg.reg.batch;
  r.beta1 = c.cfg.reg.beta1;
  r.beta2 = c.cfg.reg.beta2;
  r.eps = c.cfg.reg.eps;
  r.hidden = c.cfg.reg.hidden;
  r.mask_radius = c.cfg.reg.mask_radius;
  r.seed = c.seed;
  return r;
}

// Segmentation fed to the regressor: predicted maps, or ground truth when
// the diagnostic flag asks for it.
std::vector<models::RegSample> reg_samples(const Ctx& c, const std::vector<dataset::Sample>& samples,
                                           const models::SegModel* seg) {
  std::vector<models::RegSample> out(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const auto& s = samples[i];
        LabelMap m = s.labels;
        if (seg) m = models::predict_labelmap(*seg, datagen::local_contrast_normalize(s.depth, c.cfg.seg.contrast_kernel), 1);
        out[i] = {s.id, s.depth, std::move(m), s.joints};
      },
      c.jobs);
  return out;
}

std::string reg_loss_csv(const models::RegTrainResult& r) {
  std::string s = "joint,final_loss\n";
  for (int j = 0; j < kNumJoints; ++j) s += std::to_string(j) + "," + io::format_double(r.final_loss[j]) + "\n";
  return s;
}

std::vector<fs::path> stage_train_reg(const Ctx& c) {
  const auto real = load(c, Split::kReal);
  const auto seg = models::load_seg_model(c.at(paths::kSegFinetuned));
  const bool truth = c.cfg.reg.seg_source == "truth";
  const auto samples = reg_samples(c, real, truth ? nullptr : &seg);
  const auto result = models::train_regressor(samples, reg_config(c), c.jobs);
  std::vector<fs::path> out;
  save_reg(out, result.model, c.at(paths::kReg));
  write_file(out, c.root / "models/reg_loss.csv", reg_loss_csv(result));
  return out;
}

metrics::PoseScore score_pose(const Ctx& c, const models::RegModel& reg, const std::vector<models::RegSample>& test) {
  std::vector<metrics::FrameError> frames(test.size());
  const datagen::UnitScale scale{c.cfg.metrics.mm_per_pixel, c.cfg.metrics.mm_per_depth_unit};
  parallel_for(
      test.size(),
      [&](std::size_t i) {
        frames[i] = metrics::pose_error(models::predict_pose(reg, test[i].depth, test[i].seg), test[i].joints, scale);
      },
      c.jobs);
  return metrics::aggregate(frames, c.cfg.metrics.thresholds);
}

std::vector<models::RegSample> with_seg(const std::vector<dataset::Sample>& samples, const std::vector<LabelMap>& seg) {
  std::vector<models::RegSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back({samples[i].id, samples[i].depth, seg[i], samples[i].joints});
  return out;
}

std::vector<fs::path> stage_eval(const Ctx& c) {
  const auto test = load(c, Split::kTest);
  const auto images = seg_images(test, c.cfg.seg.contrast_kernel, c.jobs);
  const auto truths = truths_of(test);
  const auto pre = models::load_seg_model(c.at(paths::kSegPretrained));
  const auto fin = models::load_seg_model(c.at(paths::kSegFinetuned));
  const auto reg = models::load_reg_model(c.at(paths::kReg));
  const auto d = load_dict(c);
  const auto pred_pre = predict_all(pre, images, c.jobs);
  const auto pred_fin = predict_all(fin, images, c.jobs);

  const json rs = json::parse(io::read_text_file(c.at(paths::kRestoreDir) / "summary.json"));
  const auto method = restoration::parse_method(c.cfg.restore.method);
  const auto rcfg = restore_config(c.cfg, rs.at("alpha").get<double>());
  std::vector<LabelMap> center(test.size()), vote(test.size()), configured(test.size());
  const bool crf = method == restoration::Method::kCrfPotts || method == restoration::Method::kCrfOverlap;
  parallel_for(
      test.size(),
      [&](std::size_t i) {
        if (pred_pre[i].foreground_count() == 0) {
          center[i] = vote[i] = configured[i] = pred_pre[i];
          return;
        }
        const auto field = restoration::query_field(pred_pre[i], d, 1, 1);
        center[i] = restoration::restore_center(field, d);
        vote[i] = restoration::restore_vote(field, d, rcfg);
        if (crf) configured[i] = restoration::restore(pred_pre[i], d, method, rcfg, 1);
      },
      c.jobs);

  std::vector<std::pair<std::string, metrics::SegScore>> seg_rows{
      {"pretrained", metrics::seg_accuracy(pred_pre, truths)},
      {"restored-center", metrics::seg_accuracy(center, truths)},
      {"restored-vote", metrics::seg_accuracy(vote, truths)},
  };
  if (crf) seg_rows.push_back({"restored-" + c.cfg.restore.method, metrics::seg_accuracy(configured, truths)});
  seg_rows.push_back({"finetuned", metrics::seg_accuracy(pred_fin, truths)});

  const bool truth_seg = c.cfg.reg.seg_source == "truth";
  const auto pose = score_pose(c, reg, with_seg(test, truth_seg ? truths : pred_fin));

  std::vector<metrics::RunResult> runs;
  for (const auto& [name, s] : seg_rows) runs.push_back({name, s, std::nullopt});
  runs.back().pose = pose;
  const auto table = metrics::comparison_report(runs, "pretrained");

  const fs::path dir = c.at(paths::kEvalDir);
  fs::remove_all(dir);
  std::vector<fs::path> out;
  write_file(out, dir / "seg_scores.csv", metrics::seg_scores_csv(seg_rows));
  write_file(out, dir / "pose_scores.csv", metrics::pose_scores_csv(pose));
  write_file(out, dir / "threshold_curve.csv", metrics::threshold_curve_csv(pose.curve));
  write_file(out, dir / "comparison.csv", table.to_csv());
  write_file(out, dir / "comparison.txt", table.to_text());
  json summary = {{"test_images", test.size()}, {"mean_2d_mm", pose.mean_2d}, {"mean_3d_mm", pose.mean_3d}};
  for (const auto& [name, s] : seg_rows) summary["per_pixel"][name] = s.per_pixel;
  for (const auto& [name, s] : seg_rows) summary["per_class"][name] = s.per_class;
  write_file(out, dir / "summary.json", summary.dump(2) + "\n");
  return out;
}

std::vector<fs::path> stage_ablation(const Ctx& c) {
  const auto real = load(c, Split::kReal);
  const auto test = load(c, Split::kTest);
  const auto pre = models::load_seg_model(c.at(paths::kSegPretrained));
  const auto fin = models::load_seg_model(c.at(paths::kSegFinetuned));
  const auto reg_d = models::load_reg_model(c.at(paths::kReg));
  const auto truths = truths_of(test);
  const auto images = seg_images(test, c.cfg.seg.contrast_kernel, c.jobs);
  const auto pred_pre = predict_all(pre, images, c.jobs);
  const auto pred_fin = predict_all(fin, images, c.jobs);

  // (a) depth only; (c) fused with the pre-trained segmenter; (d) the main
  // regressor, fused with the fine-tuned segmenter. Same training seed.
  auto cfg_a = reg_config(c);
  cfg_a.use_segmentation = false;
  const auto train_real_pre = reg_samples(c, real, &pre);
  const auto reg_a = models::train_regressor(train_real_pre, cfg_a, c.jobs).model;
  const auto reg_c = models::train_regressor(train_real_pre, reg_config(c), c.jobs).model;

  const auto pose_a = score_pose(c, reg_a, with_seg(test, pred_pre));
  const auto pose_c = score_pose(c, reg_c, with_seg(test, pred_pre));
  const auto pose_d = score_pose(c, reg_d, with_seg(test, pred_fin));

  std::vector<metrics::RunResult> runs{
      {"a", std::nullopt, pose_a},
      {"c", metrics::seg_accuracy(pred_pre, truths), pose_c},
      {"d", metrics::seg_accuracy(pred_fin, truths), pose_d},
  };
  const auto table = metrics::comparison_report(runs, "a");

  const fs::path dir = c.at(paths::kAblationDir);
  fs::remove_all(dir);
  std::vector<fs::path> out;
  save_reg(out, reg_a, dir / "reg_a.bin");
  save_reg(out, reg_c, dir / "reg_c.bin");
  const std::pair<const char*, const metrics::PoseScore*> poses[] = {{"a", &pose_a}, {"c", &pose_c}, {"d", &pose_d}};
  for (const auto& [name, p] : poses) {
    write_file(out, dir / ("pose_scores_" + std::string(name) + ".csv"), metrics::pose_scores_csv(*p));
    write_file(out, dir / ("threshold_curve_" + std::string(name) + ".csv"), metrics::threshold_curve_csv(p->curve));
  }
  write_file(out, dir / "comparison.csv", table.to_csv());
  std::string text = table.to_text();
  text += "\na = regressor on depth features only\n";
  text += "c = regressor fused with the pre-trained segmenter\n";
  text += "d = regressor fused with the fine-tuned segmenter\n";
  const double improvement = pose_a.mean_2d > 0.0 ? 100.0 * (pose_a.mean_2d - pose_d.mean_2d) / pose_a.mean_2d : 0.0;
  char buf[96];
  std::snprintf(buf, sizeof buf, "2-D error improvement of d over a: %.2f%%\n", improvement);
  text += buf;
  write_file(out, dir / "comparison.txt", text);
  json summary = {{"improvement_2d_percent", improvement}};
  for (const auto& [name, p] : poses) {
    summary["mean_2d_mm"][name] = p->mean_2d;
    summary["mean_3d_mm"][name] = p->mean_3d;
  }
  write_file(out, dir / "summary.json", summary.dump(2) + "\n");
  return out;
}

const std::map<std::string, StageFn>& stage_functions() {
  static const std::map<std::string, StageFn> fns{
      {"generate", stage_generate},   {"train-seg", stage_train_seg},       {"build-dict", stage_build_dict},
      {"restore", stage_restore},     {"gate", stage_gate},                 {"finetune-seg", stage_finetune_seg},
      {"train-reg", stage_train_reg}, {"eval", stage_eval},                 {"ablation", stage_ablation},
  };
  return fns;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(config::PipelineConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.run.out) {
  cfg_.validate();
  manifest_ = RunManifest::load(manifest_path());
}

std::uint64_t Pipeline::stage_seed(const std::string& name) const {
  const auto& names = stage_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown stage '" + name + "'");
  return derive_seed(cfg_.run.seed, static_cast<std::uint64_t>(it - names.begin()) + 1);
}

std::string Pipeline::stage_config_hash(const std::string& name) const {
  std::string text = "stage = " + name + "\nversion = " + std::string(tool_version()) +
                     "\nseed = " + std::to_string(cfg_.run.seed) + "\n" + cfg_.section_text(stage_sections(name));
  return sha256_hex(text);
}

std::map<std::string, std::string> Pipeline::gather_inputs(const std::string& name) const {
  std::map<std::string, std::string> inputs;
  for (const auto& dep : stage_dependencies(name)) {
    const auto it = manifest_.stages.find(dep);
    if (it == manifest_.stages.end()) {
      throw DependencyError("stage '" + name + "' needs the outputs of stage '" + dep + "', which has not run");
    }
    for (const auto& [path, hash] : it->second.outputs) {
      const fs::path p = root_ / path;
      if (!fs::exists(p)) {
        throw DependencyError("stage '" + name + "' needs " + path + " (produced by stage '" + dep + "'), which is missing");
      }
      const std::string now = sha256_file(p);
      if (now != hash) {
        throw DependencyError("stage '" + name + "' needs " + path + " (produced by stage '" + dep +
                              "'), which was modified; re-run '" + dep + "'");
      }
      inputs[path] = now;
    }
  }
  return inputs;
}

std::string Pipeline::stale_reason(const std::string& name) const {
  const auto it = manifest_.stages.find(name);
  if (it == manifest_.stages.end()) return "not run yet";
  const StageRecord& r = it->second;
  if (r.config_hash != stage_config_hash(name)) return "configuration changed";
  for (const auto& dep : stage_dependencies(name)) {
    const auto d = manifest_.stages.find(dep);
    if (d == manifest_.stages.end()) return "upstream stage '" + dep + "' has no record";
    for (const auto& [path, hash] : d->second.outputs) {
      const auto rec = r.inputs.find(path);
      if (rec == r.inputs.end() || rec->second != hash) return "input " + path + " changed";
    }
    if (r.inputs.size() < d->second.outputs.size()) return "input set changed";
  }
  for (const auto& [path, hash] : r.inputs) {
    const fs::path p = root_ / path;
    if (!fs::exists(p) || sha256_file(p) != hash) return "input " + path + " changed on disk";
  }
  for (const auto& [path, hash] : r.outputs) {
    const fs::path p = root_ / path;
    if (!fs::exists(p)) return "output " + path + " missing";
    if (sha256_file(p) != hash) return "output " + path + " modified";
  }
  return {};
}

StageOutcome Pipeline::execute(const std::string& name, const std::string& reason) {
  const auto inputs = gather_inputs(name);
  const Ctx ctx{cfg_, root_, stage_seed(name), cfg_.run.jobs > 0 ? cfg_.run.jobs : default_jobs()};
  io::write_text_file(root_ / "config.resolved.toml", cfg_.to_text());

  const auto t0 = std::chrono::steady_clock::now();
  const auto written = stage_functions().at(name)(ctx);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  StageRecord rec;
  rec.config_hash = stage_config_hash(name);
  rec.seed = ctx.seed;
  rec.inputs = inputs;
  for (const auto& p : written) rec.outputs[rel(p, root_)] = sha256_file(p);
  rec.duration_s = seconds;
  manifest_.tool_version = std::string(tool_version());
  manifest_.seed = cfg_.run.seed;
  manifest_.stages[name] = std::move(rec);
  manifest_.save(manifest_path());
  return {name, true, reason, seconds};
}

StageOutcome Pipeline::run_stage(const std::string& name, bool force) {
  stage_dependencies(name);  // validates the name
  const std::string reason = force ? "forced" : stale_reason(name);
  if (reason.empty()) return {name, false, "up to date", 0.0};
  return execute(name, reason);
}

std::vector<StageOutcome> Pipeline::run_all(bool include_ablation) {
  std::vector<StageOutcome> outcomes;
  std::set<std::string> ran;
  for (const auto& name : stage_names()) {
    if (name == "ablation" && !include_ablation) continue;
    std::string reason;
    for (const auto& dep : stage_dependencies(name)) {
      if (ran.count(dep)) {
        reason = "upstream stage '" + dep + "' re-ran";
        break;
      }
    }
    if (reason.empty()) reason = stale_reason(name);
    if (reason.empty()) {
      outcomes.push_back({name, false, "up to date", 0.0});
      continue;
    }
    outcomes.push_back(execute(name, reason));
    ran.insert(name);
  }
  return outcomes;
}

}  // namespace handlab::pipeline
