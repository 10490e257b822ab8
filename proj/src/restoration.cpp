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
#include "handlab/restoration.hpp"

#include <cmath>
#include <string>

namespace handlab::restoration {

using patchdict::Neighbor;
using patchdict::PatchDictionary;

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kCenter:
      return "center";
    case Method::kVote:
      return "vote";
    case Method::kCrfPotts:
      return "crf-potts";
    case Method::kCrfOverlap:
      return "crf-overlap";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::kCenter, Method::kVote, Method::kCrfPotts, Method::kCrfOverlap}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown restoration method '" + std::string(name) + "'");
}

void RestorationConfig::validate() const {
  if (window < 1 || window % 2 == 0) throw ConfigError("restoration window must be odd and >= 1");
  if (!(crf_alpha >= 0.0) || !std::isfinite(crf_alpha)) throw ConfigError("crf alpha must be finite and >= 0");
  if (crf_ranks < 1) throw ConfigError("crf ranks must be >= 1");
  if (crf_max_sweeps < 1) throw ConfigError("crf max sweeps must be >= 1");
}

RankedNeighborField::RankedNeighborField(int width, int height, std::size_t ranks, int patch_size)
    : width_(width), height_(height), ranks_(ranks), patch_size_(patch_size),
      slot_(static_cast<std::size_t>(width) * height, -1) {}

std::span<const Neighbor> RankedNeighborField::at(int u, int v) const {
  const std::int32_t s = slot_[index(u, v)];
  if (s < 0) return {};
  return {entries_.data() + static_cast<std::size_t>(s) * ranks_, ranks_};
}

void RankedNeighborField::set(int u, int v, const patchdict::NNQueryResult& result) {
  if (result.size() != ranks_) throw ContractError("field entry has the wrong number of ranks");
  std::int32_t& s = slot_[index(u, v)];
  if (s < 0) {
    s = static_cast<std::int32_t>(entries_.size() / ranks_);
    entries_.insert(entries_.end(), result.begin(), result.end());
  } else {
    std::copy(result.begin(), result.end(), entries_.begin() + static_cast<std::ptrdiff_t>(s) * static_cast<std::ptrdiff_t>(ranks_));
  }
}

RankedNeighborField query_field(const LabelMap& pred, const PatchDictionary& d, std::size_t k, int jobs) {
  if (d.empty()) throw EmptyDictionaryError("query_field: empty dictionary");
  if (d.patch_size() > std::min(pred.width(), pred.height())) {
    throw ContractError("query_field: dictionary patch size exceeds the image");
  }
  if (k < 1 || k > d.size()) throw ContractError("query_field: k out of range");
  std::vector<std::pair<int, int>> pixels;
  for (int v = 0; v < pred.height(); ++v) {
    for (int u = 0; u < pred.width(); ++u) {
      if (pred(u, v) != 0) pixels.emplace_back(u, v);
    }
  }
  std::vector<patchdict::NNQueryResult> results(pixels.size());
  parallel_for(
      pixels.size(),
      [&](std::size_t i) {
        const auto [u, v] = pixels[i];
        results[i] = patchdict::nn_search(patchdict::encode_patch(patchdict::extract_patch(pred, u, v, d.patch_size())), d, k);
      },
      jobs);
  RankedNeighborField field(pred.width(), pred.height(), k, d.patch_size());
  for (std::size_t i = 0; i < pixels.size(); ++i) field.set(pixels[i].first, pixels[i].second, results[i]);
  return field;
}

LabelMap restore_center(const RankedNeighborField& field, const PatchDictionary& d) {
  LabelMap out(field.width(), field.height());
  for (int v = 0; v < field.height(); ++v) {
    for (int u = 0; u < field.width(); ++u) {
      if (field.has(u, v)) out(u, v) = d.center_label(field.at(u, v)[0].id);
    }
  }
  return out;
}

VoteTally vote_tally(const RankedNeighborField& field, const PatchDictionary& d, int window, int u, int v) {
  VoteTally tally{};
  const int w = window / 2;
  const int h = d.patch_size() / 2;
  for (int dv = -w; dv <= w; ++dv) {
    for (int du = -w; du <= w; ++du) {
      // (u, v) sits at cell (h - dv, h - du) of the patch centered on k.
      if (std::abs(du) > h || std::abs(dv) > h) continue;
      const int ku = u + du;
      const int kv = v + dv;
      if (ku < 0 || kv < 0 || ku >= field.width() || kv >= field.height() || !field.has(ku, kv)) continue;
      ++tally[d.cell(field.at(ku, kv)[0].id, h - dv, h - du)];
    }
  }
  return tally;
}

LabelMap restore_vote(const RankedNeighborField& field, const PatchDictionary& d, const RestorationConfig& cfg) {
  cfg.validate();
  if (cfg.window > 2 * (d.patch_size() - 1) + 1) throw ContractError("restore_vote: window larger than 2P-1");
  LabelMap out(field.width(), field.height());
  for (int v = 0; v < field.height(); ++v) {
    for (int u = 0; u < field.width(); ++u) {
      if (!field.has(u, v)) continue;
      const VoteTally tally = vote_tally(field, d, cfg.window, u, v);
      // Background cells do not compete: the hand is already segmented from the background.
      int best = 0;
      for (int l = 1; l < kNumLabels; ++l) {
        if (tally[l] > tally[best] || (best == 0 && tally[l] > 0)) best = l;
      }
      out(u, v) = static_cast<std::uint8_t>(best != 0 ? best : d.center_label(field.at(u, v)[0].id));
    }
  }
  return out;
}

CrfModel::CrfModel(const RankedNeighborField& field, const PatchDictionary& d, PairwiseKind kind, double alpha,
                   std::size_t ranks)
    : dict_(&d), kind_(kind), alpha_(alpha), ranks_(ranks == 0 ? field.ranks() : ranks), width_(field.width()),
      height_(field.height()) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractError("CrfModel: alpha must be finite and >= 0");
  if (ranks_ < 1 || ranks_ > field.ranks()) throw ContractError("CrfModel: ranks exceed the neighbor field");
  if (field.patch_size() != d.patch_size()) throw ContractError("CrfModel: field/dictionary patch size mismatch");
  std::vector<std::int32_t> var_of(static_cast<std::size_t>(width_) * height_, -1);
  for (int v = 0; v < height_; ++v) {
    for (int u = 0; u < width_; ++u) {
      if (!field.has(u, v)) continue;
      var_of[static_cast<std::size_t>(v) * width_ + u] = static_cast<std::int32_t>(pixels_.size());
      pixels_.emplace_back(u, v);
      const auto entry = field.at(u, v);
      choices_.insert(choices_.end(), entry.begin(), entry.begin() + static_cast<std::ptrdiff_t>(ranks_));
    }
  }
  adjacency_offsets_.push_back(0);
  constexpr std::array<std::pair<int, int>, 4> kSteps{{{0, -1}, {-1, 0}, {1, 0}, {0, 1}}};
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    const auto [u, v] = pixels_[i];
    for (const auto& [du, dv] : kSteps) {
      const int x = u + du;
      const int y = v + dv;
      if (x < 0 || y < 0 || x >= width_ || y >= height_) continue;
      const std::int32_t j = var_of[static_cast<std::size_t>(y) * width_ + x];
      if (j < 0) continue;
      adjacency_.push_back(static_cast<std::uint32_t>(j));
      if (static_cast<std::size_t>(j) > i) edges_.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
    adjacency_offsets_.push_back(static_cast<std::uint32_t>(adjacency_.size()));
  }
}

double CrfModel::unary(std::size_t var, std::size_t rank) const {
  return static_cast<double>(choices_[var * ranks_ + rank].distance);
}

std::uint32_t CrfModel::patch_id(std::size_t var, std::size_t rank) const { return choices_[var * ranks_ + rank].id; }

std::span<const std::uint32_t> CrfModel::neighbors(std::size_t var) const {
  return {adjacency_.data() + adjacency_offsets_[var], adjacency_offsets_[var + 1] - adjacency_offsets_[var]};
}

double CrfModel::pairwise(std::size_t i, std::size_t rank_i, std::size_t j, std::size_t rank_j) const {
  const std::uint32_t pi = patch_id(i, rank_i);
  const std::uint32_t pj = patch_id(j, rank_j);
  if (kind_ == PairwiseKind::kPottsCenter) return dict_->center_label(pi) == dict_->center_label(pj) ? 0.0 : 1.0;

  // Cell (r, c) of i's patch is cell (r - dv, c - du) of j's patch.
  const int du = pixels_[j].first - pixels_[i].first;
  const int dv = pixels_[j].second - pixels_[i].second;
  const int p = dict_->patch_size();
  int overlap = 0;
  int mismatches = 0;
  for (int r = std::max(0, dv); r < std::min(p, p + dv); ++r) {
    for (int c = std::max(0, du); c < std::min(p, p + du); ++c) {
      ++overlap;
      mismatches += dict_->cell(pi, r, c) != dict_->cell(pj, r - dv, c - du);
    }
  }
  return overlap == 0 ? 0.0 : static_cast<double>(mismatches) / overlap;
}

double crf_energy(const CrfModel& model, const Assignment& x) {
  if (x.size() != model.variables()) throw ContractError("crf_energy: assignment size mismatch");
  double unary = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= model.ranks()) throw ContractError("crf_energy: rank out of range");
    unary += model.unary(i, x[i]);
  }
  double pair = 0.0;
  for (const auto& [i, j] : model.edges()) pair += model.pairwise(i, x[i], j, x[j]);
  return unary + model.alpha() * pair;
}

namespace {

LabelMap assignment_labels(const CrfModel& model, const PatchDictionary& d, const Assignment& x) {
  LabelMap out(model.width(), model.height());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [u, v] = model.pixel(i);
    out(u, v) = d.center_label(model.patch_id(i, x[i]));
  }
  return out;
}

}  // namespace

IcmResult crf_icm(const CrfModel& model, int max_sweeps) {
  if (max_sweeps < 1) throw ContractError("crf_icm: max_sweeps must be >= 1");
  IcmResult result;
  result.assignment.assign(model.variables(), 0);
  Assignment& x = result.assignment;
  result.energy_trace.push_back(crf_energy(model, x));
  auto local = [&](std::size_t i, std::size_t r) {
    double e = model.unary(i, r);
    if (model.alpha() == 0.0) return e;
    double pair = 0.0;
    for (std::uint32_t j : model.neighbors(i)) pair += model.pairwise(i, r, j, x[j]);
    return e + model.alpha() * pair;
  };
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool changed = false;
    for (std::size_t i = 0; i < model.variables(); ++i) {
      double best = local(i, x[i]);
      std::uint32_t best_rank = x[i];
      for (std::uint32_t r = 0; r < model.ranks(); ++r) {
        if (r == x[i]) continue;
        const double e = local(i, r);
        if (e < best) {
          best = e;
          best_rank = r;
        }
      }
      if (best_rank != x[i]) {
        x[i] = best_rank;
        changed = true;
      }
    }
    ++result.sweeps;
    result.energy_trace.push_back(crf_energy(model, x));
    if (!changed) break;
  }
  result.labels = assignment_labels(model, model.dictionary(), x);
  return result;
}

LabelMap restore(const LabelMap& pred, const PatchDictionary& d, Method method, const RestorationConfig& cfg,
                 int jobs, std::vector<double>* energy_trace) {
  cfg.validate();
  if (pred.foreground_count() == 0) return LabelMap(pred.width(), pred.height());
  switch (method) {
    case Method::kCenter:
      return restore_center(query_field(pred, d, 1, jobs), d);
    case Method::kVote:
      return restore_vote(query_field(pred, d, 1, jobs), d, cfg);
    case Method::kCrfPotts:
    case Method::kCrfOverlap: {
      const std::size_t ranks = std::min<std::size_t>(static_cast<std::size_t>(cfg.crf_ranks), d.size());
      const auto field = query_field(pred, d, ranks, jobs);
      const CrfModel model(field, d,
                           method == Method::kCrfPotts ? PairwiseKind::kPottsCenter : PairwiseKind::kOverlapHamming,
                           cfg.crf_alpha);
      IcmResult icm = crf_icm(model, cfg.crf_max_sweeps);
      if (energy_trace) *energy_trace = icm.energy_trace;
      return std::move(icm.labels);
    }
  }
  throw ContractError("unknown restoration method");
}

double select_crf_alpha(std::span<const LabelMap> predictions, std::span<const LabelMap> truths,
                        const PatchDictionary& d, PairwiseKind kind, const RestorationConfig& cfg,
                        std::span<const double> grid, int jobs) {
  if (grid.empty()) throw ConfigError("alpha grid is empty");
  if (predictions.size() != truths.size()) throw ContractError("select_crf_alpha: size mismatch");
  const std::size_t ranks = std::min<std::size_t>(static_cast<std::size_t>(cfg.crf_ranks), d.size());
  std::vector<RankedNeighborField> fields(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].foreground_count() > 0) fields[i] = query_field(predictions[i], d, ranks, jobs);
  }
  double best_alpha = grid[0];
  double best_acc = -1.0;
  for (double alpha : grid) {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      LabelMap restored(predictions[i].width(), predictions[i].height());
      if (predictions[i].foreground_count() > 0) {
        const CrfModel model(fields[i], d, kind, alpha);
        restored = crf_icm(model, cfg.crf_max_sweeps).labels;
      }
      const LabelMap& truth = truths[i];
      for (std::size_t p = 0; p < truth.labels.size(); ++p) {
        if (truth.labels[p] == 0) continue;
        ++total;
        correct += restored.labels[p] == truth.labels[p];
      }
    }
    const double acc = total == 0 ? 0.0 : static_cast<double>(correct) / total;
    if (acc > best_acc) {
      best_acc = acc;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

}  // namespace handlab::restoration
