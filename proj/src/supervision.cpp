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
#include "handlab/supervision.hpp"

#include <cmath>
#include <iostream>
#include <set>

#include "handlab/datagen.hpp"

namespace handlab::supervision {

JointLabelTable JointLabelTable::standard() {
  using namespace datagen;
  JointLabelTable t;
  for (int f = 0; f < kNumFingers; ++f) {
    t.labels[tip_joint(f)] = {static_cast<std::uint8_t>(part_label(f, kSegmentsPerFinger[f] - 1))};
    t.labels[knuckle_joint(f)] = {static_cast<std::uint8_t>(part_label(f, 0))};
  }
  t.labels[kWrist] = {kPalmLabel};
  t.labels[kPalmCenter] = {kPalmLabel};
  t.labels[kThumbBase] = {kPalmLabel, static_cast<std::uint8_t>(part_label(0, 0))};
  t.labels[kLittleBase] = {kPalmLabel, static_cast<std::uint8_t>(part_label(4, 0))};
  return t;
}

void JointLabelTable::validate() const {
  for (const auto& ls : labels) {
    if (ls.empty()) throw ConfigError("every joint needs at least one associated label");
    for (std::uint8_t l : ls) {
      if (l < 1 || l > kNumParts) throw ConfigError("joint label table entries must be in [1, 20]");
    }
  }
}

Barycenters part_barycenters(const LabelMap& m, const JointLabelTable& table) {
  table.validate();
  // Per-label pixel sums, then combined per joint.
  std::array<double, kNumLabels> su{};
  std::array<double, kNumLabels> sv{};
  std::array<std::size_t, kNumLabels> n{};
  for (int v = 0; v < m.height(); ++v) {
    for (int u = 0; u < m.width(); ++u) {
      const std::uint8_t l = m(u, v);
      su[l] += u;
      sv[l] += v;
      ++n[l];
    }
  }
  Barycenters out;
  for (int j = 0; j < kNumJoints; ++j) {
    double tu = 0.0, tv = 0.0;
    std::size_t tn = 0;
    for (std::uint8_t l : table.labels[j]) {
      tu += su[l];
      tv += sv[l];
      tn += n[l];
    }
    if (tn > 0) out[j] = Point2{tu / static_cast<double>(tn), tv / static_cast<double>(tn)};
  }
  return out;
}

double absent_penalty(const LabelMap& m) { return std::hypot(static_cast<double>(m.width()), static_cast<double>(m.height())); }

namespace {

double measure_from(const Barycenters& bary, const JointSet& joints, double penalty) {
  double sum = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    sum += bary[j] ? std::hypot(bary[j]->u - joints[j].u, bary[j]->v - joints[j].v) : penalty;
  }
  return sum;
}

}  // namespace

double quality_measure(const LabelMap& m, const JointSet& joints, const JointLabelTable& table) {
  return measure_from(part_barycenters(m, table), joints, absent_penalty(m));
}

QualityReport gate_sample(const LabelMap& pred, const LabelMap& restored, const JointSet& joints,
                          const JointLabelTable& table) {
  if (pred.width() != restored.width() || pred.height() != restored.height()) {
    throw ContractError("gate_sample: prediction and restoration differ in size");
  }
  QualityReport r;
  r.before = part_barycenters(pred, table);
  r.after = part_barycenters(restored, table);
  r.sum_before = measure_from(r.before, joints, absent_penalty(pred));
  r.sum_after = measure_from(r.after, joints, absent_penalty(restored));
  r.accepted = r.sum_after < r.sum_before;
  if (r.accepted) {
    r.reason = "improved";
  } else if (r.sum_after == r.sum_before) {
    r.reason = "unchanged";
  } else {
    r.reason = "worse";
  }
  return r;
}

double PseudoLabelSet::rejection_rate() const {
  const std::size_t total = accepted.size() + rejected.size();
  return total == 0 ? 0.0 : static_cast<double>(rejected.size()) / static_cast<double>(total);
}

std::string_view source_name(Source s) { return s == Source::kSynthetic ? "synth" : "pseudo"; }

std::size_t FinetuneStream::count(Source s) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [s](const StreamEntry& e) { return e.source == s; }));
}

FinetuneStream build_finetune_stream(std::span<const std::string> synth_ids, const PseudoLabelSet& pseudo, int ratio,
                                     std::uint64_t seed) {
  if (ratio < 0) throw ConfigError("fine-tune ratio must be >= 0");
  FinetuneStream stream;
  Rng rng(seed);
  if (pseudo.accepted.empty()) {
    std::cerr << "warning: no accepted pseudo-labels; fine-tuning degenerates to supervised continuation\n";
    stream.degenerate = true;
    if (synth_ids.empty()) throw ContractError("build_finetune_stream: both sets are empty");
  } else if (ratio > 0 && synth_ids.empty()) {
    throw ContractError("build_finetune_stream: synthetic set is empty");
  }

  std::vector<std::size_t> synth(synth_ids.size());
  for (std::size_t i = 0; i < synth.size(); ++i) synth[i] = i;
  std::size_t n_synth = synth.size();
  if (!stream.degenerate) n_synth = std::min(n_synth, static_cast<std::size_t>(ratio) * pseudo.accepted.size());
  if (n_synth < synth.size()) {
    for (std::size_t i = 0; i < n_synth; ++i) std::swap(synth[i], synth[i + rng.below(synth.size() - i)]);
    synth.resize(n_synth);
    std::sort(synth.begin(), synth.end());
  }

  for (std::size_t i : synth) stream.entries.push_back({Source::kSynthetic, i, synth_ids[i]});
  for (std::size_t i = 0; i < pseudo.accepted.size(); ++i) {
    stream.entries.push_back({Source::kPseudo, i, pseudo.accepted[i].sample_id});
  }
  rng.shuffle(stream.entries.begin(), stream.entries.end());
  return stream;
}

bool audit_stream(const FinetuneStream& stream, const PseudoLabelSet& pseudo) {
  std::set<std::string> rejected;
  for (const auto& r : pseudo.rejected) rejected.insert(r.sample_id);
  for (const auto& e : stream.entries) {
    if (e.source != Source::kPseudo) continue;
    if (e.index >= pseudo.accepted.size() || pseudo.accepted[e.index].sample_id != e.sample_id) return false;
    if (rejected.count(e.sample_id) != 0) return false;
  }
  return true;
}

}  // namespace handlab::supervision
