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
#include "handlab/mlp.hpp"

#include <cmath>

namespace handlab::models {

Mlp::Mlp(int inputs, int hidden, int outputs)
    : inputs_(inputs), hidden_(hidden), outputs_(outputs), params_(parameter_count(inputs, hidden, outputs), 0.0) {
  if (inputs < 1 || hidden < 1 || outputs < 1) throw ContractError("Mlp: layer sizes must be >= 1");
}

std::size_t Mlp::parameter_count(int inputs, int hidden, int outputs) {
  return static_cast<std::size_t>(inputs + 1) * hidden + static_cast<std::size_t>(hidden + 1) * outputs;
}

void Mlp::init(Rng& rng, double output_scale) {
  const double s1 = std::sqrt(2.0 / inputs_);
  const double s2 = output_scale * std::sqrt(1.0 / hidden_);
  std::size_t p = 0;
  for (int i = 0; i < hidden_ * inputs_; ++i) params_[p++] = s1 * rng.normal();
  for (int i = 0; i < hidden_; ++i) params_[p++] = 0.0;
  for (int i = 0; i < outputs_ * hidden_; ++i) params_[p++] = output_scale == 0.0 ? 0.0 : s2 * rng.normal();
  for (int i = 0; i < outputs_; ++i) params_[p++] = 0.0;
}

void Mlp::forward(std::span<const double> x, std::span<double> hidden_out, std::span<double> out) const {
  const double* w1 = params_.data();
  const double* b1 = w1 + static_cast<std::size_t>(hidden_) * inputs_;
  const double* w2 = b1 + hidden_;
  const double* b2 = w2 + static_cast<std::size_t>(outputs_) * hidden_;
  for (int h = 0; h < hidden_; ++h) {
    const double* row = w1 + static_cast<std::size_t>(h) * inputs_;
    double a = b1[h];
    for (int i = 0; i < inputs_; ++i) a += row[i] * x[i];
    hidden_out[h] = a > 0.0 ? a : 0.0;
  }
  for (int o = 0; o < outputs_; ++o) {
    const double* row = w2 + static_cast<std::size_t>(o) * hidden_;
    double a = b2[o];
    for (int h = 0; h < hidden_; ++h) a += row[h] * hidden_out[h];
    out[o] = a;
  }
}

void Mlp::backward(std::span<const double> x, std::span<const double> hidden_act, std::span<const double> dout,
                   std::span<double> grad) const {
  const double* w2 = params_.data() + static_cast<std::size_t>(hidden_) * inputs_ + hidden_;
  double* gw1 = grad.data();
  double* gb1 = gw1 + static_cast<std::size_t>(hidden_) * inputs_;
  double* gw2 = gb1 + hidden_;
  double* gb2 = gw2 + static_cast<std::size_t>(outputs_) * hidden_;
  for (int o = 0; o < outputs_; ++o) {
    gb2[o] += dout[o];
    double* row = gw2 + static_cast<std::size_t>(o) * hidden_;
    for (int h = 0; h < hidden_; ++h) row[h] += dout[o] * hidden_act[h];
  }
  for (int h = 0; h < hidden_; ++h) {
    if (hidden_act[h] <= 0.0) continue;
    double dh = 0.0;
    for (int o = 0; o < outputs_; ++o) dh += dout[o] * w2[static_cast<std::size_t>(o) * hidden_ + h];
    gb1[h] += dh;
    double* row = gw1 + static_cast<std::size_t>(h) * inputs_;
    for (int i = 0; i < inputs_; ++i) row[i] += dh * x[i];
  }
}

std::vector<Mlp::Block> Mlp::blocks() const {
  const std::size_t w1 = static_cast<std::size_t>(hidden_) * inputs_;
  const std::size_t w2 = static_cast<std::size_t>(outputs_) * hidden_;
  return {{"W1", 0, w1},
          {"b1", w1, static_cast<std::size_t>(hidden_)},
          {"W2", w1 + hidden_, w2},
          {"b2", w1 + hidden_ + w2, static_cast<std::size_t>(outputs_)}};
}

void softmax(std::span<double> logits) {
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    sum += l;
  }
  for (double& l : logits) l /= sum;
}

void Adam::update(std::span<double> params, std::span<const double> grad) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

}  // namespace handlab::models
