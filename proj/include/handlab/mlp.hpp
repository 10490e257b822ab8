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

#include <span>
#include <string>
#include <vector>

#include "handlab/common.hpp"

namespace handlab::models {

/// One-hidden-layer perceptron with rectified-linear hidden units and a
/// linear output layer. Parameters live in one flat vector laid out as
/// W1[hidden][inputs], b1[hidden], W2[outputs][hidden], b2[outputs].
class Mlp {
 public:
  Mlp() = default;
  Mlp(int inputs, int hidden, int outputs);

  static std::size_t parameter_count(int inputs, int hidden, int outputs);

  int inputs() const { return inputs_; }
  int hidden() const { return hidden_; }
  int outputs() const { return outputs_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// He-normal first layer, zero biases; second layer scaled by `output_scale`
  /// (0 gives a zero output layer).
  void init(Rng& rng, double output_scale = 1.0);

  /// `hidden_out` receives post-ReLU activations, `out` the linear outputs.
  void forward(std::span<const double> x, std::span<double> hidden_out, std::span<double> out) const;

  /// Accumulates dLoss/dparams into `grad` given dLoss/dout for one input.
  void backward(std::span<const double> x, std::span<const double> hidden_act, std::span<const double> dout,
                std::span<double> grad) const;

  struct Block {
    std::string name;
    std::size_t offset;
    std::size_t size;
  };
  std::vector<Block> blocks() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  int inputs_ = 0;
  int hidden_ = 0;
  int outputs_ = 0;
  std::vector<double> params_;
};

/// Numerically stable softmax in place.
void softmax(std::span<double> logits);

/// Adaptive-moment optimizer state for one parameter vector.
struct Adam {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  void update(std::span<double> params, std::span<const double> grad);
};

}  // namespace handlab::models
