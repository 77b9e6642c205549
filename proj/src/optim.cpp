// Copyright 2026 The Latte Bench Authors
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

#include "latte/optim.hpp"

#include <cmath>

namespace latte {

void AdamW::step(Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
  if (params.size() != grads.size()) throw ConfigError("optimizer: gradient size mismatch");
  if (!grads.allFinite()) throw DivergenceError("non-finite gradient", step_);
  if (m_.size() == 0) {
    m_ = Eigen::VectorXd::Zero(params.size());
    v_ = Eigen::VectorXd::Zero(params.size());
  } else if (m_.size() != params.size()) {
    throw ConfigError("optimizer: parameter count changed between steps");
  }
  ++step_;
  const auto& c = config_;
  m_ = c.beta1 * m_ + (1.0 - c.beta1) * grads;
  v_ = c.beta2 * v_ + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
  const Eigen::VectorXd update =
      ((m_.array() / bc1) / ((v_.array() / bc2).sqrt() + c.eps)).matrix() + c.weight_decay * params;
  if (!update.allFinite()) throw DivergenceError("non-finite optimizer update", step_);
  params -= c.lr * update;
}

}  // namespace latte
