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

#pragma once

#include <cstdint>

#include "latte/types.hpp"

namespace latte {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam over a flat parameter vector. Moment state
/// persists across calls.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig config) : config_(config) {}

  /// Throws DivergenceError on a non-finite gradient or update.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grads);

  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::int64_t step_ = 0;
};

}  // namespace latte
