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

#include <cmath>
#include <span>

#include "latte/types.hpp"

namespace latte {

/// Loss value and its gradient with respect to the logits that produced the
/// probabilities.
struct LogitLoss {
  double value = 0.0;
  RowMatrixXd dlogits;
};

/// Mean cross-entropy over rows whose label is >= 0; rows labeled -1 are
/// ignored. With no labeled rows the loss and gradient are zero.
LogitLoss cross_entropy(const RowMatrixXd& probs, std::span<const int> labels);

/// Mean Shannon entropy of the rows.
LogitLoss entropy_loss(const RowMatrixXd& probs);

struct FocalLoss {
  double value = 0.0;
  Eigen::VectorXd dlogits;
};

/// Binary focal loss on mask logits averaged over points; targets are 0/1.
FocalLoss focal_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& targets, double gamma, double alpha);

/// Mean focal loss from probabilities, for evaluation only.
double focal_loss_value(const Eigen::VectorXd& probs, const Eigen::VectorXd& targets, double gamma, double alpha);

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace latte
