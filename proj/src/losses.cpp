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

#include "latte/losses.hpp"

#include <algorithm>
#include <cmath>

namespace latte {

LogitLoss cross_entropy(const RowMatrixXd& probs, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) throw ConfigError("label count mismatch");
  LogitLoss out;
  out.dlogits = RowMatrixXd::Zero(probs.rows(), probs.cols());
  Eigen::Index n = 0;
  for (int y : labels) n += y >= 0 ? 1 : 0;
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    if (y >= probs.cols()) throw ConfigError("label out of range");
    out.value -= std::log(std::max(probs(i, y), 1e-12)) * inv;
    out.dlogits.row(i) = probs.row(i) * inv;
    out.dlogits(i, y) -= inv;
  }
  return out;
}

LogitLoss entropy_loss(const RowMatrixXd& probs) {
  LogitLoss out;
  out.dlogits = RowMatrixXd::Zero(probs.rows(), probs.cols());
  if (probs.rows() == 0) return out;
  const double inv = 1.0 / static_cast<double>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      if (probs(i, c) > 0) h -= probs(i, c) * std::log(probs(i, c));
    }
    out.value += h * inv;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (p > 0) out.dlogits(i, c) = -p * (std::log(p) + h) * inv;
    }
  }
  return out;
}

namespace {

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

FocalLoss focal_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& targets, double gamma, double alpha) {
  if (logits.size() != targets.size()) throw ConfigError("focal loss: mask length mismatch");
  FocalLoss out;
  out.dlogits = Eigen::VectorXd::Zero(logits.size());
  if (logits.size() == 0) return out;
  const double inv = 1.0 / static_cast<double>(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const bool positive = targets(i) > 0.5;
    const double s = positive ? 1.0 : -1.0;
    const double alpha_t = positive ? alpha : 1.0 - alpha;
    const double log_pt = log_sigmoid(s * logits(i));
    const double pt = std::exp(log_pt);
    const double q = 1.0 - pt;
    const double qg = std::pow(q, gamma);
    out.value -= alpha_t * qg * log_pt * inv;
    // d/dx of -alpha_t (1-pt)^gamma log pt, with dpt/dx = s pt (1-pt).
    out.dlogits(i) = -alpha_t * s * (-gamma * qg * pt * log_pt + qg * q) * inv;
  }
  return out;
}

double focal_loss_value(const Eigen::VectorXd& probs, const Eigen::VectorXd& targets, double gamma, double alpha) {
  if (probs.size() != targets.size()) throw ConfigError("focal loss: mask length mismatch");
  if (probs.size() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const bool positive = targets(i) > 0.5;
    const double pt = positive ? probs(i) : 1.0 - probs(i);
    const double alpha_t = positive ? alpha : 1.0 - alpha;
    if (pt >= 1.0) continue;
    total -= alpha_t * std::pow(1.0 - pt, gamma) * std::log(std::max(pt, 1e-300));
  }
  return total / static_cast<double>(probs.size());
}

}  // namespace latte
