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

#include "latte/metrics.hpp"

namespace latte {

ConfusionMatrix::ConfusionMatrix(int num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_ = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_classes, num_classes);
}

void ConfusionMatrix::add(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) throw ConfigError("prediction and ground-truth lengths differ");
  const int k = num_classes();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= k || gt[i] < 0 || gt[i] >= k) throw ConfigError("class index out of range");
    ++counts_(gt[i], pred[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw ConfigError("confusion matrix size mismatch");
  counts_ += other.counts_;
}

std::vector<std::optional<double>> ConfusionMatrix::iou() const {
  const int k = num_classes();
  std::vector<std::optional<double>> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const std::int64_t tp = counts_(c, c);
    const std::int64_t fn = counts_.row(c).sum() - tp;
    const std::int64_t fp = counts_.col(c).sum() - tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom > 0) out[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double ConfusionMatrix::miou() const {
  double total = 0.0;
  int present = 0;
  for (const auto& v : iou()) {
    if (!v) continue;
    total += *v;
    ++present;
  }
  return present == 0 ? 0.0 : total / present;
}

MiouResult evaluate_miou(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return {cm.miou(), cm.iou()};
}

}  // namespace latte
