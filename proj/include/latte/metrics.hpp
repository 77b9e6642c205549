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

#include <optional>
#include <span>
#include <vector>

#include "latte/types.hpp"

namespace latte {

/// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(std::span<const int> pred, std::span<const int> gt);
  void merge(const ConfusionMatrix& other);

  /// IoU per class; nullopt for classes absent from both prediction and truth.
  std::vector<std::optional<double>> iou() const;
  /// Mean over present classes; 0 when nothing is present.
  double miou() const;

  int num_classes() const { return static_cast<int>(counts_.rows()); }
  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }

 private:
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

struct MiouResult {
  double miou = 0.0;
  std::vector<std::optional<double>> iou;
};

MiouResult evaluate_miou(std::span<const int> pred, std::span<const int> gt, int num_classes);

}  // namespace latte
