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
#include <span>
#include <vector>

#include "latte/types.hpp"

namespace latte {

enum class UpdateScope { kNormOnly, kAll };
enum class TensorKind { kWeight, kBias, kNormScale, kNormShift };

inline bool in_scope(TensorKind kind, UpdateScope scope) {
  return scope == UpdateScope::kAll || kind == TensorKind::kNormScale || kind == TensorKind::kNormShift;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Affine map followed by layer normalization with trainable scale/shift.
struct NormDense {
  RowMatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
};

/// Per-modality classifier: [affine -> layer norm -> ReLU] x L -> linear -> softmax.
struct MlpParams {
  std::vector<NormDense> hidden;
  RowMatrixXd cls_weight;  // K x H
  Eigen::VectorXd cls_bias;

  static MlpParams init(int input_dim, std::span<const int> widths, int num_classes, std::uint64_t seed);
  static MlpParams zeros_like(const MlpParams& other);

  int input_dim() const { return static_cast<int>(hidden.front().weight.cols()); }
  int feature_dim() const { return static_cast<int>(cls_weight.cols()); }
  int num_classes() const { return static_cast<int>(cls_weight.rows()); }

  /// Visits every tensor in a fixed order as (kind, mutable span).
  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& layer : hidden) {
      f(TensorKind::kWeight, std::span<double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
      f(TensorKind::kBias, std::span<double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
      f(TensorKind::kNormScale, std::span<double>(layer.gamma.data(), static_cast<std::size_t>(layer.gamma.size())));
      f(TensorKind::kNormShift, std::span<double>(layer.beta.data(), static_cast<std::size_t>(layer.beta.size())));
    }
    f(TensorKind::kWeight, std::span<double>(cls_weight.data(), static_cast<std::size_t>(cls_weight.size())));
    f(TensorKind::kBias, std::span<double>(cls_bias.data(), static_cast<std::size_t>(cls_bias.size())));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<MlpParams*>(this)->for_each_tensor(
        [&](TensorKind k, std::span<double> s) { f(k, std::span<const double>(s.data(), s.size())); });
  }

  bool all_finite() const;
};

struct LayerNormCache {
  RowMatrixXd xhat;
  Eigen::VectorXd rstd;
};

/// Row-wise layer normalization with scale/shift. `cache` may be null.
RowMatrixXd layer_norm(const RowMatrixXd& a, const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta,
                       LayerNormCache* cache);
/// Returns the gradient on the normalized input and fills scale/shift gradients.
RowMatrixXd layer_norm_backward(const RowMatrixXd& dy, const LayerNormCache& cache, const Eigen::VectorXd& gamma,
                                Eigen::VectorXd& dgamma, Eigen::VectorXd& dbeta);

struct NormDenseCache {
  RowMatrixXd input;
  RowMatrixXd xhat;
  Eigen::VectorXd rstd;
  RowMatrixXd normalized;  // gamma * xhat + beta, before ReLU
};

struct MlpCache {
  std::vector<NormDenseCache> layers;
  RowMatrixXd features;  // last hidden activation
  RowMatrixXd logits;
  RowMatrixXd probs;
};

RowMatrixXd softmax_rows(const RowMatrixXd& logits);
/// Gradient with respect to logits given a gradient with respect to softmax outputs.
RowMatrixXd softmax_backward(const RowMatrixXd& probs, const RowMatrixXd& dprobs);

/// Forward pass retaining intermediates. Throws DivergenceError on a
/// non-finite activation.
MlpCache forward(const MlpParams& params, const RowMatrixXd& input);
RowMatrixXd predict(const MlpParams& params, const RowMatrixXd& input);

/// Analytic parameter gradients. `dfeatures` (optional, may be empty) adds a
/// gradient on the last hidden activation. Tensors outside `scope` are zero.
MlpParams backward(const MlpParams& params, const MlpCache& cache, const RowMatrixXd& dlogits,
                   const RowMatrixXd& dfeatures, UpdateScope scope);

/// Trainable tensors flattened in visiting order.
Eigen::VectorXd flatten(const MlpParams& params, UpdateScope scope);
void unflatten(MlpParams& params, const Eigen::VectorXd& values, UpdateScope scope);
/// Trainable tensors as separate vectors, in visiting order.
std::vector<Eigen::VectorXd> split_tensors(const MlpParams& params, UpdateScope scope);
Eigen::VectorXd join_tensors(const std::vector<Eigen::VectorXd>& tensors);

}  // namespace latte
