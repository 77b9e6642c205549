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

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "latte/types.hpp"
#include "latte/voxel.hpp"

namespace latte {

inline constexpr double kProbFloor = 1e-12;

/// Shannon entropy in nats with 0 ln 0 := 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h(0);
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    const Scalar v = p(c);
    if (v > Scalar(0)) h -= v * std::log(v);
  }
  return h < Scalar(0) ? Scalar(0) : h;
}

template <typename Scalar>
struct EntropyResult {
  Scalar entropy;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean;
};

/// Entropy of the mean reference distribution.
template <typename Derived>
EntropyResult<typename Derived::Scalar> st_entropy(const Eigen::MatrixBase<Derived>& refs) {
  using Scalar = typename Derived::Scalar;
  if (refs.rows() == 0) throw ConfigError("ST entropy needs at least one reference row");
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = refs.colwise().sum() / static_cast<Scalar>(refs.rows());
  return {entropy(mean), mean};
}

/// KL(q || r) in nats; both sides floored at kProbFloor inside the log.
template <typename DerivedQ, typename DerivedR>
typename DerivedQ::Scalar kl_divergence(const Eigen::MatrixBase<DerivedQ>& q, const Eigen::MatrixBase<DerivedR>& r) {
  using Scalar = typename DerivedQ::Scalar;
  Scalar kl(0);
  for (Eigen::Index c = 0; c < q.size(); ++c) {
    if (q(c) <= Scalar(0)) continue;
    kl += q(c) * (std::log(std::max<Scalar>(q(c), kProbFloor)) - std::log(std::max<Scalar>(r(c), kProbFloor)));
  }
  return kl;
}

/// Nearest-rank alpha-quantile: the ceil(alpha * n)-th smallest value.
double nearest_rank_quantile(std::span<const double> values, double alpha);

/// Keep flag per entry: 1 iff value <= the alpha-quantile of all values.
std::vector<std::uint8_t> quantile_filter(std::span<const double> entropies, double alpha);

/// Window prior log2(2 + w).
inline double window_prior(int window) { return std::log2(2.0 + window); }

struct WindowMerge {
  double entropy = 0.0;
  Eigen::RowVectorXd mean;
  std::vector<double> tau;
  bool keep = false;
};

/// Intra-modal attending across windows. Windows with missing references
/// carry NaN entropy and keep = 0. When every window is filtered the merge
/// falls back to all populated windows so the entropy stays defined, and
/// keep is false.
WindowMerge merge_windows(std::span<const double> window_entropy, std::span<const Eigen::RowVectorXd> window_mean,
                          std::span<const std::uint8_t> window_keep, std::span<const double> prior,
                          Convention convention = Convention::kIntent);

/// Voxel-wise cross-modal weights (w^2D, w^3D).
std::pair<double, double> cross_modal_weights(double entropy2d, double entropy3d,
                                              Convention convention = Convention::kIntent);

struct ModalReliability {
  std::vector<double> window_entropy;
  std::vector<Eigen::RowVectorXd> window_mean;
  std::vector<std::uint8_t> window_keep;
  std::vector<double> tau;
  double entropy = 0.0;
  Eigen::RowVectorXd mean;
  bool keep = false;
};

struct ReliabilityRecord {
  std::array<ModalReliability, 2> modality;

  const ModalReliability& operator[](Modality m) const { return modality[index_of(m)]; }
  ModalReliability& operator[](Modality m) { return modality[index_of(m)]; }
};

struct XmLoss {
  double value = 0.0;
  double weight2d = 0.5;
  // Gradient with respect to each modality's mean query distribution; empty
  // when that modality's term was dropped.
  std::array<Eigen::RowVectorXd, 2> grad_query_mean;
};

/// Weighted cross-modal KL between mean student queries and the other
/// modality's mean references. References are constants.
XmLoss xm_consistency_loss(const Eigen::RowVectorXd& query_mean2d, const Eigen::RowVectorXd& query_mean3d,
                           std::size_t num_query, const ReliabilityRecord& record,
                           Convention convention = Convention::kIntent);

/// ST voxels of one query frame with their reliability.
struct QueryFrameVoxels {
  std::int64_t t = 0;
  std::vector<STVoxel> voxels;
  std::vector<ReliabilityRecord> records;
};

/// Single-window assessment: entropy of the only reference set and the
/// per-modality quantile over every voxel in the batch.
void assess_single_window(std::vector<QueryFrameVoxels>& batch, const PredictionLookup& teachers, double alpha);

/// Multi-window assessment with a quantile pooled over all windows and
/// voxels of the batch, followed by intra-modal attending.
void assess_multi_window(std::vector<QueryFrameVoxels>& batch, const PredictionLookup& teachers,
                         const WindowConfig& windows, Convention convention = Convention::kIntent);

struct PointReliability {
  std::int64_t t = 0;
  std::array<Eigen::VectorXd, 2> entropy;
  std::array<Eigen::VectorXi, 2> contributors;
};

/// Every reference point of a kept voxel receives the voxel entropy; several
/// values are averaged; points receiving none use their own prediction
/// entropy. Only frames listed in `frames` are materialized.
std::vector<PointReliability> propagate_point_entropy(const std::vector<QueryFrameVoxels>& batch,
                                                      const PredictionLookup& predictions,
                                                      std::span<const std::int64_t> frames);

struct FusedRow {
  Eigen::RowVectorXd probs;
  int label = 0;
  double weight2d = 0.5;
};

template <typename Derived2, typename Derived3>
FusedRow fuse_predictions(const Eigen::MatrixBase<Derived2>& p2d, const Eigen::MatrixBase<Derived3>& p3d,
                          double entropy2d, double entropy3d, Convention convention = Convention::kIntent) {
  const auto [w2, w3] = cross_modal_weights(entropy2d, entropy3d, convention);
  FusedRow out;
  out.weight2d = w2;
  out.probs = w2 * p2d.template cast<double>() + w3 * p3d.template cast<double>();
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < out.probs.size(); ++c) {
    if (out.probs(c) > out.probs(best)) best = c;
  }
  out.label = static_cast<int>(best);
  return out;
}

struct FusedFrame {
  std::int64_t t = 0;
  RowMatrixXd probs;
  std::vector<int> labels;
  std::array<Eigen::VectorXd, 2> weights;
};

FusedFrame fuse_frame(const PredictionFrame& predictions, const PointReliability& reliability,
                      Convention convention = Convention::kIntent);

/// Equal-weight fusion used by methods without reliability estimates.
FusedFrame average_frame(const PredictionFrame& predictions);

}  // namespace latte
