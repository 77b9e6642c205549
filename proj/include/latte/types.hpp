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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace latte {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using RowMatrixXd = RowMatrix<double>;
using Points3d = Points3<double>;

/// Raised for malformed configuration or violated preconditions on inputs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an optimization produces non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::int64_t index)
      : std::runtime_error(what + " (at index " + std::to_string(index) + ")"), index_(index) {}
  std::int64_t index() const noexcept { return index_; }

 private:
  std::int64_t index_;
};

enum class Modality : int { k2D = 0, k3D = 1 };
inline constexpr std::array<Modality, 2> kModalities = {Modality::k2D, Modality::k3D};
inline constexpr int index_of(Modality m) { return static_cast<int>(m); }
inline constexpr Modality other(Modality m) { return m == Modality::k2D ? Modality::k3D : Modality::k2D; }
inline const char* name_of(Modality m) { return m == Modality::k2D ? "2D" : "3D"; }

/// Selects between the intent-consistent weighting conventions (softmin over
/// entropy, normalized window weights, normalized reuse direction) and the
/// formulas evaluated exactly as printed.
enum class Convention { kIntent, kPaperLiteral };

struct ClassSet {
  std::vector<std::string> names;
  std::vector<int> interest;

  int count() const { return static_cast<int>(names.size()); }
  bool is_interest(int c) const;
  /// Throws ConfigError when K < 2, an index is out of range, or C is empty
  /// while interactive adaptation is requested.
  void validate(bool require_interest) const;

  static ClassSet default_urban();
};

/// Rigid sensor-to-world transform.
class Pose {
 public:
  Pose() : matrix_(Eigen::Matrix4d::Identity()) {}
  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  /// Validates the rotation block and the homogeneous row.
  static Pose from_matrix(const Eigen::Matrix4d& m, double tol = 1e-9);
  static Pose identity() { return Pose(); }
  static Pose translation(double x, double y, double z);
  static Pose yaw(double radians, const Eigen::Vector3d& translation = Eigen::Vector3d::Zero());

  Eigen::Ref<const Eigen::Matrix3d> rotation() const { return matrix_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return matrix_.topRightCorner<3, 1>(); }
  const Eigen::Matrix4d& matrix() const { return matrix_; }

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;

  static bool is_valid(const Eigen::Matrix4d& m, double tol = 1e-9);

 private:
  Eigen::Matrix4d matrix_;
};

struct MultiModalFrame {
  std::int64_t t = 0;
  Points3d points;
  RowMatrixXd feat2d;
  RowMatrixXd feat3d;
  Pose pose;
  std::vector<int> gt;
  // Generator metadata: source instance per point, -1 when unknown.
  std::vector<int> instance;

  Eigen::Index size() const { return points.rows(); }
  const RowMatrixXd& features(Modality m) const { return m == Modality::k2D ? feat2d : feat3d; }
  void validate(int num_classes) const;
};

enum class PredictionSource { kStudent, kTeacher };

struct PredictionFrame {
  std::int64_t t = 0;
  RowMatrixXd probs2d;
  RowMatrixXd probs3d;
  PredictionSource source = PredictionSource::kStudent;

  const RowMatrixXd& probs(Modality m) const { return m == Modality::k2D ? probs2d : probs3d; }
  RowMatrixXd& probs(Modality m) { return m == Modality::k2D ? probs2d : probs3d; }
};

struct WindowConfig {
  std::vector<int> sizes{3};
  double voxel_size = 0.2;
  double alpha = 0.9;

  int max_size() const { return sizes.empty() ? 0 : sizes.back(); }
  void validate() const;

  static WindowConfig latte() { return {{3}, 0.2, 0.9}; }
  static WindowConfig latte_pp() { return {{3, 5}, 0.2, 0.9}; }
};

/// Rescales every row onto the probability simplex; negative entries are
/// clamped to zero first and an all-zero row becomes uniform.
template <typename Derived>
void normalize_rows(Eigen::MatrixBase<Derived>& probs) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    auto row = probs.row(i);
    row = row.cwiseMax(Scalar(0));
    const Scalar total = row.sum();
    if (total > Scalar(0)) {
      row /= total;
    } else {
      row.setConstant(Scalar(1) / static_cast<Scalar>(probs.cols()));
    }
  }
}

/// Row-wise argmax; ties go to the lower class index.
template <typename Derived>
std::vector<int> argmax_rows(const Eigen::MatrixBase<Derived>& probs) {
  std::vector<int> labels(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace latte
