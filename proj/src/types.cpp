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

#include "latte/types.hpp"

#include <algorithm>
#include <cmath>

namespace latte {

bool ClassSet::is_interest(int c) const {
  return std::find(interest.begin(), interest.end(), c) != interest.end();
}

void ClassSet::validate(bool require_interest) const {
  if (count() < 2) throw ConfigError("class set needs at least two classes");
  for (int c : interest) {
    if (c < 0 || c >= count()) throw ConfigError("class of interest " + std::to_string(c) + " out of range");
  }
  if (require_interest && interest.empty()) {
    throw ConfigError("interactive adaptation requires a non-empty set of classes of interest");
  }
}

ClassSet ClassSet::default_urban() {
  return {{"road", "building", "vegetation", "vehicle", "pedestrian", "bicycle"}, {4, 5}};
}

Pose::Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : matrix_(Eigen::Matrix4d::Identity()) {
  matrix_.topLeftCorner<3, 3>() = rotation;
  matrix_.topRightCorner<3, 1>() = translation;
}

bool Pose::is_valid(const Eigen::Matrix4d& m, double tol) {
  if (!m.allFinite()) return false;
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  const double orth = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth >= tol) return false;
  if (std::abs(r.determinant() - 1.0) >= 10 * tol) return false;
  const Eigen::RowVector4d last = m.row(3);
  return (last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() == 0.0;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m, double tol) {
  if (!is_valid(m, tol)) throw ConfigError("matrix is not a rigid-body transform");
  Pose p;
  p.matrix_ = m;
  return p;
}

Pose Pose::translation(double x, double y, double z) {
  return Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(x, y, z));
}

Pose Pose::yaw(double radians, const Eigen::Vector3d& translation) {
  return Pose(Eigen::AngleAxisd(radians, Eigen::Vector3d::UnitZ()).toRotationMatrix(), translation);
}

Pose Pose::inverse() const {
  const Eigen::Matrix3d rt = rotation().transpose();
  return Pose(rt, -rt * translation());
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.matrix_.topLeftCorner<3, 3>() = rotation() * rhs.rotation();
  out.matrix_.topRightCorner<3, 1>() = rotation() * rhs.translation() + translation();
  return out;
}

void MultiModalFrame::validate(int num_classes) const {
  const Eigen::Index n = size();
  if (n <= 0) throw ConfigError("frame " + std::to_string(t) + " has no points");
  if (feat2d.rows() != n || feat3d.rows() != n || static_cast<Eigen::Index>(gt.size()) != n) {
    throw ConfigError("frame " + std::to_string(t) + " arrays disagree on point count");
  }
  if (!instance.empty() && static_cast<Eigen::Index>(instance.size()) != n) {
    throw ConfigError("frame " + std::to_string(t) + " instance ids disagree on point count");
  }
  if (!feat2d.allFinite() || !feat3d.allFinite() || !points.allFinite()) {
    throw ConfigError("frame " + std::to_string(t) + " has non-finite values");
  }
  for (int c : gt) {
    if (c < 0 || c >= num_classes) throw ConfigError("frame " + std::to_string(t) + " label out of range");
  }
}

void WindowConfig::validate() const {
  if (sizes.empty()) throw ConfigError("at least one window size is required");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 0) throw ConfigError("window sizes must be non-negative");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("window sizes must be strictly increasing");
  }
  if (!(voxel_size > 0.0)) throw ConfigError("voxel size must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("quantile alpha must lie in (0, 1]");
}

}  // namespace latte
