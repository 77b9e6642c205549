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

#include "latte/types.hpp"

namespace latte {

/// Transform taking points expressed in frame j into frame i: T_i^-1 * T_j.
inline Pose relative_pose(const Pose& pose_i, const Pose& pose_j) { return pose_i.inverse() * pose_j; }

/// Applies R * p + t to every row.
template <typename Derived>
Points3<typename Derived::Scalar> transform_points(const Eigen::MatrixBase<Derived>& points, const Pose& pose) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 3, 3> rotation = pose.rotation().template cast<Scalar>();
  const Eigen::Matrix<Scalar, 1, 3> offset = pose.translation().transpose().template cast<Scalar>();
  Points3<Scalar> out = points * rotation.transpose();
  out.rowwise() += offset;
  return out;
}

}  // namespace latte
