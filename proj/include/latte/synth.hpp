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
#include <optional>
#include <vector>

#include "latte/types.hpp"

namespace latte {

enum class Shape { kPlane, kBox, kFacade, kCylinder, kBlob };

/// Geometry and motion of one semantic class. `size_min`/`size_max` are box
/// extents (x, y, z), cylinder (radius, unused, height) or blob radii.
/// Instances are placed in the lateral band |y| in [lateral_min, lateral_max].
struct ClassLayout {
  Shape shape = Shape::kBox;
  int instances = 0;
  Eigen::Vector3d size_min = Eigen::Vector3d::Ones();
  Eigen::Vector3d size_max = Eigen::Vector3d::Ones();
  double lateral_min = 0.0;
  double lateral_max = 0.0;
  double speed_min = 0.0;  // m/frame along the street
  double speed_max = 0.0;
  bool lane_directed = false;  // direction fixed by side of the street instead of random
  double elevation = 0.0;      // blob centre height above its radius
};

struct WorldConfig {
  std::uint64_t seed = 42;
  double extent = 160.0;
  ClassSet class_set = ClassSet::default_urban();
  std::vector<ClassLayout> layout = default_layout(160.0);
  int points_per_frame = 4096;
  int feature_dim = 16;
  double prototype_scale = 1.0;
  std::array<double, 2> noise_sigma{0.5, 0.5};
  double surface_density = 10.0;  // surface sites per square meter
  double sensor_radius = 10.0;
  double site_jitter = 0.01;

  void validate() const;
  static std::vector<ClassLayout> default_layout(double extent);
};

struct Corruption {
  double extra_sigma = 0.0;
  double drop_prob = 0.0;
  Eigen::VectorXd bias;  // empty for none

  bool is_identity() const { return extra_sigma == 0.0 && drop_prob == 0.0 && (bias.size() == 0 || bias.isZero()); }
};

struct ShiftSegment {
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
  std::array<Corruption, 2> modality;
};

struct ShiftSchedule {
  std::vector<ShiftSegment> segments;

  const ShiftSegment& at(std::int64_t t) const;
  void validate(std::int64_t length, int feature_dim) const;

  static ShiftSchedule identity(std::int64_t length);
  /// First half corrupts the 2D modality, second half the 3D modality.
  static ShiftSchedule two_phase(std::int64_t length, int feature_dim, std::uint64_t seed);
};

struct StreamSpec {
  WorldConfig world;
  ShiftSchedule shift = ShiftSchedule::two_phase(400, 16, 42);
  std::int64_t length = 400;
  std::vector<Eigen::Vector2d> waypoints{{10.0, 0.0}, {150.0, 0.0}};
  double heading_noise_deg = 0.5;
  double sensor_height = 1.8;
  bool pose_noise = false;
  double pose_noise_translation = 0.01;
  double pose_noise_rotation_deg = 0.2;

  void validate(int max_window = 0) const;
  /// Same world and trajectory with the source (uncorrupted) feature distribution.
  StreamSpec source() const;
};

struct Instance {
  int id = 0;
  int cls = 0;
  Points3d sites;  // world coordinates at t = 0
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.0;  // planar bounding radius around center
};

struct World {
  WorldConfig config;
  std::vector<Instance> instances;
  std::array<RowMatrixXd, 2> prototypes;  // K x D per modality

  const RowMatrixXd& prototype(Modality m) const { return prototypes[index_of(m)]; }
};

World generate_world(const WorldConfig& config);

/// True sensor pose at frame t (before optional pose noise).
Pose sensor_pose(const StreamSpec& spec, std::int64_t t);

MultiModalFrame render_frame(const World& world, const StreamSpec& spec, std::int64_t t);

/// Mixes a seed with a stream index into an independent 64-bit seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace latte
