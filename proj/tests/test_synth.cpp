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

#include <gtest/gtest.h>

#include <map>

#include "latte/geometry.hpp"
#include "latte/synth.hpp"

namespace {

using latte::ClassLayout;
using latte::Shape;
using latte::StreamSpec;
using latte::WorldConfig;

TEST(WorldTest, SameSeedGivesIdenticalWorld) {
  WorldConfig cfg;
  cfg.seed = 7;
  const latte::World a = latte::generate_world(cfg);
  const latte::World b = latte::generate_world(cfg);
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    EXPECT_EQ(a.instances[i].cls, b.instances[i].cls);
    EXPECT_EQ(a.instances[i].sites, b.instances[i].sites);
    EXPECT_EQ(a.instances[i].velocity, b.instances[i].velocity);
  }
  EXPECT_EQ(a.prototypes[0], b.prototypes[0]);
  EXPECT_EQ(a.prototypes[1], b.prototypes[1]);

  cfg.seed = 8;
  const latte::World c = latte::generate_world(cfg);
  EXPECT_NE(a.prototypes[0], c.prototypes[0]);
}

TEST(WorldTest, DefaultWorldHasEveryClassAndRareInterestClasses) {
  const latte::World w = latte::generate_world(WorldConfig{});
  std::map<int, Eigen::Index> sites;
  Eigen::Index total = 0;
  for (const auto& inst : w.instances) {
    sites[inst.cls] += inst.sites.rows();
    total += inst.sites.rows();
  }
  for (int c = 0; c < w.config.class_set.count(); ++c) EXPECT_GT(sites[c], 0) << "class " << c;
  Eigen::Index interest = 0;
  for (int c : w.config.class_set.interest) interest += sites[c];
  EXPECT_LE(static_cast<double>(interest) / static_cast<double>(total), 0.02);
}

TEST(WorldTest, InfeasibleLayoutThrows) {
  WorldConfig cfg;
  cfg.extent = 20.0;
  cfg.layout[1].instances = 10;
  EXPECT_THROW(latte::generate_world(cfg), latte::ConfigError);
}

TEST(WorldTest, InvalidConfigThrows) {
  WorldConfig cfg;
  cfg.feature_dim = 3;
  EXPECT_THROW(latte::generate_world(cfg), latte::ConfigError);
  cfg = WorldConfig{};
  cfg.noise_sigma[1] = -0.1;
  EXPECT_THROW(latte::generate_world(cfg), latte::ConfigError);
  cfg = WorldConfig{};
  cfg.points_per_frame = 0;
  EXPECT_THROW(latte::generate_world(cfg), latte::ConfigError);
}

TEST(RenderTest, ZeroVehiclesMeansNoVehicleLabels) {
  StreamSpec spec;
  spec.world.layout[3].instances = 0;
  const latte::World w = latte::generate_world(spec.world);
  for (std::int64_t t = 0; t < spec.length; t += 20) {
    const auto f = latte::render_frame(w, spec, t);
    for (int y : f.gt) ASSERT_NE(y, 3);
  }
}

TEST(RenderTest, PedestrianFractionOverLongRun) {
  StreamSpec spec;
  const latte::World w = latte::generate_world(spec.world);
  std::int64_t ped = 0, total = 0;
  for (std::int64_t t = 0; t < 200; ++t) {
    const auto f = latte::render_frame(w, spec, t);
    for (int y : f.gt) ped += y == 4 ? 1 : 0;
    total += f.size();
  }
  const double frac = static_cast<double>(ped) / static_cast<double>(total);
  EXPECT_GE(frac, 0.001);
  EXPECT_LE(frac, 0.02);
}

TEST(RenderTest, NoiselessFeaturesEqualPrototypes) {
  StreamSpec spec;
  spec.world.noise_sigma = {0.0, 0.0};
  spec.shift = latte::ShiftSchedule::identity(spec.length);
  const latte::World w = latte::generate_world(spec.world);
  const auto f = latte::render_frame(w, spec, 17);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const int y = f.gt[static_cast<std::size_t>(i)];
    ASSERT_EQ(f.feat2d.row(i), w.prototypes[0].row(y));
    ASSERT_EQ(f.feat3d.row(i), w.prototypes[1].row(y));
  }
}

TEST(RenderTest, Deterministic) {
  StreamSpec spec;
  spec.pose_noise = true;
  const latte::World w = latte::generate_world(spec.world);
  const auto a = latte::render_frame(w, spec, 123);
  const auto b = latte::render_frame(w, spec, 123);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.feat2d, b.feat2d);
  EXPECT_EQ(a.feat3d, b.feat3d);
  EXPECT_EQ(a.gt, b.gt);
  EXPECT_EQ(a.pose.matrix(), b.pose.matrix());
}

TEST(RenderTest, FrameContract) {
  StreamSpec spec;
  const latte::World w = latte::generate_world(spec.world);
  const auto f = latte::render_frame(w, spec, 0);
  EXPECT_EQ(f.size(), spec.world.points_per_frame);
  EXPECT_NO_THROW(f.validate(6));
  EXPECT_TRUE(latte::Pose::is_valid(f.pose.matrix()));
  // Points lie within the sensor radius (plus jitter) in the plane.
  for (Eigen::Index i = 0; i < f.size(); ++i) EXPECT_LE(f.points.row(i).head<2>().norm(), 10.1);
  EXPECT_THROW(latte::render_frame(w, spec, spec.length), latte::ConfigError);
  EXPECT_THROW(latte::render_frame(w, spec, -1), latte::ConfigError);
}

TEST(RenderTest, LabelsFollowInstances) {
  StreamSpec spec;
  const latte::World w = latte::generate_world(spec.world);
  for (std::int64_t t : {0, 50, 399}) {
    const auto f = latte::render_frame(w, spec, t);
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const int id = f.instance[static_cast<std::size_t>(i)];
      ASSERT_EQ(w.instances[static_cast<std::size_t>(id)].cls, f.gt[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(RenderTest, MovingVehicleCentroidAdvances) {
  StreamSpec spec;
  spec.world.extent = 40.0;
  spec.world.sensor_radius = 100.0;
  spec.world.points_per_frame = 2000;
  for (auto& l : spec.world.layout) l.instances = 0;
  spec.world.layout[0].instances = 1;
  spec.world.layout[3] = ClassLayout{Shape::kBox, 1, {4, 2, 1.5}, {4, 2, 1.5}, 2, 2, 1.0, 1.0, true, 0.0};
  spec.waypoints = {{5, 0}, {30, 0}};
  spec.length = 10;
  spec.shift = latte::ShiftSchedule::identity(spec.length);
  const latte::World w = latte::generate_world(spec.world);
  const Eigen::Vector3d velocity = w.instances.back().velocity;
  ASSERT_NEAR(velocity.norm(), 1.0, 1e-12);

  auto centroid = [&](std::int64_t t) {
    const auto f = latte::render_frame(w, spec, t);
    const latte::Points3d world_pts = latte::transform_points(f.points, f.pose);
    Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
    int count = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      if (f.gt[static_cast<std::size_t>(i)] != 3) continue;
      sum += world_pts.row(i);
      ++count;
    }
    EXPECT_GT(count, 20);
    return Eigen::Vector3d((sum / count).transpose());
  };
  for (std::int64_t t = 0; t + 1 < spec.length; ++t) {
    const Eigen::Vector3d step = centroid(t + 1) - centroid(t);
    EXPECT_LT((step - velocity).norm(), 0.3) << "t=" << t;
  }
}

TEST(ShiftTest, ScheduleCoverage) {
  const auto s = latte::ShiftSchedule::two_phase(400, 16, 42);
  EXPECT_NO_THROW(s.validate(400, 16));
  EXPECT_GT(s.at(0).modality[0].extra_sigma, s.at(0).modality[1].extra_sigma);
  EXPECT_GT(s.at(399).modality[1].extra_sigma, s.at(399).modality[0].extra_sigma);
  EXPECT_THROW(s.validate(401, 16), latte::ConfigError);
  EXPECT_THROW(s.at(400), latte::ConfigError);
  latte::ShiftSchedule gap = s;
  gap.segments[1].start = 201;
  EXPECT_THROW(gap.validate(400, 16), latte::ConfigError);
  EXPECT_TRUE(latte::ShiftSchedule::identity(10).at(5).modality[0].is_identity());
}

TEST(StreamTest, LengthCoversWindow) {
  StreamSpec spec;
  spec.length = 4;
  spec.shift = latte::ShiftSchedule::identity(4);
  EXPECT_NO_THROW(spec.validate(3));
  EXPECT_THROW(spec.validate(5), latte::ConfigError);
}

TEST(StreamTest, PoseNoiseIsSmall) {
  StreamSpec spec;
  const latte::Pose clean = latte::sensor_pose(spec, 40);
  spec.pose_noise = true;
  const latte::World w = latte::generate_world(spec.world);
  const auto f = latte::render_frame(w, spec, 40);
  const latte::Pose delta = clean.inverse() * f.pose;
  EXPECT_LT(delta.translation().norm(), 0.1);
  EXPECT_GT(delta.translation().norm(), 0.0);
}

}  // namespace
