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

#include "latte/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "latte/geometry.hpp"

namespace latte {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::Vector3d uniform_vec(std::mt19937_64& rng, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  return {uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()), uniform(rng, lo.z(), hi.z())};
}

int site_count(double area, double density) { return std::max(1, static_cast<int>(std::lround(area * density))); }

// Axis-aligned rectangle spanned by two edge vectors from an origin.
void sample_rect(std::mt19937_64& rng, const Eigen::Vector3d& origin, const Eigen::Vector3d& u,
                 const Eigen::Vector3d& v, int count, std::vector<Eigen::Vector3d>& out) {
  for (int i = 0; i < count; ++i) out.push_back(origin + uniform(rng, 0, 1) * u + uniform(rng, 0, 1) * v);
}

std::vector<Eigen::Vector3d> box_sites(std::mt19937_64& rng, const Eigen::Vector3d& center, const Eigen::Vector3d& size,
                                       double density) {
  std::vector<Eigen::Vector3d> out;
  const Eigen::Vector3d lo = center - 0.5 * size;
  const Eigen::Vector3d ex(size.x(), 0, 0), ey(0, size.y(), 0), ez(0, 0, size.z());
  sample_rect(rng, lo, ex, ez, site_count(size.x() * size.z(), density), out);
  sample_rect(rng, lo + ey, ex, ez, site_count(size.x() * size.z(), density), out);
  sample_rect(rng, lo, ey, ez, site_count(size.y() * size.z(), density), out);
  sample_rect(rng, lo + ex, ey, ez, site_count(size.y() * size.z(), density), out);
  sample_rect(rng, lo + ez, ex, ey, site_count(size.x() * size.y(), density), out);
  return out;
}

std::vector<Eigen::Vector3d> cylinder_sites(std::mt19937_64& rng, const Eigen::Vector3d& base, double radius,
                                            double height, double density) {
  std::vector<Eigen::Vector3d> out;
  const int side = site_count(2 * std::numbers::pi * radius * height, density);
  for (int i = 0; i < side; ++i) {
    const double a = uniform(rng, 0, 2 * std::numbers::pi);
    out.push_back(base + Eigen::Vector3d(radius * std::cos(a), radius * std::sin(a), uniform(rng, 0, height)));
  }
  const int top = site_count(std::numbers::pi * radius * radius, density);
  for (int i = 0; i < top; ++i) {
    const double a = uniform(rng, 0, 2 * std::numbers::pi);
    const double r = radius * std::sqrt(uniform(rng, 0, 1));
    out.push_back(base + Eigen::Vector3d(r * std::cos(a), r * std::sin(a), height));
  }
  return out;
}

std::vector<Eigen::Vector3d> blob_sites(std::mt19937_64& rng, const Eigen::Vector3d& center, const Eigen::Vector3d& radii,
                                        double density) {
  // Knud Thomsen's approximation of the ellipsoid surface area.
  constexpr double p = 1.6075;
  const double a = std::pow(radii.x(), p), b = std::pow(radii.y(), p), c = std::pow(radii.z(), p);
  const double area = 4 * std::numbers::pi * std::pow((a * b + a * c + b * c) / 3.0, 1.0 / p);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Vector3d> out;
  const int count = site_count(area, density);
  for (int i = 0; i < count; ++i) {
    Eigen::Vector3d d(normal(rng), normal(rng), normal(rng));
    d /= std::max(d.norm(), 1e-12);
    out.push_back(center + d.cwiseProduct(radii));
  }
  return out;
}

Instance make_instance(int id, int cls, const std::vector<Eigen::Vector3d>& sites, const Eigen::Vector3d& velocity) {
  Instance inst;
  inst.id = id;
  inst.cls = cls;
  inst.velocity = velocity;
  inst.sites.resize(static_cast<Eigen::Index>(sites.size()), 3);
  for (std::size_t i = 0; i < sites.size(); ++i) inst.sites.row(static_cast<Eigen::Index>(i)) = sites[i].transpose();
  inst.center = inst.sites.colwise().mean().transpose();
  double r = 0.0;
  for (Eigen::Index i = 0; i < inst.sites.rows(); ++i) {
    r = std::max(r, (inst.sites.row(i).head<2>() - inst.center.head<2>().transpose()).norm());
  }
  inst.radius = r;
  return inst;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined state
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<ClassLayout> WorldConfig::default_layout(double extent) {
  std::vector<ClassLayout> layout(6);
  // road: one ground strip covering the street and sidewalks
  layout[0] = {Shape::kPlane, 1, {extent, 14.0, 0.0}, {extent, 14.0, 0.0}, 0.0, 7.0, 0.0, 0.0, false, 0.0};
  // building: street-facing facades on both sides
  const int buildings = 2 * static_cast<int>(std::ceil(extent / 14.0));
  layout[1] = {Shape::kFacade, buildings, {8.0, 5.0, 4.0}, {12.0, 6.0, 8.0}, 9.0, 9.0, 0.0, 0.0, false, 0.0};
  layout[2] = {Shape::kBlob, 20, {0.8, 0.8, 1.0}, {1.4, 1.4, 1.8}, 6.8, 8.0, 0.0, 0.0, false, 0.6};
  layout[3] = {Shape::kBox, 12, {3.8, 1.7, 1.4}, {4.6, 1.9, 1.7}, 1.6, 2.4, 0.10, 0.35, true, 0.0};
  layout[4] = {Shape::kCylinder, 12, {0.25, 0.0, 1.6}, {0.35, 0.0, 1.85}, 4.8, 6.2, 0.01, 0.05, false, 0.0};
  layout[5] = {Shape::kBox, 6, {1.6, 0.4, 1.0}, {1.9, 0.6, 1.2}, 3.2, 4.2, 0.08, 0.20, true, 0.0};
  return layout;
}

void WorldConfig::validate() const {
  class_set.validate(false);
  if (static_cast<int>(layout.size()) != class_set.count()) {
    throw ConfigError("world layout needs one entry per class");
  }
  if (points_per_frame <= 0) throw ConfigError("points_per_frame must be positive");
  if (feature_dim < 4) throw ConfigError("feature_dim must be at least 4");
  if (noise_sigma[0] < 0 || noise_sigma[1] < 0) throw ConfigError("noise sigmas must be non-negative");
  if (!(extent > 0)) throw ConfigError("extent must be positive");
  if (!(surface_density > 0)) throw ConfigError("surface_density must be positive");
  if (!(sensor_radius > 0)) throw ConfigError("sensor_radius must be positive");
  if (site_jitter < 0) throw ConfigError("site_jitter must be non-negative");
  for (const auto& l : layout) {
    if (l.instances < 0) throw ConfigError("instance counts must be non-negative");
    if (l.speed_min < 0 || l.speed_max < l.speed_min) throw ConfigError("invalid speed range");
  }
}

const ShiftSegment& ShiftSchedule::at(std::int64_t t) const {
  for (const auto& s : segments) {
    if (t >= s.start && t < s.end) return s;
  }
  throw ConfigError("no shift segment covers frame " + std::to_string(t));
}

void ShiftSchedule::validate(std::int64_t length, int feature_dim) const {
  if (segments.empty()) throw ConfigError("shift schedule has no segments");
  std::int64_t cursor = 0;
  for (const auto& s : segments) {
    if (s.start != cursor) throw ConfigError("shift segments must be contiguous from frame 0");
    if (s.end <= s.start) throw ConfigError("shift segment must be non-empty");
    for (const auto& c : s.modality) {
      if (c.extra_sigma < 0 || c.drop_prob < 0 || c.drop_prob > 1) throw ConfigError("invalid corruption");
      if (c.bias.size() != 0 && c.bias.size() != feature_dim) throw ConfigError("bias length must equal feature_dim");
    }
    cursor = s.end;
  }
  if (cursor < length) throw ConfigError("shift schedule does not cover the stream");
}

ShiftSchedule ShiftSchedule::identity(std::int64_t length) {
  ShiftSchedule s;
  s.segments.push_back({0, length, {}});
  return s;
}

ShiftSchedule ShiftSchedule::two_phase(std::int64_t length, int feature_dim, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5a1f7ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto bias = [&](double norm) {
    Eigen::VectorXd b(feature_dim);
    for (int i = 0; i < feature_dim; ++i) b[i] = normal(rng);
    return Eigen::VectorXd(b * (norm / b.norm()));
  };
  const std::int64_t half = length / 2;
  ShiftSchedule s;
  ShiftSegment first{0, half, {}};
  first.modality[0] = {1.2, 0.15, bias(1.5)};
  first.modality[1] = {0.2, 0.0, Eigen::VectorXd()};
  ShiftSegment second{half, length, {}};
  second.modality[0] = {0.2, 0.0, Eigen::VectorXd()};
  second.modality[1] = {1.2, 0.15, bias(1.5)};
  s.segments = {first, second};
  return s;
}

void StreamSpec::validate(int max_window) const {
  world.validate();
  if (length <= 0) throw ConfigError("stream length must be positive");
  if (length < max_window) throw ConfigError("stream length must be at least the largest window size");
  if (waypoints.size() < 2) throw ConfigError("trajectory needs at least two waypoints");
  if (heading_noise_deg < 0) throw ConfigError("heading noise must be non-negative");
  shift.validate(length, world.feature_dim);
}

StreamSpec StreamSpec::source() const {
  StreamSpec s = *this;
  s.shift = ShiftSchedule::identity(length);
  return s;
}

World generate_world(const WorldConfig& config) {
  config.validate();
  World world;
  world.config = config;
  std::mt19937_64 rng(mix_seed(config.seed, 0));

  std::normal_distribution<double> normal(0.0, 1.0);
  const int k = config.class_set.count();
  for (auto m : kModalities) {
    RowMatrixXd proto(k, config.feature_dim);
    for (Eigen::Index i = 0; i < proto.size(); ++i) proto.data()[i] = normal(rng) * config.prototype_scale;
    world.prototypes[index_of(m)] = proto;
  }

  int next_id = 0;
  for (int cls = 0; cls < k; ++cls) {
    const ClassLayout& l = config.layout[static_cast<std::size_t>(cls)];
    std::mt19937_64 crng(mix_seed(config.seed, 1000 + static_cast<std::uint64_t>(cls)));
    if (l.shape == Shape::kPlane) {
      for (int i = 0; i < l.instances; ++i) {
        std::vector<Eigen::Vector3d> sites;
        const Eigen::Vector3d origin(0, -l.lateral_max, 0);
        const Eigen::Vector3d u(config.extent, 0, 0), v(0, 2 * l.lateral_max, 0);
        sample_rect(crng, origin, u, v, site_count(config.extent * 2 * l.lateral_max, config.surface_density), sites);
        world.instances.push_back(make_instance(next_id++, cls, sites, Eigen::Vector3d::Zero()));
      }
      continue;
    }
    if (l.shape == Shape::kFacade) {
      std::array<double, 2> cursor{0.0, 0.0};
      for (int i = 0; i < l.instances; ++i) {
        const int side_idx = i % 2;
        const double side = side_idx == 0 ? -1.0 : 1.0;
        const Eigen::Vector3d size = uniform_vec(crng, l.size_min, l.size_max);
        const double gap = uniform(crng, 1.0, 3.0);
        const double x0 = cursor[side_idx] + gap;
        if (x0 + size.x() > config.extent) {
          throw ConfigError("layout infeasible: extent too small for " + std::to_string(l.instances) + " " +
                            config.class_set.names[static_cast<std::size_t>(cls)] + " instances");
        }
        cursor[side_idx] = x0 + size.x();
        const double y = side * uniform(crng, l.lateral_min, l.lateral_max);
        std::vector<Eigen::Vector3d> sites;
        sample_rect(crng, Eigen::Vector3d(x0, y, 0), Eigen::Vector3d(size.x(), 0, 0), Eigen::Vector3d(0, 0, size.z()),
                    site_count(size.x() * size.z(), config.surface_density), sites);
        world.instances.push_back(make_instance(next_id++, cls, sites, Eigen::Vector3d::Zero()));
      }
      continue;
    }
    if (l.instances > 0 && config.extent < 10.0) {
      throw ConfigError("layout infeasible: extent too small for dynamic and vegetation instances");
    }
    for (int i = 0; i < l.instances; ++i) {
      const double side = (i % 2 == 0) ? -1.0 : 1.0;
      const double x = uniform(crng, 2.0, config.extent - 2.0);
      const double y = side * uniform(crng, l.lateral_min, l.lateral_max);
      const Eigen::Vector3d size = uniform_vec(crng, l.size_min, l.size_max);
      double speed = uniform(crng, l.speed_min, l.speed_max);
      const double dir = l.lane_directed ? (side < 0 ? 1.0 : -1.0) : (uniform(crng, 0, 1) < 0.5 ? -1.0 : 1.0);
      std::vector<Eigen::Vector3d> sites;
      switch (l.shape) {
        case Shape::kBox:
          sites = box_sites(crng, Eigen::Vector3d(x, y, 0.5 * size.z()), size, config.surface_density);
          break;
        case Shape::kCylinder:
          sites = cylinder_sites(crng, Eigen::Vector3d(x, y, 0), size.x(), size.z(), config.surface_density);
          break;
        case Shape::kBlob:
          sites = blob_sites(crng, Eigen::Vector3d(x, y, l.elevation + size.z()), size, config.surface_density);
          break;
        default:
          break;
      }
      world.instances.push_back(make_instance(next_id++, cls, sites, Eigen::Vector3d(dir * speed, 0, 0)));
    }
  }
  return world;
}

Pose sensor_pose(const StreamSpec& spec, std::int64_t t) {
  // Constant arc-length speed along the waypoint polyline.
  std::vector<double> cumulative{0.0};
  for (std::size_t i = 1; i < spec.waypoints.size(); ++i) {
    cumulative.push_back(cumulative.back() + (spec.waypoints[i] - spec.waypoints[i - 1]).norm());
  }
  const double total = cumulative.back();
  const double u = spec.length > 1 ? static_cast<double>(t) / static_cast<double>(spec.length - 1) : 0.0;
  const double s = std::clamp(u, 0.0, 1.0) * total;
  std::size_t seg = 1;
  while (seg + 1 < spec.waypoints.size() && cumulative[seg] < s) ++seg;
  const Eigen::Vector2d a = spec.waypoints[seg - 1], b = spec.waypoints[seg];
  const double len = std::max(cumulative[seg] - cumulative[seg - 1], 1e-12);
  const Eigen::Vector2d pos = a + (b - a) * ((s - cumulative[seg - 1]) / len);
  double heading = std::atan2(b.y() - a.y(), b.x() - a.x());
  if (spec.heading_noise_deg > 0) {
    std::mt19937_64 rng(mix_seed(spec.world.seed, 0x4ead0000ULL + static_cast<std::uint64_t>(t)));
    heading += std::normal_distribution<double>(0.0, spec.heading_noise_deg * kDegToRad)(rng);
  }
  return Pose::yaw(heading, Eigen::Vector3d(pos.x(), pos.y(), spec.sensor_height));
}

MultiModalFrame render_frame(const World& world, const StreamSpec& spec, std::int64_t t) {
  if (t < 0 || t >= spec.length) throw ConfigError("frame index " + std::to_string(t) + " outside the stream");
  const WorldConfig& cfg = world.config;
  const Pose true_pose = sensor_pose(spec, t);
  const Eigen::Vector2d origin = true_pose.translation().head<2>();
  const double r2 = cfg.sensor_radius * cfg.sensor_radius;

  struct Candidate {
    int instance;
    Eigen::Index site;
  };
  std::vector<Candidate> candidates;
  const double dt = static_cast<double>(t);
  for (std::size_t n = 0; n < world.instances.size(); ++n) {
    const Instance& inst = world.instances[n];
    const Eigen::Vector2d shift = inst.velocity.head<2>() * dt;
    const double reach = cfg.sensor_radius + inst.radius;
    if ((inst.center.head<2>() + shift - origin).squaredNorm() > reach * reach && inst.radius < cfg.extent) continue;
    for (Eigen::Index i = 0; i < inst.sites.rows(); ++i) {
      const Eigen::Vector2d p = inst.sites.row(i).head<2>().transpose() + shift;
      if ((p - origin).squaredNorm() <= r2) candidates.push_back({static_cast<int>(n), i});
    }
  }
  if (candidates.empty()) throw ConfigError("sensor sees no surfaces at frame " + std::to_string(t));

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x10000000ULL + static_cast<std::uint64_t>(t)));
  const std::size_t n_points = static_cast<std::size_t>(cfg.points_per_frame);
  std::vector<std::size_t> chosen;
  chosen.reserve(n_points);
  {
    std::vector<std::size_t> idx(candidates.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const std::size_t take = std::min(n_points, idx.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    // Fewer visible sites than requested points: resample with replacement.
    std::uniform_int_distribution<std::size_t> any(0, candidates.size() - 1);
    while (chosen.size() < n_points) chosen.push_back(any(rng));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(n_points);
  const int d = cfg.feature_dim;
  MultiModalFrame frame;
  frame.t = t;
  frame.gt.resize(n_points);
  frame.instance.resize(n_points);
  Points3d world_pts(n, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Candidate& c = candidates[chosen[static_cast<std::size_t>(i)]];
    const Instance& inst = world.instances[static_cast<std::size_t>(c.instance)];
    Eigen::RowVector3d p = inst.sites.row(c.site) + inst.velocity.transpose() * dt;
    if (cfg.site_jitter > 0) {
      p += cfg.site_jitter * Eigen::RowVector3d(normal(rng), normal(rng), normal(rng));
    }
    world_pts.row(i) = p;
    frame.gt[static_cast<std::size_t>(i)] = inst.cls;
    frame.instance[static_cast<std::size_t>(i)] = inst.id;
  }
  frame.points = transform_points(world_pts, true_pose.inverse());

  const ShiftSegment& segment = spec.shift.at(t);
  for (auto m : kModalities) {
    const Corruption& corr = segment.modality[index_of(m)];
    const double base = cfg.noise_sigma[index_of(m)];
    const double sigma = std::sqrt(base * base + corr.extra_sigma * corr.extra_sigma);
    std::mt19937_64 frng(mix_seed(cfg.seed, (index_of(m) + 2ULL) * 0x100000000ULL + static_cast<std::uint64_t>(t)));
    std::bernoulli_distribution drop(corr.drop_prob);
    RowMatrixXd feat(n, d);
    const RowMatrixXd& proto = world.prototype(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      feat.row(i) = proto.row(frame.gt[static_cast<std::size_t>(i)]);
      if (sigma > 0) {
        for (int j = 0; j < d; ++j) feat(i, j) += sigma * normal(frng);
      }
      if (corr.bias.size() == d) feat.row(i) += corr.bias.transpose();
      if (corr.drop_prob > 0) {
        for (int j = 0; j < d; ++j) {
          if (drop(frng)) feat(i, j) = 0.0;
        }
      }
    }
    (m == Modality::k2D ? frame.feat2d : frame.feat3d) = std::move(feat);
  }

  frame.pose = true_pose;
  if (spec.pose_noise) {
    std::mt19937_64 prng(mix_seed(cfg.seed, 0x905e0000ULL + static_cast<std::uint64_t>(t)));
    std::normal_distribution<double> tn(0.0, spec.pose_noise_translation);
    std::normal_distribution<double> rn(0.0, spec.pose_noise_rotation_deg * kDegToRad);
    const Eigen::Vector3d axis_angle(rn(prng), rn(prng), rn(prng));
    const double angle = axis_angle.norm();
    const Eigen::Matrix3d rot =
        angle > 0 ? Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix() : Eigen::Matrix3d::Identity();
    frame.pose = true_pose * Pose(rot, Eigen::Vector3d(tn(prng), tn(prng), tn(prng)));
  }
  return frame;
}

}  // namespace latte
