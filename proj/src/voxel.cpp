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

#include "latte/voxel.hpp"

#include <algorithm>
#include <numeric>

#include "latte/geometry.hpp"

namespace latte {

MergedCloud aggregate_window(std::span<const MultiModalFrame* const> frames, std::int64_t query_frame, int window) {
  const MultiModalFrame* query = nullptr;
  std::vector<const MultiModalFrame*> selected;
  for (const MultiModalFrame* f : frames) {
    if (f == nullptr) continue;
    if (f->t == query_frame) query = f;
    const std::int64_t gap = f->t > query_frame ? f->t - query_frame : query_frame - f->t;
    if (gap <= window) selected.push_back(f);
  }
  if (query == nullptr) throw ConfigError("query frame " + std::to_string(query_frame) + " missing from buffer");
  std::sort(selected.begin(), selected.end(), [](auto* a, auto* b) { return a->t < b->t; });

  MergedCloud cloud;
  cloud.query_frame = query_frame;
  Eigen::Index total = 0;
  for (const auto* f : selected) total += f->size();
  cloud.points.resize(total, 3);
  cloud.origin.reserve(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  for (const auto* f : selected) {
    if (f->t == query_frame) {
      cloud.points.middleRows(row, f->size()) = f->points;
    } else {
      cloud.points.middleRows(row, f->size()) = transform_points(f->points, relative_pose(query->pose, f->pose));
    }
    for (Eigen::Index g = 0; g < f->size(); ++g) cloud.origin.push_back({f->t, static_cast<std::int32_t>(g)});
    row += f->size();
  }
  return cloud;
}

std::int64_t VoxelGrid::find(const VoxelKey& key) const {
  auto it = lookup_.find(key);
  return it == lookup_.end() ? -1 : it->second;
}

VoxelGrid voxelize(const MergedCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0)) throw ConfigError("voxel size must be positive");
  VoxelGrid grid;
  grid.voxel_size_ = voxel_size;
  const Eigen::Index n = cloud.size();

  // Group through the hash table, then renumber voxels in key order.
  std::vector<VoxelKey> unsorted;
  std::vector<std::int32_t> provisional(static_cast<std::size_t>(n));
  std::unordered_map<VoxelKey, std::int32_t, VoxelKeyHash> table;
  table.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index g = 0; g < n; ++g) {
    const VoxelKey key = voxel_key(cloud.points(g, 0), cloud.points(g, 1), cloud.points(g, 2), voxel_size);
    auto [it, inserted] = table.try_emplace(key, static_cast<std::int32_t>(unsorted.size()));
    if (inserted) unsorted.push_back(key);
    provisional[static_cast<std::size_t>(g)] = it->second;
  }
  std::vector<std::int32_t> order(unsorted.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) { return unsorted[a] < unsorted[b]; });
  std::vector<std::int32_t> rank(unsorted.size());
  for (std::size_t k = 0; k < order.size(); ++k) rank[static_cast<std::size_t>(order[k])] = static_cast<std::int32_t>(k);

  grid.keys_.resize(unsorted.size());
  for (std::size_t k = 0; k < order.size(); ++k) grid.keys_[k] = unsorted[static_cast<std::size_t>(order[k])];
  grid.point_voxel_.resize(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counts(unsorted.size() + 1, 0);
  for (std::size_t g = 0; g < provisional.size(); ++g) {
    const std::int32_t v = rank[static_cast<std::size_t>(provisional[g])];
    grid.point_voxel_[g] = v;
    ++counts[static_cast<std::size_t>(v) + 1];
  }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  grid.offsets_ = counts;
  grid.point_index_.resize(static_cast<std::size_t>(n));
  std::vector<std::int64_t> cursor(counts.begin(), counts.end() - 1);
  for (std::size_t g = 0; g < grid.point_voxel_.size(); ++g) {
    grid.point_index_[static_cast<std::size_t>(cursor[static_cast<std::size_t>(grid.point_voxel_[g])]++)] =
        static_cast<std::int32_t>(g);
  }
  grid.lookup_.reserve(grid.keys_.size());
  for (std::size_t k = 0; k < grid.keys_.size(); ++k) grid.lookup_.emplace(grid.keys_[k], static_cast<std::int32_t>(k));
  return grid;
}

std::vector<STVoxel> build_st_voxels(const VoxelGrid& grid, const MergedCloud& cloud, const PredictionFrame& student,
                                     const PredictionLookup& teachers, const WindowConfig& windows) {
  const std::int64_t i = cloud.query_frame;
  if (student.t != i) throw ConfigError("student predictions do not belong to the query frame");
  // Validate counts per contributing frame once.
  {
    std::int64_t current = 0;
    Eigen::Index count = 0;
    auto check = [&](std::int64_t frame, Eigen::Index n) {
      const PredictionFrame* p = teachers(frame);
      if (p == nullptr) throw ConfigError("missing teacher predictions for frame " + std::to_string(frame));
      if (p->probs2d.rows() != n || p->probs3d.rows() != n) {
        throw ConfigError("prediction/point count mismatch in frame " + std::to_string(frame));
      }
      if (frame == i && (student.probs2d.rows() != n || student.probs3d.rows() != n)) {
        throw ConfigError("student prediction/point count mismatch in frame " + std::to_string(frame));
      }
    };
    for (const auto& o : cloud.origin) {
      if (o.frame != current) {
        if (count > 0) check(current, count);
        current = o.frame;
        count = 0;
      }
      ++count;
    }
    if (count > 0) check(current, count);
  }

  const std::size_t nw = windows.sizes.size();
  std::vector<STVoxel> out;
  out.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    STVoxel v;
    v.key = grid.keys()[k];
    v.refs.resize(nw);
    bool any = false;
    for (std::int32_t g : grid.members(k)) {
      const PointRef& o = cloud.origin[static_cast<std::size_t>(g)];
      if (o.frame == i) v.query.push_back(o.index);
      const std::int64_t gap = o.frame > i ? o.frame - i : i - o.frame;
      for (std::size_t d = 0; d < nw; ++d) {
        if (gap <= windows.sizes[d]) {
          v.refs[d].push_back(o);
          any = true;
        }
      }
    }
    if (any) out.push_back(std::move(v));
  }
  return out;
}

RowMatrixXd gather_rows(const RowMatrixXd& probs, std::span<const std::int32_t> rows) {
  RowMatrixXd out(static_cast<Eigen::Index>(rows.size()), probs.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = probs.row(rows[r]);
  return out;
}

RowMatrixXd gather_refs(const PredictionLookup& teachers, std::span<const PointRef> refs, Modality m) {
  if (refs.empty()) return {};
  const PredictionFrame* first = teachers(refs.front().frame);
  RowMatrixXd out(static_cast<Eigen::Index>(refs.size()), first->probs(m).cols());
  std::int64_t cached_frame = refs.front().frame;
  const PredictionFrame* cached = first;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (refs[r].frame != cached_frame) {
      cached_frame = refs[r].frame;
      cached = teachers(cached_frame);
    }
    out.row(static_cast<Eigen::Index>(r)) = cached->probs(m).row(refs[r].index);
  }
  return out;
}

}  // namespace latte
