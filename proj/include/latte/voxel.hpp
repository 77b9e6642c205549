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
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "latte/types.hpp"

namespace latte {

/// Integer voxel coordinate from componentwise floor division.
struct VoxelKey {
  std::int64_t x = 0, y = 0, z = 0;

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

template <typename Scalar>
VoxelKey voxel_key(Scalar x, Scalar y, Scalar z, Scalar size) {
  using std::floor;
  return {static_cast<std::int64_t>(floor(x / size)), static_cast<std::int64_t>(floor(y / size)),
          static_cast<std::int64_t>(floor(z / size))};
}

/// Identifies a point by its frame index and row within that frame.
struct PointRef {
  std::int64_t frame = 0;
  std::int32_t index = 0;

  friend bool operator==(const PointRef&, const PointRef&) = default;
  friend auto operator<=>(const PointRef&, const PointRef&) = default;
};

struct MergedCloud {
  std::int64_t query_frame = 0;
  Points3d points;
  std::vector<PointRef> origin;

  Eigen::Index size() const { return points.rows(); }
};

/// Voxels sorted by key; members of voxel k are point_index[offsets[k] .. offsets[k+1]).
class VoxelGrid {
 public:
  VoxelGrid() = default;

  double voxel_size() const { return voxel_size_; }
  std::size_t size() const { return keys_.size(); }
  const std::vector<VoxelKey>& keys() const { return keys_; }
  std::span<const std::int32_t> members(std::size_t voxel) const {
    return {point_index_.data() + offsets_[voxel], point_index_.data() + offsets_[voxel + 1]};
  }
  /// Voxel index for a key, or -1.
  std::int64_t find(const VoxelKey& key) const;
  /// Voxel of each merged point.
  const std::vector<std::int32_t>& point_voxel() const { return point_voxel_; }

  friend VoxelGrid voxelize(const MergedCloud& cloud, double voxel_size);

 private:
  double voxel_size_ = 0.0;
  std::vector<VoxelKey> keys_;
  std::vector<std::int64_t> offsets_{0};
  std::vector<std::int32_t> point_index_;
  std::vector<std::int32_t> point_voxel_;
  std::unordered_map<VoxelKey, std::int32_t, VoxelKeyHash> lookup_;
};

/// Merges every available frame with |t_j - i| <= window into frame i's
/// coordinates. Points are ordered by ascending frame, then original row.
MergedCloud aggregate_window(std::span<const MultiModalFrame* const> frames, std::int64_t query_frame, int window);

VoxelGrid voxelize(const MergedCloud& cloud, double voxel_size);

/// Query rows are frame-i points (row indices into that frame); reference
/// sets are nested per window size.
struct STVoxel {
  VoxelKey key;
  std::vector<std::int32_t> query;
  std::vector<std::vector<PointRef>> refs;

  std::size_t num_windows() const { return refs.size(); }
};

/// Lookup of prediction frames by frame index.
using PredictionLookup = std::function<const PredictionFrame*(std::int64_t)>;

std::vector<STVoxel> build_st_voxels(const VoxelGrid& grid, const MergedCloud& cloud, const PredictionFrame& student,
                                     const PredictionLookup& teachers, const WindowConfig& windows);

/// Gathers rows of a prediction matrix (student query rows).
RowMatrixXd gather_rows(const RowMatrixXd& probs, std::span<const std::int32_t> rows);
/// Gathers teacher rows for a reference set of one modality.
RowMatrixXd gather_refs(const PredictionLookup& teachers, std::span<const PointRef> refs, Modality m);

}  // namespace latte
