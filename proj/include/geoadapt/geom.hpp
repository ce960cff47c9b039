#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <vector>

#include "geoadapt/rng.hpp"

namespace geoadapt::geom {

using Vec3 = Eigen::Vector3d;

// One object shape as an ordered set of 3D points.
struct PointCloud {
  std::vector<Vec3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
  Vec3& operator[](std::size_t i) { return points[i]; }
};

// Axis selector for the exact quarter-turn rotations.
enum class Axis { X, Y };

// Centers the cloud on its centroid and scales so the farthest point sits on
// the unit sphere. Throws DegenerateCloudError when all points coincide.
PointCloud normalize_unit_ball(const PointCloud& cloud);

// Per-coordinate Gaussian noise clamped to [-clip, clip].
PointCloud jitter(const PointCloud& cloud, double sigma, double clip, Rng& rng);

// Exact rotation by steps * 90 degrees, clockwise as seen from the positive
// end of the axis. Uses integer matrices, so four turns restore the input
// bit for bit.
PointCloud rotate_quarter(const PointCloud& cloud, Axis axis, int steps);

// Rotation about +z by theta, clockwise as seen from +z.
PointCloud rotate_z(const PointCloud& cloud, double theta);

// Greedy farthest point sampling. Returns n distinct indices starting at
// seed_index; each next pick maximizes the minimum distance to the selected
// set, ties broken by the lowest index.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t n,
                                               std::size_t seed_index);

// Indices of the k nearest neighbors of the query point (query excluded),
// ascending by distance, ties broken by the lowest index.
std::vector<std::size_t> knn(const PointCloud& cloud, std::size_t query_index,
                             std::size_t k);

// Surface-variation curvature per point: lambda_min / (l0 + l1 + l2) of the
// covariance of the point and its k nearest neighbors. Values lie in
// [0, 1/3]; fully degenerate neighborhoods map to 0.
std::vector<double> pca_curvature(const PointCloud& cloud, std::size_t k);

// Uniform k x k x k partition of the cube [-1,1]^3.
struct VoxelGrid {
  int cells_per_axis = 0;
  std::vector<int> assignment;  // per-point voxel index in [0, k^3)
  std::vector<int> occupied;    // sorted ids of non-empty voxels

  int voxel_count() const {
    return cells_per_axis * cells_per_axis * cells_per_axis;
  }
  Vec3 center(int voxel) const;

  // Voxel id for a normalized point: ix + k*iy + k^2*iz with each axis index
  // clamp(floor((c+1)/2*k), 0, k-1).
  static int index_of(const Vec3& p, int cells_per_axis);
};

// Assigns every point of a unit-ball-normalized cloud to a voxel. Throws
// ContractError when a coordinate leaves [-1,1] by more than 1e-9.
VoxelGrid voxel_partition(const PointCloud& cloud, int cells_per_axis);

}  // namespace geoadapt::geom
