#include "geoadapt/geom.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "geoadapt/errors.hpp"

namespace geoadapt::geom {

namespace {

void require_nonempty(const PointCloud& cloud, const char* who) {
  if (cloud.empty()) {
    throw ArgumentError(std::string(who) + ": cloud must contain points");
  }
}

}  // namespace

PointCloud normalize_unit_ball(const PointCloud& cloud) {
  require_nonempty(cloud, "normalize_unit_ball");
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : cloud.points) {
    if (!p.allFinite()) {
      throw ArgumentError("normalize_unit_ball: non-finite coordinate");
    }
    centroid += p;
  }
  centroid /= static_cast<double>(cloud.size());

  double max_sq = 0.0;
  for (const Vec3& p : cloud.points) {
    max_sq = std::max(max_sq, (p - centroid).squaredNorm());
  }
  if (max_sq == 0.0) {
    throw DegenerateCloudError(
        "normalize_unit_ball: all points coincide, scale is zero");
  }
  const double inv_scale = 1.0 / std::sqrt(max_sq);

  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    out.points.emplace_back((p - centroid) * inv_scale);
  }
  return out;
}

PointCloud jitter(const PointCloud& cloud, double sigma, double clip,
                  Rng& rng) {
  if (!(sigma > 0.0)) throw ArgumentError("jitter: sigma must be positive");
  if (!(clip >= sigma)) throw ArgumentError("jitter: clip must be >= sigma");
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    Vec3 q;
    for (int c = 0; c < 3; ++c) {
      q[c] = p[c] + std::clamp(rng.normal(0.0, sigma), -clip, clip);
    }
    out.points.push_back(q);
  }
  return out;
}

PointCloud rotate_quarter(const PointCloud& cloud, Axis axis, int steps) {
  if (steps < 0 || steps > 3) {
    throw ArgumentError("rotate_quarter: steps must be in {0,1,2,3}");
  }
  static constexpr int kCos[4] = {1, 0, -1, 0};
  static constexpr int kSin[4] = {0, 1, 0, -1};
  const double c = kCos[steps];
  const double s = kSin[steps];

  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    Vec3 q = p;
    if (axis == Axis::X) {
      // plane (y, z), clockwise from +x
      q[1] = p[1] * c + p[2] * s;
      q[2] = -p[1] * s + p[2] * c;
    } else {
      // plane (z, x), clockwise from +y
      q[2] = p[2] * c + p[0] * s;
      q[0] = -p[2] * s + p[0] * c;
    }
    out.points.push_back(q);
  }
  return out;
}

PointCloud rotate_z(const PointCloud& cloud, double theta) {
  if (!std::isfinite(theta)) {
    throw ArgumentError("rotate_z: theta must be finite");
  }
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    // plane (x, y), clockwise from +z
    out.points.emplace_back(p[0] * c + p[1] * s, -p[0] * s + p[1] * c, p[2]);
  }
  return out;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t n,
                                               std::size_t seed_index) {
  const std::size_t m = cloud.size();
  require_nonempty(cloud, "farthest_point_sample");
  if (n < 1 || n > m) {
    throw ArgumentError("farthest_point_sample: need 1 <= n <= point count");
  }
  if (seed_index >= m) {
    throw ArgumentError("farthest_point_sample: seed index out of range");
  }

  std::vector<std::size_t> selected;
  selected.reserve(n);
  selected.push_back(seed_index);

  // min squared distance from each point to the selected set
  std::vector<double> min_sq(m);
  for (std::size_t i = 0; i < m; ++i) {
    min_sq[i] = (cloud[i] - cloud[seed_index]).squaredNorm();
  }

  while (selected.size() < n) {
    std::size_t best = 0;
    double best_sq = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (min_sq[i] > best_sq) {  // strict: lowest index wins ties
        best_sq = min_sq[i];
        best = i;
      }
    }
    selected.push_back(best);
    for (std::size_t i = 0; i < m; ++i) {
      min_sq[i] = std::min(min_sq[i], (cloud[i] - cloud[best]).squaredNorm());
    }
  }
  return selected;
}

std::vector<std::size_t> knn(const PointCloud& cloud, std::size_t query_index,
                             std::size_t k) {
  const std::size_t m = cloud.size();
  require_nonempty(cloud, "knn");
  if (query_index >= m) throw ArgumentError("knn: query index out of range");
  if (k < 1 || k >= m) {
    throw ArgumentError("knn: need 1 <= k <= point count - 1");
  }

  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    if (i == query_index) continue;
    dist.emplace_back((cloud[i] - cloud[query_index]).squaredNorm(), i);
  }
  std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
  std::sort(dist.begin(), dist.begin() + k);

  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

std::vector<double> pca_curvature(const PointCloud& cloud, std::size_t k) {
  const std::size_t m = cloud.size();
  if (k < 3) throw ArgumentError("pca_curvature: k must be >= 3");
  if (m < k + 1) {
    throw ArgumentError("pca_curvature: cloud must have at least k+1 points");
  }

  std::vector<double> curvature(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::vector<std::size_t> nbrs = knn(cloud, i, k);

    Vec3 mean = cloud[i];
    for (std::size_t j : nbrs) mean += cloud[j];
    mean /= static_cast<double>(k + 1);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    {
      const Vec3 d = cloud[i] - mean;
      cov += d * d.transpose();
    }
    for (std::size_t j : nbrs) {
      const Vec3 d = cloud[j] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(k + 1);

    const double trace = cov.trace();
    if (trace <= 1e-300) {
      curvature[i] = 0.0;  // coincident neighborhood
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const double lambda_min = eig.eigenvalues()[0];  // ascending order
    curvature[i] = std::clamp(lambda_min / trace, 0.0, 1.0 / 3.0);
  }
  return curvature;
}

Vec3 VoxelGrid::center(int voxel) const {
  const int k = cells_per_axis;
  const int ix = voxel % k;
  const int iy = (voxel / k) % k;
  const int iz = voxel / (k * k);
  const double cell = 2.0 / k;
  return Vec3(-1.0 + (ix + 0.5) * cell, -1.0 + (iy + 0.5) * cell,
              -1.0 + (iz + 0.5) * cell);
}

int VoxelGrid::index_of(const Vec3& p, int cells_per_axis) {
  const int k = cells_per_axis;
  int idx[3];
  for (int c = 0; c < 3; ++c) {
    const int i = static_cast<int>(std::floor((p[c] + 1.0) / 2.0 * k));
    idx[c] = std::clamp(i, 0, k - 1);
  }
  return idx[0] + k * idx[1] + k * k * idx[2];
}

VoxelGrid voxel_partition(const PointCloud& cloud, int cells_per_axis) {
  require_nonempty(cloud, "voxel_partition");
  if (cells_per_axis < 1) {
    throw ArgumentError("voxel_partition: cells_per_axis must be positive");
  }
  constexpr double kTol = 1e-9;

  VoxelGrid grid;
  grid.cells_per_axis = cells_per_axis;
  grid.assignment.resize(cloud.size());

  std::vector<bool> seen(static_cast<std::size_t>(grid.voxel_count()), false);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud[i];
    for (int c = 0; c < 3; ++c) {
      if (!(p[c] >= -1.0 - kTol && p[c] <= 1.0 + kTol)) {
        throw ContractError("voxel_partition: point " + std::to_string(i) +
                            " outside [-1,1]^3, cloud is not normalized");
      }
    }
    const int v = VoxelGrid::index_of(p, cells_per_axis);
    grid.assignment[i] = v;
    seen[static_cast<std::size_t>(v)] = true;
  }
  for (int v = 0; v < grid.voxel_count(); ++v) {
    if (seen[static_cast<std::size_t>(v)]) grid.occupied.push_back(v);
  }
  return grid;
}

}  // namespace geoadapt::geom
