#include "geoadapt/selfsup.hpp"

#include <algorithm>
#include <cmath>

#include "geoadapt/errors.hpp"

namespace geoadapt::selfsup {

RotationMixupSample make_rotation_mixup(const geom::PointCloud& cloud,
                                        double alpha_min, double alpha_max,
                                        Rng& rng) {
  const std::size_t m = cloud.size();
  if (m < 8) {
    throw ArgumentError("make_rotation_mixup: cloud must have >= 8 points");
  }
  if (!(alpha_min > 0.0 && alpha_max < 1.0 && alpha_min <= alpha_max)) {
    throw ArgumentError("make_rotation_mixup: need 0 < alpha_min <= alpha_max < 1");
  }

  RotationMixupSample out;
  out.alpha = rng.uniform(alpha_min, alpha_max);

  // floor can zero a part for m < 10 at extreme alpha; clamp to keep both
  // rotation labels learnable
  const auto md = static_cast<double>(m);
  std::size_t n_a = static_cast<std::size_t>(std::floor(out.alpha * md));
  std::size_t n_b = static_cast<std::size_t>(std::floor((1.0 - out.alpha) * md));
  n_a = std::clamp<std::size_t>(n_a, 1, m - 1);
  n_b = std::clamp<std::size_t>(n_b, 1, m - n_a);

  const std::size_t seed_a = rng.uniform_index(m);
  const std::size_t seed_b = rng.uniform_index(m);
  const int steps_a = static_cast<int>(rng.uniform_index(4));
  const int steps_b = static_cast<int>(rng.uniform_index(4));
  out.label_a = steps_a + 1;
  out.label_b = steps_b + 5;
  out.part_a_size = n_a;

  const auto idx_a = geom::farthest_point_sample(cloud, n_a, seed_a);
  const auto idx_b = geom::farthest_point_sample(cloud, n_b, seed_b);

  geom::PointCloud part_a, part_b;
  part_a.points.reserve(n_a);
  part_b.points.reserve(n_b);
  for (std::size_t i : idx_a) part_a.points.push_back(cloud[i]);
  for (std::size_t i : idx_b) part_b.points.push_back(cloud[i]);

  part_a = geom::rotate_quarter(part_a, geom::Axis::X, steps_a);
  part_b = geom::rotate_quarter(part_b, geom::Axis::Y, steps_b);

  out.mixed_cloud.points.reserve(n_a + n_b);
  out.mixed_cloud.points.insert(out.mixed_cloud.points.end(),
                                part_a.points.begin(), part_a.points.end());
  out.mixed_cloud.points.insert(out.mixed_cloud.points.end(),
                                part_b.points.begin(), part_b.points.end());
  return out;
}

DistortionSample make_distortion_sample(const geom::PointCloud& cloud,
                                        std::span<const double> curvature,
                                        int grid_k, double sigma, Rng& rng) {
  if (curvature.size() != cloud.size()) {
    throw ArgumentError(
        "make_distortion_sample: curvature size must match cloud size");
  }
  if (!(sigma > 0.0)) {
    throw ArgumentError("make_distortion_sample: sigma must be positive");
  }

  const geom::VoxelGrid grid = geom::voxel_partition(cloud, grid_k);
  const int chosen =
      grid.occupied[rng.uniform_index(grid.occupied.size())];
  const geom::Vec3 center = grid.center(chosen);

  DistortionSample out;
  out.location_label = chosen;
  out.distorted_cloud = cloud;

  double replaced_curv = 0.0;
  double total_curv = 0.0;
  std::size_t replaced_count = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    total_curv += curvature[i];
    if (grid.assignment[i] != chosen) continue;
    replaced_curv += curvature[i];
    ++replaced_count;
    geom::Vec3 q;
    for (int c = 0; c < 3; ++c) q[c] = rng.normal(center[c], sigma);
    out.distorted_cloud[i] = q;
  }

  if (total_curv > 1e-12) {
    out.curvature_cost = replaced_curv / total_curv;
  } else {
    // no curvature anywhere (planar/collinear cloud): uniform cost
    out.curvature_cost =
        static_cast<double>(replaced_count) / static_cast<double>(cloud.size());
  }
  return out;
}

DistortionSample make_distortion_sample(const geom::PointCloud& cloud,
                                        int grid_k, double sigma,
                                        std::size_t curvature_k, Rng& rng) {
  const std::vector<double> curv = geom::pca_curvature(cloud, curvature_k);
  return make_distortion_sample(cloud, curv, grid_k, sigma, rng);
}

}  // namespace geoadapt::selfsup
