#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "geoadapt/geom.hpp"
#include "geoadapt/rng.hpp"

namespace geoadapt::selfsup {

// Two farthest-point-sampled subsets of one cloud, independently rotated by
// quarter turns about x (part a) and y (part b), concatenated a-then-b.
// label_a in {1..4} encodes the x quarter-step count + 1; label_b in {5..8}
// encodes the y quarter-step count + 5.
struct RotationMixupSample {
  geom::PointCloud mixed_cloud;
  double alpha = 0.0;
  int label_a = 0;
  int label_b = 0;
  std::size_t part_a_size = 0;  // points [0, part_a_size) belong to part a
};

// Cloud with one occupied voxel's points replaced by isotropic Gaussian
// draws around the voxel center. curvature_cost is the fraction of the
// cloud's total curvature carried by the replaced points.
struct DistortionSample {
  geom::PointCloud distorted_cloud;
  int location_label = 0;       // voxel index in [0, k^3)
  double curvature_cost = 0.0;
};

// Draw order: alpha, seed index a, seed index b, quarter steps a, quarter
// steps b. alpha is uniform on [alpha_min, alpha_max]; part sizes are
// floor(alpha*m) and floor((1-alpha)*m), clamped to at least one point each.
RotationMixupSample make_rotation_mixup(const geom::PointCloud& cloud,
                                        double alpha_min, double alpha_max,
                                        Rng& rng);

inline RotationMixupSample make_rotation_mixup(const geom::PointCloud& cloud,
                                               Rng& rng) {
  return make_rotation_mixup(cloud, 0.1, 0.9, rng);
}

// Chooses one occupied voxel uniformly and replaces its points in place with
// draws from N(center, sigma^2 I). `curvature` must be the per-point
// curvature of `cloud` itself (precomputed so callers can cache it). When the
// cloud carries no curvature at all, the cost falls back to the replaced
// fraction of points.
DistortionSample make_distortion_sample(const geom::PointCloud& cloud,
                                        std::span<const double> curvature,
                                        int grid_k, double sigma, Rng& rng);

// Convenience overload computing the curvature internally.
DistortionSample make_distortion_sample(const geom::PointCloud& cloud,
                                        int grid_k, double sigma,
                                        std::size_t curvature_k, Rng& rng);

}  // namespace geoadapt::selfsup
