#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geoadapt::net {

struct GradCheckCase {
  int instance = 0;
  std::string loss;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Compares every analytic parameter gradient against central finite
// differences of the forward-only loss, in double precision, on random small
// model instances. Checks the class, pseudo-label, rotation-mixup and
// location losses separately and their weighted composite.
GradCheckReport run_gradient_checks(std::uint64_t seed = 2024,
                                    int instances = 20, double step = 1e-5,
                                    double tolerance = 1e-4);

}  // namespace geoadapt::net
