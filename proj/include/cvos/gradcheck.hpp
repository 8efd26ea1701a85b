#pragma once

#include <string>
#include <vector>

namespace cvos {

struct GradCheckEntry {
  std::string name;
  double error = 0;
  double tolerance = 1e-4;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const;
};

// Central finite-difference suite: every differentiable operation, the routing
// and loss compositions, and sampled coordinates of every parameter group of
// the desk-preset model loss.
GradCheckReport run_gradient_checks(bool include_model, uint64_t seed);

}  // namespace cvos
