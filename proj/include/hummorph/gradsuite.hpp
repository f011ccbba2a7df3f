#pragma once

#include <string>
#include <vector>

#include "hummorph/gradcheck.hpp"

namespace hummorph {

struct GradSuiteEntry {
  std::string op;
  double max_err = 0;
  int instances = 0;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double max_err = 0;
  double seconds = 0;
  bool pass(double tol = 1e-4) const { return max_err < tol; }
};

// Central-difference verification of every operation with a backward rule,
// in 64-bit mode, on randomized small instances.
GradSuiteReport run_gradient_suite(int instances_per_op, uint64_t seed);

}  // namespace hummorph
