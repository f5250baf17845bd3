#pragma once

#include "fvig/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fvig {

struct OpCheckResult {
  std::string op;
  GradCheckReport report;
};

/// Names accepted by run_grad_suite, in execution order.
std::vector<std::string> grad_suite_ops();

/// Finite-difference checks of every differentiable operation, each block of
/// the network and the micro model. Every op is scored through a scalar
/// loss sum(op(x) * w) with fixed random weights w, so no output direction is
/// left unchecked. `only` restricts the run to one op; an unknown name throws
/// ConfigError.
std::vector<OpCheckResult> run_grad_suite(double tol = 1e-4, std::uint64_t seed = 0,
                                          const std::string& only = "");

}  // namespace fvig
