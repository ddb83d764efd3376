#pragma once

#include <stdexcept>
#include <string>

namespace nhflow {

// Rejected input: shape mismatch, bad chart, out-of-range index, bad sample.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A metric block or Hessian failed the per-node inversion threshold.
class SingularMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterative solver ran out of iterations.
class ConvergenceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nhflow
