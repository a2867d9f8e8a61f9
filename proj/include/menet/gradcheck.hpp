#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "menet/autodiff.hpp"

namespace menet {

using ScalarFn64 = std::function<Var<double>(Tape<double>&, Var<double>)>;

struct GradcheckOptions {
  double step = 1e-3;
  double tol = 1e-4;
  /// Inputs with more elements than this are checked on a random sample.
  std::size_t full_limit = 512;
  std::size_t sample_count = 64;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<std::size_t> failing;
  bool passed = true;
};

/// Compares the autodiff gradient of a scalar function with central
/// differences, coordinate by coordinate. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8).
GradcheckReport gradcheck(const ScalarFn64& f, const Tensor64& x,
                          const GradcheckOptions& options = {});

}  // namespace menet
