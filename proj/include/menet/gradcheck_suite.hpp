#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "menet/gradcheck.hpp"

namespace menet {

struct SuiteOptions {
  std::size_t trials = 5;
  double step = 1e-3;
  double tol = 1e-4;
  /// The end-to-end model check runs on a 3x8x8 input with its own step and
  /// tolerance; with hundreds of relus a 1e-3 step nearly always straddles a
  /// kink somewhere.
  bool include_model = true;
  double model_step = 1e-5;
  double model_tol = 1e-3;
  std::uint64_t seed = 2024;
};

struct SuiteEntry {
  std::string name;
  std::size_t trials = 0;
  double step = 0.0;
  double tol = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

std::vector<std::string> gradcheck_case_names(bool include_model = true);

/// Every differentiable op, the three losses, channel attention, the
/// residual block and (optionally) the full model, each on `trials` random
/// inputs. Inputs that put a relu pre-activation within 10 steps of its kink
/// are redrawn.
std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options = {});

}  // namespace menet
