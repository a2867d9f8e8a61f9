#pragma once

// Task weighting strategies: fixed coefficients, gradient-balanced (GB) and
// loss-balanced (LB). GB and LB both give every enabled task the weight
// 1 - share, where share is its fraction of the summed gradient norms (GB)
// or of the summed losses (LB). Weights are plain numbers; they never carry
// gradient.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "menet/losses.hpp"

namespace menet {

enum class Strategy { kFixed, kGradientBalanced, kLossBalanced };

std::string to_string(Strategy s);
/// "fixed", "gb" or "lb".
Strategy parse_strategy(const std::string& name);

using TaskMask = std::array<bool, kTaskCount>;
inline constexpr TaskMask kAllTasks{true, true, true};

struct TaskWeights {
  std::array<double, kTaskCount> w{0.0, 0.0, 0.0};
  Strategy strategy = Strategy::kFixed;
  std::string reference_layer;  ///< gb only

  double operator[](Task t) const { return w[static_cast<std::size_t>(t)]; }
};

/// Denominators below this fall back to uniform weights of 1.
inline constexpr double kBalanceGuard = 1e-12;

/// w_t = 1 - v_t / sum(v). For two or more values with a usable denominator
/// the result sums to exactly size - 1 under left-to-right double addition;
/// the largest-share weight absorbs the last rounding ulp. A single value
/// gets weight 1.
std::vector<double> balanced_weights(std::span<const double> values);

TaskWeights fixed_weights(const std::array<double, kTaskCount>& w);

/// Loss-balanced weights over the enabled tasks; disabled tasks get 0.
TaskWeights lb_weights(const std::array<double, kTaskCount>& losses,
                       const TaskMask& enabled = kAllTasks);

/// Gradient-balanced weights from per-task gradient L2 norms at the
/// reference layer.
TaskWeights gb_weights(const std::array<double, kTaskCount>& grad_norms,
                       const TaskMask& enabled = kAllTasks,
                       std::string reference_layer = {});

/// L2 norm, accumulated in double.
double l2_norm(const Tensor& t);

}  // namespace menet
