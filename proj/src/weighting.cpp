#include "menet/weighting.hpp"

#include <algorithm>
#include <cmath>

namespace menet {

namespace {

double left_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

TaskWeights masked_balance(const std::array<double, kTaskCount>& values,
                           const TaskMask& enabled, Strategy strategy,
                           const char* what) {
  std::vector<double> active;
  for (std::size_t i = 0; i < kTaskCount; ++i) {
    if (!enabled[i]) continue;
    if (!(values[i] >= 0.0) || !std::isfinite(values[i])) {
      throw NumericError(std::string(what) + " must be finite and non-negative");
    }
    active.push_back(values[i]);
  }
  const std::vector<double> w = balanced_weights(active);
  TaskWeights out;
  out.strategy = strategy;
  for (std::size_t i = 0, j = 0; i < kTaskCount; ++i) {
    out.w[i] = enabled[i] ? w[j++] : 0.0;
  }
  return out;
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFixed: return "fixed";
    case Strategy::kGradientBalanced: return "gb";
    case Strategy::kLossBalanced: return "lb";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "fixed") return Strategy::kFixed;
  if (name == "gb") return Strategy::kGradientBalanced;
  if (name == "lb") return Strategy::kLossBalanced;
  throw ConfigError("unknown weighting strategy '" + name + "' (fixed|gb|lb)");
}

std::vector<double> balanced_weights(std::span<const double> values) {
  const std::size_t count = values.size();
  if (count == 0) return {};
  if (count == 1) return {1.0};
  double total = 0.0;
  for (double v : values) total += v;
  std::vector<double> w(count, 1.0);
  if (total < kBalanceGuard) return w;

  std::size_t dominant = 0;
  for (std::size_t i = 0; i < count; ++i) {
    w[i] = 1.0 - values[i] / total;
    if (values[i] > values[dominant]) dominant = i;
  }
  const double target = static_cast<double>(count - 1);
  for (int iter = 0; iter < 8; ++iter) {
    const double s = left_sum(w);
    if (s == target) break;
    w[dominant] = std::clamp(w[dominant] + (target - s), 0.0, 1.0);
  }
  return w;
}

TaskWeights fixed_weights(const std::array<double, kTaskCount>& w) {
  for (double v : w) {
    if (!(v >= 0.0)) {
      throw ConfigError("fixed weights must be non-negative, got " +
                        std::to_string(v));
    }
  }
  TaskWeights out;
  out.w = w;
  out.strategy = Strategy::kFixed;
  return out;
}

TaskWeights lb_weights(const std::array<double, kTaskCount>& losses,
                       const TaskMask& enabled) {
  return masked_balance(losses, enabled, Strategy::kLossBalanced, "task losses");
}

TaskWeights gb_weights(const std::array<double, kTaskCount>& grad_norms,
                       const TaskMask& enabled, std::string reference_layer) {
  TaskWeights out = masked_balance(grad_norms, enabled,
                                   Strategy::kGradientBalanced, "gradient norms");
  out.reference_layer = std::move(reference_layer);
  return out;
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace menet
