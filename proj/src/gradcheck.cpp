#include "menet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace menet {

namespace {

double evaluate(const ScalarFn64& f, const Tensor64& x) {
  Tape<double> tape;
  Var<double> root = f(tape, tape.constant(x));
  return root.value().item();
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn64& f, const Tensor64& x,
                          const GradcheckOptions& options) {
  Tape<double> tape;
  Var<double> input = tape.leaf(x, true);
  Var<double> root = f(tape, input);
  tape.backward(root);
  const Tensor64 analytic = tape.grad(input);

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (x.numel() > options.full_limit) {
    std::mt19937_64 rng(options.seed);
    // Partial Fisher-Yates: the first sample_count entries are the sample.
    const std::size_t take = std::min(options.sample_count, coords.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng() % (coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(take);
    std::sort(coords.begin(), coords.end());
  }

  GradcheckReport report;
  Tensor64 probe = x;
  for (std::size_t i : coords) {
    const double original = probe[i];
    probe[i] = original + options.step;
    const double up = evaluate(f, probe);
    probe[i] = original - options.step;
    const double down = evaluate(f, probe);
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (!(rel < options.tol)) report.failing.push_back(i);
    ++report.checked;
  }
  report.passed = report.failing.empty();
  return report;
}

}  // namespace menet
