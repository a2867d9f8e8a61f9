#include <doctest.h>

#include <cmath>
#include <limits>

#include "menet/errors.hpp"
#include "menet/weighting.hpp"
#include "test_util.hpp"

using namespace menet;

namespace {

double left_sum(const std::array<double, kTaskCount>& w) { return w[0] + w[1] + w[2]; }

}  // namespace

TEST_CASE("loss-balanced hand cases") {
  const TaskWeights w = lb_weights({3.0, 1.0, 0.0});
  CHECK(std::abs(w.w[0] - 0.25) < 1e-12);
  CHECK(std::abs(w.w[1] - 0.75) < 1e-12);
  CHECK(std::abs(w.w[2] - 1.0) < 1e-12);
  CHECK(w.strategy == Strategy::kLossBalanced);

  const TaskWeights eq = lb_weights({0.2, 0.2, 0.2});
  for (double v : eq.w) CHECK(std::abs(v - 2.0 / 3.0) < 1e-12);
}

TEST_CASE("gradient-balanced two-task hand case") {
  const TaskWeights w = gb_weights({3.0, 1.0, 0.0}, {true, true, false}, "layer.k");
  CHECK(std::abs(w.w[0] - 0.25) < 1e-12);
  CHECK(std::abs(w.w[1] - 0.75) < 1e-12);
  CHECK(w.w[2] == 0.0);
  CHECK(w.w[0] + w.w[1] == 1.0);
  CHECK(w.reference_layer == "layer.k");
}

TEST_CASE("all-zero values fall back to uniform weights") {
  const TaskWeights w = lb_weights({0.0, 0.0, 0.0});
  for (double v : w.w) CHECK(v == 1.0);
  const TaskWeights tiny = gb_weights({1e-14, 1e-15, 0.0});
  for (double v : tiny.w) CHECK(v == 1.0);
}

TEST_CASE("a single enabled task gets weight 1") {
  const TaskWeights w = lb_weights({0.3, 5.0, 7.0}, {true, false, false});
  CHECK(w.w[0] == 1.0);
  CHECK(w.w[1] == 0.0);
  CHECK(w.w[2] == 0.0);
}

TEST_CASE("weights sum exactly to T-1 over random draws") {
  Rng rng(11);
  for (int trial = 0; trial < 20000; ++trial) {
    std::array<double, kTaskCount> v{};
    const double scale = std::pow(10.0, rng.uniform(-8.0, 6.0));
    for (double& x : v) x = scale * rng.uniform();
    if (trial % 7 == 0) v[trial % 3] = 0.0;
    const TaskWeights lb = lb_weights(v);
    CHECK(left_sum(lb.w) == 2.0);
    for (double x : lb.w) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    const TaskWeights gb = gb_weights(v, {true, true, false});
    CHECK(gb.w[0] + gb.w[1] == 1.0);
  }
}

TEST_CASE("larger values get smaller weights") {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<double, kTaskCount> v{rng.uniform(), rng.uniform(), rng.uniform()};
    const TaskWeights w = lb_weights(v);
    for (std::size_t i = 0; i < kTaskCount; ++i)
      for (std::size_t j = 0; j < kTaskCount; ++j)
        if (v[i] > v[j] + 1e-9) CHECK(w.w[i] <= w.w[j]);
  }
}

TEST_CASE("weights are scale invariant") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, kTaskCount> v{rng.uniform(), rng.uniform(), rng.uniform()};
    const double k = std::pow(10.0, rng.uniform(-4.0, 4.0));
    const TaskWeights a = lb_weights(v);
    const TaskWeights b = lb_weights({k * v[0], k * v[1], k * v[2]});
    for (std::size_t i = 0; i < kTaskCount; ++i) CHECK(std::abs(a.w[i] - b.w[i]) < 1e-12);
  }
}

TEST_CASE("invalid inputs") {
  CHECK_THROWS_AS(fixed_weights({1.0, -0.5, 0.0}), ConfigError);
  CHECK_THROWS_AS(lb_weights({1.0, -1.0, 0.0}), NumericError);
  CHECK_THROWS_AS(lb_weights({1.0, std::numeric_limits<double>::quiet_NaN(), 0.0}),
                  NumericError);
  CHECK_THROWS_AS(gb_weights({1.0, std::numeric_limits<double>::infinity(), 0.0}),
                  NumericError);
  // a disabled task's value is never inspected
  CHECK_NOTHROW(lb_weights({1.0, 2.0, std::numeric_limits<double>::quiet_NaN()},
                           {true, true, false}));
  CHECK(parse_strategy("gb") == Strategy::kGradientBalanced);
  CHECK(to_string(parse_strategy("lb")) == "lb");
  CHECK_THROWS_AS(parse_strategy("GB"), ConfigError);
}

TEST_CASE("balanced_weights on spans") {
  CHECK(balanced_weights(std::span<const double>{}).empty());
  const std::vector<double> one{4.0};
  CHECK(balanced_weights(one) == std::vector<double>{1.0});
  const std::vector<double> four{1.0, 1.0, 1.0, 1.0};
  const auto w = balanced_weights(four);
  double s = 0.0;
  for (double x : w) s += x;
  CHECK(s == 3.0);
  CHECK(l2_norm(Tensor(Shape{2}, {3.0f, 4.0f})) == 5.0);
}
