#include <doctest.h>

#include "menet/autodiff.hpp"
#include "menet/errors.hpp"
#include "menet/gradcheck.hpp"
#include "menet/gradcheck_suite.hpp"
#include "menet/losses.hpp"
#include "test_util.hpp"

using namespace menet;

TEST_CASE("backward of frobenius_sq and mean") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor64(Shape{2}, {3, 4}), true);
  tape.backward(frobenius_sq(x));
  CHECK(tape.grad(x) == Tensor64(Shape{2}, {6, 8}));

  Tape<double> t2;
  auto y = t2.leaf(Tensor64(Shape{5}, 2.0), true);
  t2.backward(mean(y));
  const Tensor64 gy = t2.grad(y);
  for (double g : gy.data()) CHECK(g == doctest::Approx(0.2));
}

TEST_CASE("fan-out accumulates") {
  Tape<float> tape;
  auto x = tape.leaf(Tensor(Shape{3}, {1, 2, 3}), true);
  tape.backward(sum(add(x, x)));
  CHECK(tape.grad(x) == Tensor(Shape{3}, 2.0f));
}

TEST_CASE("backward rejects non-scalar and foreign roots") {
  Tape<float> tape;
  auto x = tape.leaf(Tensor(Shape{3}, 1.0f), true);
  CHECK_THROWS_AS(tape.backward(relu(x)), ShapeError);
  Tape<float> other;
  auto y = other.leaf(Tensor(Shape{1}, 1.0f), true);
  CHECK_THROWS(tape.backward(y));
}

TEST_CASE("gradient shape equals value shape for every reachable leaf") {
  Rng rng(1);
  Tape<float> tape;
  auto x = tape.leaf(test::random_tensor(rng, Shape{1, 2, 4, 4}), true);
  auto k = tape.leaf(test::random_tensor(rng, Shape{3, 2, 3, 3}), true);
  auto b = tape.leaf(test::random_tensor(rng, Shape{3}), true);
  auto y = mean(relu(conv2d(x, k, std::optional<Var<float>>(b), 1)));
  tape.backward(y);
  CHECK(tape.grad(x).shape() == x.shape());
  CHECK(tape.grad(k).shape() == k.shape());
  CHECK(tape.grad(b).shape() == b.shape());
}

TEST_CASE("repeated sweeps on one tape are independent") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor64(Shape{2}, {1, 2}), true);
  auto f = sum(mul(x, x));
  auto g = sum(mul(x, 3.0));
  tape.backward(f);
  CHECK(tape.grad(x) == Tensor64(Shape{2}, {2, 4}));
  tape.backward(g);
  CHECK(tape.grad(x) == Tensor64(Shape{2}, {3, 3}));
  tape.backward(f);
  CHECK(tape.grad(x) == Tensor64(Shape{2}, {2, 4}));
}

TEST_CASE("linearity of gradients") {
  Rng rng(2);
  const Tensor64 x0 = test::random_tensor<double>(rng, Shape{1, 2, 4, 4});
  const Tensor64 k0 = test::random_tensor<double>(rng, Shape{2, 2, 3, 3});
  auto f = [&](Tape<double>& t, Var<double> x) {
    return frobenius_sq(conv2d(x, t.constant(k0), std::optional<Var<double>>{}, 1));
  };
  auto g = [&](Tape<double>&, Var<double> x) { return mean(sigmoid(x)); };
  const double a = 0.7, b = -2.5;
  Tape<double> t1;
  auto x1 = t1.leaf(x0, true);
  t1.backward(add(mul(f(t1, x1), a), mul(g(t1, x1), b)));
  const Tensor64 combined = t1.grad(x1);
  Tape<double> t2;
  auto x2 = t2.leaf(x0, true);
  t2.backward(f(t2, x2));
  const Tensor64 gf = t2.grad(x2);
  t2.backward(g(t2, x2));
  const Tensor64 gg = t2.grad(x2);
  for (std::size_t i = 0; i < combined.numel(); ++i) {
    CHECK(combined[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-6));
  }
}

TEST_CASE("truncated sweep gives the exact gradient of a leaf consumed late") {
  Rng rng(3);
  Tape<double> tape;
  auto x = tape.leaf(test::random_tensor<double>(rng, Shape{4}), true);
  auto h = sigmoid(x);
  auto w = tape.leaf(test::random_tensor<double>(rng, Shape{4}), true);
  auto y = sum(mul(mul(h, w), w));
  tape.backward(y);
  const Tensor64 full = tape.grad(w);
  tape.backward(y, tape.first_consumer(w.id));
  CHECK(tape.grad(w) == full);
}

TEST_CASE("gradcheck examples") {
  Rng rng(4);
  const Tensor64 x = test::random_tensor<double>(rng, Shape{3, 4});
  auto rep = gradcheck([](Tape<double>&, Var<double> v) { return frobenius_sq(v); }, x);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(rep.checked == 12);

  const Tensor64 clean = test::random_tensor<double>(rng, Shape{1, 3, 4, 4}, 0.5, 1.0);
  const Tensor64 restored = test::random_tensor<double>(rng, Shape{1, 3, 4, 4}, 0.0, 0.5);
  auto lp = gradcheck(
      [&](Tape<double>& t, Var<double> b) { return pixel_loss(t.constant(clean), b); }, restored);
  CHECK(lp.passed);

  // conv -> relu -> mean at a point with every pre-activation away from 0.
  const Tensor64 k = test::random_tensor<double>(rng, Shape{2, 3, 3, 3});
  ScalarFn64 f = [&](Tape<double>& t, Var<double> v) {
    return mean(relu(conv2d(v, t.constant(k), std::optional<Var<double>>{}, 1)));
  };
  Tensor64 point = test::random_tensor<double>(rng, Shape{1, 3, 4, 4});
  for (int i = 0; i < 200; ++i) {
    Tape<double> t;
    (void)f(t, t.constant(point));
    if (t.relu_margin() > 1e-2) break;
    point = test::random_tensor<double>(rng, Shape{1, 3, 4, 4});
  }
  CHECK(gradcheck(f, point).passed);
}

TEST_CASE("gradcheck reports a wrong gradient") {
  // f(x) = sum(x*x) computed through a custom op whose backward is off by 2x.
  ScalarFn64 bad = [](Tape<double>& t, Var<double> x) {
    Tensor64 v = x.value();
    double s = 0.0;
    for (double e : v.data()) s += e * e;
    const std::size_t id = x.id;
    return t.record(Tensor64::scalar(s), {id},
                    [id](Tape<double>& tape, const Tensor64& g) {
                      Tensor64 d = tape.value(id);
                      for (double& e : d.data()) e *= 4.0 * g.item();
                      tape.accumulate(id, std::move(d));
                    },
                    "bad_square");
  };
  const auto rep = gradcheck(bad, Tensor64(Shape{3}, {1, 2, 3}));
  CHECK_FALSE(rep.passed);
  CHECK(rep.failing.size() == 3);
}

TEST_CASE("module gradient suite passes without the model case") {
  SuiteOptions opts;
  opts.include_model = false;
  const auto entries = run_gradcheck_suite(opts);
  CHECK(entries.size() == gradcheck_case_names(false).size());
  for (const auto& e : entries) {
    INFO(e.name << " max rel err " << e.max_rel_error);
    CHECK(e.passed);
    CHECK(e.trials >= 5);
  }
}
