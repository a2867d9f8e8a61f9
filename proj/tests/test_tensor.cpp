#include <doctest.h>

#include "menet/autodiff.hpp"
#include "menet/errors.hpp"
#include "test_util.hpp"

using namespace menet;

namespace {

// Direct quadruple loop; the reference for the im2col implementation.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor* bias, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  Tensor out(Shape{n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long sy = static_cast<long>(y + dy) - static_cast<long>(pad);
                const long sx = static_cast<long>(xx + dx) - static_cast<long>(pad);
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w))
                  continue;
                acc += static_cast<double>(x.at(b, c, sy, sx)) * k.at(o, c, dy, dx);
              }
          out.at(b, o, y, xx) = static_cast<float>(acc);
        }
  return out;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t(Shape{2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(4.0f).item() == 4.0f);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(t.reshaped(Shape{3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped(Shape{4, 2}), ShapeError);
}

TEST_CASE("elementwise examples") {
  Tape<float> tape;
  auto a = tape.constant(Tensor(Shape{2}, {1, 2}));
  auto b = tape.constant(Tensor(Shape{2}, {3, 4}));
  CHECK(add(a, b).value() == Tensor(Shape{2}, {4, 6}));
  Rng rng(1);
  auto x = tape.constant(test::random_tensor(rng, Shape{3, 4}));
  CHECK(sub(x, x).value() == Tensor(Shape{3, 4}));
  auto h = tape.constant(Tensor(Shape{2}, {0.5f, 2.0f}));
  CHECK(mul(h, 2.0f).value() == Tensor(Shape{2}, {1.0f, 4.0f}));
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  Tape<float> tape;
  auto a = tape.constant(Tensor(Shape{2, 3}));
  auto b = tape.constant(Tensor(Shape{3, 2}));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("division by an exact zero is rejected when checking is on") {
  Tape<float> tape;
  tape.set_check_finite(true);
  auto a = tape.constant(Tensor(Shape{2}, {1, 2}));
  auto z = tape.constant(Tensor(Shape{2}, {1, 0}));
  CHECK_THROWS_AS(div(a, z), NumericError);
  CHECK_THROWS_AS(div(a, 0.0f), NumericError);
}

TEST_CASE("conv2d hand example: all-ones 3x3 with padding 1") {
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{1, 1, 3, 3}, 1.0f));
  auto k = tape.constant(Tensor(Shape{1, 1, 3, 3}, 1.0f));
  const Tensor y = conv2d(x, k, std::optional<Var<float>>{}, 1).value();
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.at(0, 0, 1, 1) == 9.0f);
  CHECK(y.at(0, 0, 0, 0) == 4.0f);
  CHECK(y.at(0, 0, 0, 2) == 4.0f);
  CHECK(y.at(0, 0, 2, 0) == 4.0f);
  CHECK(y.at(0, 0, 2, 2) == 4.0f);
  CHECK(y.at(0, 0, 0, 1) == 6.0f);
}

TEST_CASE("conv2d matches the naive loop") {
  Rng rng(3);
  for (std::size_t pad : {0u, 1u, 2u}) {
    const Tensor x = test::random_tensor(rng, Shape{2, 3, 6, 5});
    const Tensor k = test::random_tensor(rng, Shape{4, 3, 3, 3});
    const Tensor b = test::random_tensor(rng, Shape{4});
    Tape<float> tape;
    const Tensor y = conv2d(tape.constant(x), tape.constant(k),
                            std::optional<Var<float>>(tape.constant(b)), pad)
                         .value();
    const Tensor ref = naive_conv(x, k, &b, pad);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
  const Tensor x = test::random_tensor(rng, Shape{1, 4, 3, 3});
  const Tensor k1 = test::random_tensor(rng, Shape{5, 4, 1, 1});
  Tape<float> tape;
  const Tensor y = conv2d(tape.constant(x), tape.constant(k1), std::optional<Var<float>>{}, 0).value();
  const Tensor ref = naive_conv(x, k1, nullptr, 0);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("conv2d delta kernel copies the selected channel; zero kernel gives zero") {
  Rng rng(4);
  const Tensor x = test::random_tensor(rng, Shape{2, 3, 4, 4});
  Tensor k(Shape{1, 3, 1, 1});
  k[2] = 1.0f;
  Tape<float> tape;
  const Tensor y = conv2d(tape.constant(x), tape.constant(k), std::optional<Var<float>>{}, 0).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(n, 0, i, j) == x.at(n, 2, i, j));
  const Tensor z = conv2d(tape.constant(x), tape.constant(Tensor(Shape{2, 3, 3, 3})),
                          std::optional<Var<float>>(tape.constant(Tensor(Shape{2}))), 1)
                       .value();
  CHECK(z == Tensor(Shape{2, 2, 4, 4}));
}

TEST_CASE("conv2d errors") {
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{1, 3, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor(Shape{2, 2, 3, 3})), std::optional<Var<float>>{}, 1),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor(Shape{2, 3, 2, 2})), std::optional<Var<float>>{}, 1),
                  ShapeError);
  auto tiny = tape.constant(Tensor(Shape{1, 3, 2, 2}));
  CHECK_THROWS_AS(conv2d(tiny, tape.constant(Tensor(Shape{1, 3, 5, 5})), std::optional<Var<float>>{}, 0),
                  ShapeError);
}

TEST_CASE("activations") {
  Tape<float> tape;
  CHECK(relu(tape.constant(Tensor(Shape{3}, {-1, 0, 2}))).value() == Tensor(Shape{3}, {0, 0, 2}));
  CHECK(sigmoid(tape.constant(Tensor::scalar(0.0f))).value().item() == 0.5f);
  Tape<double> t64;
  for (double x : {14.0, 20.0, 50.0}) {
    const double s = sigmoid(t64.constant(Tensor64::scalar(x))).value().item();
    CHECK(1.0 - s < 1e-6);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("desubpixel and subpixel examples") {
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  const Tensor d = desubpixel(x, 2).value();
  CHECK(d == Tensor(Shape{1, 4, 1, 1}, {1, 2, 3, 4}));
  CHECK(subpixel(tape.constant(d), 2).value() == Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  Rng rng(5);
  const Tensor r = test::random_tensor(rng, Shape{2, 3, 4, 6});
  CHECK(desubpixel(tape.constant(r), 1).value() == r);
  CHECK(subpixel(tape.constant(r), 1).value() == r);
  CHECK_THROWS_AS(desubpixel(tape.constant(Tensor(Shape{1, 1, 3, 4})), 2), ShapeError);
  CHECK_THROWS_AS(subpixel(tape.constant(Tensor(Shape{1, 3, 2, 2})), 2), ShapeError);
}

TEST_CASE("desubpixel channel order is c*r*r + dy*r + dx") {
  Tensor x(Shape{1, 2, 4, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(i);
  const Tensor d = desubpixel_tensor(x, 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx)
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j)
            CHECK(d.at(0, c * 4 + dy * 2 + dx, i, j) == x.at(0, c, i * 2 + dy, j * 2 + dx));
}

TEST_CASE("subpixel and desubpixel are exact inverses") {
  Rng rng(6);
  for (std::size_t r : {1u, 2u, 3u}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor x = test::random_tensor(rng, Shape{2, 3, 6 * r, 3 * r}, -10.0, 10.0);
      CHECK(bit_identical(subpixel_tensor(desubpixel_tensor(x, r), r), x));
      const Tensor y = test::random_tensor(rng, Shape{1, 2 * r * r, 3, 2});
      CHECK(bit_identical(desubpixel_tensor(subpixel_tensor(y, r), r), y));
    }
  }
}

TEST_CASE("reductions") {
  Tape<float> tape;
  CHECK(frobenius_sq(tape.constant(Tensor(Shape{2}, {3, 4}))).value().item() == 25.0f);
  Tensor g(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    g[i] = 1.0f;
    g[4 + i] = 3.0f;
  }
  const Tensor p = global_avg_pool(tape.constant(g)).value();
  CHECK(p == Tensor(Shape{1, 2, 1, 1}, {1, 3}));
  CHECK(mean(tape.constant(Tensor(Shape{5}))).value().item() == 0.0f);
  CHECK(sum(tape.constant(Tensor(Shape{2, 2}, {1, 2, 3, 4}))).value().item() == 10.0f);
  CHECK_THROWS_AS(global_avg_pool(tape.constant(Tensor(Shape{2, 2}))), ShapeError);
}

TEST_CASE("matmul examples") {
  Tape<float> tape;
  auto eye = tape.constant(Tensor(Shape{2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  CHECK(matmul(eye, m).value() == Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  CHECK(matmul(eye, transpose(eye)).value() == Tensor(Shape{2, 2}, {1, 0, 0, 1}));
  auto row = tape.constant(Tensor(Shape{1, 2}, {1, 2}));
  auto col = tape.constant(Tensor(Shape{2, 1}, {3, 4}));
  CHECK(matmul(row, col).value().item() == 11.0f);
  CHECK_THROWS_AS(matmul(row, row), ShapeError);
}

TEST_CASE("clamp, scale_channels, unfold_patches and batch_item") {
  Tape<float> tape;
  CHECK(clamp(tape.constant(Tensor(Shape{3}, {-1, 0.5f, 2})), 0.0f, 1.0f).value() ==
        Tensor(Shape{3}, {0, 0.5f, 1}));
  Tensor x(Shape{1, 2, 1, 2}, {1, 2, 3, 4});
  Tensor gate(Shape{1, 2, 1, 1}, {2, 0.5f});
  CHECK(scale_channels(tape.constant(x), tape.constant(gate)).value() ==
        Tensor(Shape{1, 2, 1, 2}, {2, 4, 1.5f, 2}));
  Tensor img(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  const Tensor f = unfold_patches(tape.constant(img), 2).value();
  CHECK(f.shape() == Shape{1, 4, 4});
  // column 1 is the top-right patch: pixels 2,3,6,7
  CHECK(f[0 * 4 + 1] == 2.0f);
  CHECK(f[1 * 4 + 1] == 3.0f);
  CHECK(f[2 * 4 + 1] == 6.0f);
  CHECK(f[3 * 4 + 1] == 7.0f);
  CHECK_THROWS_AS(unfold_patches(tape.constant(Tensor(Shape{1, 1, 3, 4})), 2), ShapeError);
  Tensor batch(Shape{2, 2}, {1, 2, 3, 4});
  CHECK(batch_item(tape.constant(batch), 1).value() == Tensor(Shape{2}, {3, 4}));
}
