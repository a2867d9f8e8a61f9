#include <doctest.h>

#include <cmath>
#include <sstream>

#include "menet/errors.hpp"
#include "menet/metrics.hpp"
#include "test_util.hpp"

using namespace menet;

TEST_CASE("ssim examples") {
  Rng rng(1);
  const Tensor64 x = test::random_tensor<double>(rng, Shape{3, 16, 16}, 0.0, 1.0);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  // constant 0 vs constant 1: C1 / (1 + C1)
  const double v = ssim(Tensor64(Shape{3, 12, 12}, 0.0), Tensor64(Shape{3, 12, 12}, 1.0));
  CHECK(v == doctest::Approx(1e-4 / (1.0 + 1e-4)).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Tensor64(Shape{3, 8, 8}), Tensor64(Shape{3, 8, 8})), ShapeError);
  CHECK_THROWS_AS(ssim(Tensor64(Shape{3, 12, 12}), Tensor64(Shape{3, 12, 13})), ShapeError);
}

TEST_CASE("ssim symmetry and range") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor64 a = test::random_tensor<double>(rng, Shape{3, 14, 15}, 0.0, 1.0);
    Tensor64 b = a;
    for (double& e : b.data()) e = std::clamp(e + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    const double s = ssim(a, b);
    CHECK(s == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(s < 1.0);
    CHECK(s > -1.0);
  }
  const Tensor f(Shape{1, 3, 12, 12}, 0.25f);
  CHECK(ssim(f, f) == doctest::Approx(1.0));
}

TEST_CASE("psnr examples") {
  const Tensor64 a(Shape{3, 4, 4}, 0.0), b(Shape{3, 4, 4}, 0.1), c(Shape{3, 4, 4}, 1.0);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, c) == doctest::Approx(0.0));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, b, 255.0) > psnr(a, b));
  CHECK_THROWS_AS(psnr(a, Tensor64(Shape{3, 4, 5})), ShapeError);
}

TEST_CASE("psnr is symmetric and invariant to a joint shift") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor64 a = test::random_tensor<double>(rng, Shape{3, 8, 8}, 0.0, 0.5);
    const Tensor64 b = test::random_tensor<double>(rng, Shape{3, 8, 8}, 0.0, 0.5);
    Tensor64 a2 = a, b2 = b;
    for (double& e : a2.data()) e += 0.25;
    for (double& e : b2.data()) e += 0.25;
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-12));
    CHECK(psnr(a, b) == doctest::Approx(psnr(a2, b2)).epsilon(1e-9));
  }
}

TEST_CASE("corpus evaluation and CSV") {
  const Tensor zero(Shape{3, 12, 12}, 0.0f);
  const Tensor tenth(Shape{3, 12, 12}, 0.1f);
  const Tensor hundredth(Shape{3, 12, 12}, 0.01f);
  std::vector<RestoredPair> pairs{{"b", zero, hundredth}, {"a", zero, tenth}, {"c", zero, zero}};
  const MetricSummary s = evaluate_corpus(pairs);
  REQUIRE(s.rows.size() == 3);
  CHECK(s.rows[0].id == "a");
  CHECK(s.rows[1].id == "b");
  CHECK(s.rows[2].id == "c");
  CHECK(std::isinf(s.rows[2].psnr_db));
  CHECK(s.inf_excluded == 1);
  // 20 dB and 40 dB; float storage of 0.1 and 0.01 costs a little precision.
  CHECK(s.mean_psnr == doctest::Approx(30.0).epsilon(1e-6));

  std::ostringstream csv;
  write_metrics_csv(csv, s);
  const std::string text = csv.str();
  CHECK(text.rfind("id,psnr_db,ssim\n", 0) == 0);
  CHECK(text.find("\nc,inf,") != std::string::npos);
  CHECK(text.find("#mean,") != std::string::npos);
  CHECK(text.find("# 1 inf excluded") != std::string::npos);

  CHECK_THROWS_AS(evaluate_corpus({}), ConfigError);
  const MetricSummary all_inf = evaluate_corpus({{"x", zero, zero}});
  CHECK(std::isnan(all_inf.mean_psnr));
}

TEST_CASE("mean psnr over finite rows") {
  const Tensor a(Shape{3, 12, 12}, 0.0f);
  // MSE 1e-2 -> 20 dB, MSE 1e-3 -> 30 dB
  Tensor b(Shape{3, 12, 12}, 0.1f);
  Tensor c(Shape{3, 12, 12});
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = static_cast<float>(std::sqrt(1e-3));
  const MetricSummary s = evaluate_corpus({{"1", a, b}, {"2", a, c}});
  CHECK(s.mean_psnr == doctest::Approx(25.0).epsilon(1e-6));
  CHECK(s.inf_excluded == 0);
}

TEST_CASE("number formatting") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(25.0) == "25");
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_number(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}
