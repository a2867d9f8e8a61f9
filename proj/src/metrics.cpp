#include "menet/metrics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

namespace menet {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Tensor64 as_image(const Tensor64& x) {
  if (x.rank() == 4 && x.dim(0) == 1) {
    return x.reshaped(Shape{x.dim(1), x.dim(2), x.dim(3)});
  }
  return x;
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable 'valid' filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h,
                                 std::size_t w,
                                 const std::array<double, kWindow>& g) {
  const std::size_t ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * plane[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Tensor64& x, const Tensor64& y, double max_val) {
  if (x.shape() != y.shape()) {
    throw ShapeError("psnr: shape mismatch " + shape_to_string(x.shape()) +
                     " vs " + shape_to_string(y.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

double psnr(const Tensor& x, const Tensor& y, double max_val) {
  return psnr(x.cast<double>(), y.cast<double>(), max_val);
}

double ssim(const Tensor64& x_in, const Tensor64& y_in) {
  if (x_in.shape() != y_in.shape()) {
    throw ShapeError("ssim: shape mismatch " + shape_to_string(x_in.shape()) +
                     " vs " + shape_to_string(y_in.shape()));
  }
  const Tensor64 x = as_image(x_in);
  const Tensor64 y = as_image(y_in);
  if (x.rank() != 3) {
    throw ShapeError("ssim: expected a single [C,H,W] image, got " +
                     shape_to_string(x_in.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < kWindow || w < kWindow) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the 11x11 window; use at least 11x11");
  }
  const auto g = gaussian_window();
  const std::size_t plane = h * w;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> a(x.raw() + ch * plane, x.raw() + (ch + 1) * plane);
    std::vector<double> b(y.raw() + ch * plane, y.raw() + (ch + 1) * plane);
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, g);
    const auto mu_b = filter_valid(b, h, w, g);
    const auto e_aa = filter_valid(aa, h, w, g);
    const auto e_bb = filter_valid(bb, h, w, g);
    const auto e_ab = filter_valid(ab, h, w, g);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double var_a = e_aa[i] - ma * ma;
      const double var_b = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
      const double den = (ma * ma + mb * mb + kC1) * (var_a + var_b + kC2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double ssim(const Tensor& x, const Tensor& y) {
  return ssim(x.cast<double>(), y.cast<double>());
}

MetricSummary evaluate_corpus(const std::vector<RestoredPair>& pairs) {
  if (pairs.empty()) throw ConfigError("evaluate_corpus: no image pairs");
  MetricSummary summary;
  for (const RestoredPair& p : pairs) {
    const Tensor64 restored = p.restored.cast<double>();
    const Tensor64 truth = p.truth.cast<double>();
    summary.rows.push_back({p.id, psnr(restored, truth), ssim(restored, truth)});
  }
  std::stable_sort(summary.rows.begin(), summary.rows.end(),
                   [](const MetricRow& a, const MetricRow& b) { return a.id < b.id; });
  double psnr_sum = 0.0, ssim_sum = 0.0;
  std::size_t finite = 0;
  for (const MetricRow& row : summary.rows) {
    ssim_sum += row.ssim;
    if (std::isinf(row.psnr_db)) {
      ++summary.inf_excluded;
    } else {
      psnr_sum += row.psnr_db;
      ++finite;
    }
  }
  summary.mean_ssim = ssim_sum / static_cast<double>(summary.rows.size());
  if (finite > 0) summary.mean_psnr = psnr_sum / static_cast<double>(finite);
  return summary;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

void write_metrics_csv(std::ostream& out, const MetricSummary& summary) {
  out << "id,psnr_db,ssim\n";
  for (const MetricRow& row : summary.rows) {
    out << row.id << ',' << format_number(row.psnr_db) << ','
        << format_number(row.ssim) << '\n';
  }
  out << "#mean," << format_number(summary.mean_psnr) << ','
      << format_number(summary.mean_ssim) << '\n';
  if (summary.inf_excluded > 0) {
    out << "# " << summary.inf_excluded << " inf excluded\n";
  }
}

}  // namespace menet
