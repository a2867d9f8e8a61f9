#pragma once

#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "menet/tensor.hpp"

namespace menet {

/// 10 log10(max^2 / MSE) over all channels jointly; +inf when MSE == 0.
double psnr(const Tensor64& x, const Tensor64& y, double max_val = 1.0);
double psnr(const Tensor& x, const Tensor& y, double max_val = 1.0);

/// Mean SSIM over channels and valid window positions: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.
/// Accepts [C,H,W] or [1,C,H,W].
double ssim(const Tensor64& x, const Tensor64& y);
double ssim(const Tensor& x, const Tensor& y);

struct MetricRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricSummary {
  std::vector<MetricRow> rows;  ///< sorted by id
  /// Mean over finite PSNR rows; NaN when every row is infinite.
  double mean_psnr = std::numeric_limits<double>::quiet_NaN();
  double mean_ssim = 0.0;
  std::size_t inf_excluded = 0;
};

struct RestoredPair {
  std::string id;
  Tensor restored;
  Tensor truth;
};

/// Throws ConfigError on an empty list.
MetricSummary evaluate_corpus(const std::vector<RestoredPair>& pairs);

/// Shortest round-trip decimal; "inf", "-inf" and "nan" for non-finite values.
std::string format_number(double value);

/// id,psnr_db,ssim header, one row per image, then "#mean,<psnr>,<ssim>" and,
/// when rows were excluded, "# <k> inf excluded".
void write_metrics_csv(std::ostream& out, const MetricSummary& summary);

}  // namespace menet
