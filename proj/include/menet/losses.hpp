#pragma once

#include <array>
#include <optional>

#include "menet/autodiff.hpp"

namespace menet {

/// Fixed depthwise Sobel filters: channel c maps to outputs 2c (Gx) and
/// 2c+1 (Gy). Never trained.
class EdgeLossNetwork {
 public:
  explicit EdgeLossNetwork(std::size_t channels = 3);

  std::size_t channels() const noexcept { return channels_; }
  /// [2C, C, 3, 3]; cross-channel taps are zero.
  const Tensor& kernel() const noexcept { return kernel_; }

  /// phi(x): [N,C,H,W] -> [N,2C,H,W], zero padding 1.
  template <typename T>
  Var<T> apply(Var<T> x) const;

 private:
  std::size_t channels_;
  Tensor kernel_;
};

struct TextureLossConfig {
  std::size_t patch = 4;
};

/// ||B - b||_F^2 / (C H W), averaged over the batch.
template <typename T>
Var<T> pixel_loss(Var<T> clean, Var<T> restored);

/// ||phi(B) - phi(b)||_F^2 / (2C H W), averaged over the batch.
template <typename T>
Var<T> edge_aware_loss(Var<T> clean, Var<T> restored, const EdgeLossNetwork& phi);

/// Per image: F = KxK patch unroll in R^{CK^2 x M}, G = F F^T / M,
/// loss = ||G(B) - G(b)||_F^2 / (CK^2)^2; averaged over the batch.
template <typename T>
Var<T> texture_matching_loss(Var<T> clean, Var<T> restored,
                             const TextureLossConfig& cfg);

// Tensor-level conveniences; rank-3 [C,H,W] inputs are treated as N=1.
double pixel_loss(const Tensor64& clean, const Tensor64& restored);
double edge_aware_loss(const Tensor64& clean, const Tensor64& restored);
double texture_matching_loss(const Tensor64& clean, const Tensor64& restored,
                             const TextureLossConfig& cfg = {});

enum class Task : std::size_t { kPixel = 0, kEdge = 1, kTexture = 2 };
inline constexpr std::size_t kTaskCount = 3;

struct LossReport {
  double l_p = 0.0, l_e = 0.0, l_t = 0.0;
  double w_p = 0.0, w_e = 0.0, w_t = 0.0;
  double total = 0.0;
};

/// total = sum_i w_i * L_i. Throws ConfigError on a negative weight.
LossReport total_loss(const std::array<double, kTaskCount>& losses,
                      const std::array<double, kTaskCount>& weights);

/// Weighted sum on the tape. Weights are constants; zero-weight and absent
/// terms are skipped.
template <typename T>
Var<T> weighted_total(const std::array<std::optional<Var<T>>, kTaskCount>& losses,
                      const std::array<double, kTaskCount>& weights);

}  // namespace menet
