#include "menet/losses.hpp"

#include <string>

namespace menet {

namespace {

constexpr float kSobelX[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
constexpr float kSobelY[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

template <typename T>
void require_image_pair(Var<T> clean, Var<T> restored, const char* op) {
  if (clean.shape() != restored.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(clean.shape()) + " vs " +
                     shape_to_string(restored.shape()));
  }
  if (clean.value().rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " +
                     shape_to_string(clean.shape()));
  }
}

Tensor64 as_batch(const Tensor64& x) {
  if (x.rank() == 3) return x.reshaped(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  return x;
}

template <typename Fn>
double evaluate_pair(const Tensor64& clean, const Tensor64& restored, Fn&& fn) {
  Tape<double> tape;
  Var<double> b = tape.constant(as_batch(clean));
  Var<double> r = tape.constant(as_batch(restored));
  return fn(b, r).value().item();
}

}  // namespace

EdgeLossNetwork::EdgeLossNetwork(std::size_t channels)
    : channels_(channels), kernel_(Shape{2 * channels, channels, 3, 3}) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < 9; ++i) {
      kernel_.at(2 * c, c, i / 3, i % 3) = kSobelX[i];
      kernel_.at(2 * c + 1, c, i / 3, i % 3) = kSobelY[i];
    }
  }
}

template <typename T>
Var<T> EdgeLossNetwork::apply(Var<T> x) const {
  Var<T> k = x.tape->constant(kernel_.template cast<T>());
  return conv2d(x, k, std::optional<Var<T>>{}, 1);
}

template <typename T>
Var<T> pixel_loss(Var<T> clean, Var<T> restored) {
  require_image_pair(clean, restored, "pixel_loss");
  const auto count = static_cast<T>(clean.value().numel());
  return div(frobenius_sq(sub(clean, restored)), count);
}

template <typename T>
Var<T> edge_aware_loss(Var<T> clean, Var<T> restored, const EdgeLossNetwork& phi) {
  require_image_pair(clean, restored, "edge_aware_loss");
  Var<T> diff = sub(phi.apply(clean), phi.apply(restored));
  return div(frobenius_sq(diff), static_cast<T>(diff.value().numel()));
}

template <typename T>
Var<T> texture_matching_loss(Var<T> clean, Var<T> restored,
                             const TextureLossConfig& cfg) {
  require_image_pair(clean, restored, "texture_matching_loss");
  if (cfg.patch < 1) throw ConfigError("texture_matching_loss: patch size must be >= 1");
  const std::size_t batch = clean.value().dim(0);
  Var<T> fb = unfold_patches(clean, cfg.patch);
  Var<T> fr = unfold_patches(restored, cfg.patch);
  const std::size_t rows = fb.value().dim(1);
  const auto inv_m = T{1} / static_cast<T>(fb.value().dim(2));
  const auto inv_rows_sq = T{1} / static_cast<T>(rows * rows);
  std::optional<Var<T>> total;
  for (std::size_t n = 0; n < batch; ++n) {
    Var<T> f_clean = batch_item(fb, n);
    Var<T> f_rest = batch_item(fr, n);
    Var<T> g_clean = mul(matmul(f_clean, transpose(f_clean)), inv_m);
    Var<T> g_rest = mul(matmul(f_rest, transpose(f_rest)), inv_m);
    Var<T> item = mul(frobenius_sq(sub(g_clean, g_rest)), inv_rows_sq);
    total = total ? add(*total, item) : item;
  }
  return div(*total, static_cast<T>(batch));
}

double pixel_loss(const Tensor64& clean, const Tensor64& restored) {
  return evaluate_pair(clean, restored, [](Var<double> b, Var<double> r) {
    return pixel_loss(b, r);
  });
}

double edge_aware_loss(const Tensor64& clean, const Tensor64& restored) {
  const EdgeLossNetwork phi(as_batch(clean).dim(1));
  return evaluate_pair(clean, restored, [&](Var<double> b, Var<double> r) {
    return edge_aware_loss(b, r, phi);
  });
}

double texture_matching_loss(const Tensor64& clean, const Tensor64& restored,
                             const TextureLossConfig& cfg) {
  return evaluate_pair(clean, restored, [&](Var<double> b, Var<double> r) {
    return texture_matching_loss(b, r, cfg);
  });
}

LossReport total_loss(const std::array<double, kTaskCount>& losses,
                      const std::array<double, kTaskCount>& weights) {
  for (double w : weights) {
    if (!(w >= 0.0)) {
      throw ConfigError("total_loss: task weights must be non-negative, got " +
                        std::to_string(w));
    }
  }
  LossReport report;
  report.l_p = losses[0];
  report.l_e = losses[1];
  report.l_t = losses[2];
  report.w_p = weights[0];
  report.w_e = weights[1];
  report.w_t = weights[2];
  report.total = weights[0] * losses[0] + weights[1] * losses[1] +
                 weights[2] * losses[2];
  return report;
}

template <typename T>
Var<T> weighted_total(const std::array<std::optional<Var<T>>, kTaskCount>& losses,
                      const std::array<double, kTaskCount>& weights) {
  std::optional<Var<T>> total;
  for (std::size_t i = 0; i < kTaskCount; ++i) {
    if (weights[i] < 0.0) throw ConfigError("weighted_total: negative task weight");
    if (!losses[i] || weights[i] == 0.0) continue;
    Var<T> term = mul(*losses[i], static_cast<T>(weights[i]));
    total = total ? add(*total, term) : term;
  }
  if (!total) throw ConfigError("weighted_total: every task has zero weight");
  return *total;
}

#define MENET_INSTANTIATE(T)                                                   \
  template Var<T> EdgeLossNetwork::apply<T>(Var<T>) const;                     \
  template Var<T> pixel_loss<T>(Var<T>, Var<T>);                               \
  template Var<T> edge_aware_loss<T>(Var<T>, Var<T>, const EdgeLossNetwork&);  \
  template Var<T> texture_matching_loss<T>(Var<T>, Var<T>,                     \
                                           const TextureLossConfig&);          \
  template Var<T> weighted_total<T>(                                           \
      const std::array<std::optional<Var<T>>, kTaskCount>&,                    \
      const std::array<double, kTaskCount>&);

MENET_INSTANTIATE(float)
MENET_INSTANTIATE(double)

#undef MENET_INSTANTIATE

}  // namespace menet
