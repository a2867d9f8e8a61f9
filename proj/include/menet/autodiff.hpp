#pragma once

// Reverse-mode automatic differentiation over BasicTensor.
//
// A Tape records every op applied during one forward evaluation. Nodes are
// appended in execution order, so node ids are already a topological order
// and backward() is a single reverse sweep. Ops on inputs that do not require
// gradients produce constant nodes and record no backward rule.

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "menet/tensor.hpp"

namespace menet {

template <typename T>
class Tape;

/// Handle to a node on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

template <typename T>
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node. Parameters and differentiated inputs use requires_grad=true.
  Var<T> leaf(BasicTensor<T> value, bool requires_grad = false);
  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  /// Reverse sweep from a scalar root. Clears gradients from any previous
  /// sweep first, so one tape can be swept from several roots in turn.
  /// Nodes with id < stop_below are not visited; their gradients are then
  /// incomplete, but any leaf consumed only by visited nodes is exact.
  void backward(Var<T> root, std::size_t stop_below = 0);

  /// Gradient of a node after backward(). Zero-filled if nothing reached it.
  BasicTensor<T> grad(Var<T> v) const;
  bool has_grad(Var<T> v) const;

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Id of the earliest op that reads node `id`, or size() if none does.
  std::size_t first_consumer(std::size_t id) const;

  /// Smallest |input| seen by any relu on this tape (kink distance).
  T relu_margin() const noexcept { return relu_margin_; }

  /// Reject non-finite op outputs and exact-zero divisors. On by default in
  /// debug builds.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }
  bool check_finite() const noexcept { return check_finite_; }

  // Op-implementation interface.
  using BackwardFn = std::function<void(Tape&, const BasicTensor<T>& out_grad)>;
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward, const char* op_name);
  void accumulate(std::size_t id, BasicTensor<T> g);
  BasicTensor<T>& grad_buffer(std::size_t id);
  void note_relu_margin(T margin) noexcept {
    if (margin < relu_margin_) relu_margin_ = margin;
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool check_finite_;
  T relu_margin_ = std::numeric_limits<T>::infinity();
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

enum class Elementwise { kAdd, kSub, kMul, kDiv };
enum class Activation { kRelu, kSigmoid };
enum class Reduction { kSum, kMean, kGlobalAvgPool, kFrobeniusSq };

// Elementwise ops. Shapes must match exactly; no broadcasting.
template <typename T>
Var<T> elementwise(Var<T> a, Var<T> b, Elementwise kind);
template <typename T>
Var<T> elementwise(Var<T> a, std::type_identity_t<T> b, Elementwise kind);

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return elementwise(a, b, Elementwise::kAdd); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return elementwise(a, b, Elementwise::kSub); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return elementwise(a, b, Elementwise::kMul); }
template <typename T> Var<T> div(Var<T> a, Var<T> b) { return elementwise(a, b, Elementwise::kDiv); }
template <typename T> Var<T> add(Var<T> a, std::type_identity_t<T> b) { return elementwise(a, b, Elementwise::kAdd); }
template <typename T> Var<T> sub(Var<T> a, std::type_identity_t<T> b) { return elementwise(a, b, Elementwise::kSub); }
template <typename T> Var<T> mul(Var<T> a, std::type_identity_t<T> b) { return elementwise(a, b, Elementwise::kMul); }
template <typename T> Var<T> div(Var<T> a, std::type_identity_t<T> b) { return elementwise(a, b, Elementwise::kDiv); }

/// Stride-1 cross-correlation with symmetric zero padding.
/// input [N,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias,
              std::size_t padding);

template <typename T>
Var<T> activation(Var<T> x, Activation kind);
template <typename T> Var<T> relu(Var<T> x) { return activation(x, Activation::kRelu); }
template <typename T> Var<T> sigmoid(Var<T> x) { return activation(x, Activation::kSigmoid); }

/// Space-to-channel: [N,C,H,W] -> [N,C*r*r,H/r,W/r] with output channel
/// c*r*r + dy*r + dx for intra-block offset (dy, dx).
template <typename T>
Var<T> desubpixel(Var<T> x, std::size_t ratio);
/// Channel-to-space, exact inverse of desubpixel.
template <typename T>
Var<T> subpixel(Var<T> x, std::size_t ratio);

// Tape-free rearrangements used by the ops above.
template <typename T>
BasicTensor<T> desubpixel_tensor(const BasicTensor<T>& x, std::size_t ratio);
template <typename T>
BasicTensor<T> subpixel_tensor(const BasicTensor<T>& x, std::size_t ratio);

/// sum/mean/frobenius_sq return shape [1]; global_avg_pool maps
/// [N,C,H,W] -> [N,C,1,1].
template <typename T>
Var<T> reduce(Var<T> x, Reduction kind);
template <typename T> Var<T> sum(Var<T> x) { return reduce(x, Reduction::kSum); }
template <typename T> Var<T> mean(Var<T> x) { return reduce(x, Reduction::kMean); }
template <typename T> Var<T> global_avg_pool(Var<T> x) { return reduce(x, Reduction::kGlobalAvgPool); }
template <typename T> Var<T> frobenius_sq(Var<T> x) { return reduce(x, Reduction::kFrobeniusSq); }

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose(Var<T> a);

/// x [N,C,H,W] times per-channel gate [N,C,1,1].
template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> gate);

/// Pointwise clamp; gradient passes only strictly inside (lo, hi).
template <typename T>
Var<T> clamp(Var<T> x, std::type_identity_t<T> lo, std::type_identity_t<T> hi);

/// Non-overlapping KxK patch unroll: [N,C,H,W] -> [N, C*K*K, (H/K)*(W/K)].
/// Row c*K*K + ky*K + kx, column py*(W/K) + px.
template <typename T>
Var<T> unfold_patches(Var<T> x, std::size_t patch);

/// Slice the leading axis: [N, ...] -> [...] of item n.
template <typename T>
Var<T> batch_item(Var<T> x, std::size_t n);

}  // namespace menet
