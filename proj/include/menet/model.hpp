#pragma once

// The de-raining network: a U-Net style encoder with two 2x desubpixel
// stages, a residual trunk with optional channel attention, and a subpixel
// decoder with additive skips. It predicts the rain layer and restores
// b = clamp(O - R, 0, 1).

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "menet/autodiff.hpp"

namespace menet {

struct ModelConfig {
  std::size_t base_channels = 16;
  std::size_t trunk_channels = 64;
  std::size_t num_residual_blocks = 8;
  bool use_channel_attention = true;
  std::size_t ca_reduction = 4;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an invalid combination.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Equal topology (seed ignored).
bool same_architecture(const ModelConfig& a, const ModelConfig& b);

/// Named trainable tensors in a fixed insertion order.
template <typename T>
class BasicParameterStore {
 public:
  void add(std::string name, BasicTensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const BasicTensor<T>& get(const std::string& name) const;
  BasicTensor<T>& get(const std::string& name);

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const BasicTensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
  BasicTensor<T>& tensor(std::size_t i) { return tensors_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  /// Total number of scalar parameters.
  std::size_t element_count() const;

  template <typename U>
  BasicParameterStore<U> cast() const {
    BasicParameterStore<U> out;
    for (std::size_t i = 0; i < size(); ++i)
      out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  void set_all(T value) {
    for (auto& t : tensors_) t.fill(value);
  }

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

using ParameterStore = BasicParameterStore<float>;
using ParameterStore64 = BasicParameterStore<double>;

/// The frozen topology: every parameter name with its shape, in build order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg);

/// Fan-in scaled normal kernels (std sqrt(2/fan_in)), zero biases. The
/// second conv of every residual block starts at zero, so each block is the
/// identity at initialisation, and the output conv is scaled by 0.1.
ParameterStore build_model(const ModelConfig& cfg);

/// Default gradient-balancing reference layer: the last trunk convolution.
std::string default_reference_layer(const ModelConfig& cfg);

/// Parameters bound to tape leaves for one forward evaluation.
template <typename T>
class ParamVars {
 public:
  ParamVars(Tape<T>& tape, const BasicParameterStore<T>& store,
            bool requires_grad);

  Var<T> operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) > 0; }
  const std::vector<std::pair<std::string, Var<T>>>& ordered() const { return order_; }

 private:
  std::map<std::string, Var<T>> vars_;
  std::vector<std::pair<std::string, Var<T>>> order_;
};

/// x + m * x with m = sigmoid(up(relu(down(avgpool(x))))).
template <typename T>
Var<T> channel_attention(Var<T> x, const ParamVars<T>& params,
                         const std::string& prefix, std::size_t reduction);

/// x + [CA](conv2(relu(conv1(x)))).
template <typename T>
Var<T> residual_block(Var<T> x, const ParamVars<T>& params,
                      const std::string& prefix, bool use_ca,
                      std::size_t reduction);

template <typename T>
struct ForwardResult {
  Var<T> restored;  ///< b = clamp(O - R, 0, 1)
  Var<T> residual;  ///< predicted rain layer R
};

/// rainy: [N,3,H,W] with H and W divisible by 4.
template <typename T>
ForwardResult<T> forward(Var<T> rainy, const ParamVars<T>& params,
                         const ModelConfig& cfg);

}  // namespace menet
