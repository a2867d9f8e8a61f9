#include "menet/model.hpp"

#include <cmath>

#include "menet/random.hpp"

namespace menet {

namespace {

constexpr double kOutputInitScale = 0.1;

constexpr std::size_t kImageChannels = 3;
constexpr std::size_t kStageRatio = 2;

void add_conv(std::vector<std::pair<std::string, Shape>>& layout,
              const std::string& prefix, std::size_t cout, std::size_t cin,
              std::size_t k) {
  layout.emplace_back(prefix + ".kernel", Shape{cout, cin, k, k});
  layout.emplace_back(prefix + ".bias", Shape{cout});
}

template <typename T>
Var<T> conv(Var<T> x, const ParamVars<T>& p, const std::string& prefix,
            std::size_t padding) {
  return conv2d(x, p[prefix + ".kernel"], std::optional<Var<T>>(p[prefix + ".bias"]),
                padding);
}

}  // namespace

void ModelConfig::validate() const {
  if (base_channels < 1 || trunk_channels < 1) {
    throw ConfigError("ModelConfig: channel counts must be >= 1");
  }
  if (num_residual_blocks < 1) {
    throw ConfigError("ModelConfig: num_residual_blocks must be >= 1");
  }
  if (ca_reduction < 1 || trunk_channels % ca_reduction != 0) {
    throw ConfigError("ModelConfig: trunk_channels (" +
                      std::to_string(trunk_channels) +
                      ") must be divisible by ca_reduction (" +
                      std::to_string(ca_reduction) + ")");
  }
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  return a.base_channels == b.base_channels &&
         a.trunk_channels == b.trunk_channels &&
         a.num_residual_blocks == b.num_residual_blocks &&
         a.use_channel_attention == b.use_channel_attention &&
         a.ca_reduction == b.ca_reduction;
}

// ---------------------------------------------------------------------------

template <typename T>
void BasicParameterStore<T>::add(std::string name, BasicTensor<T> value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

template <typename T>
const BasicTensor<T>& BasicParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return tensors_[it->second];
}

template <typename T>
BasicTensor<T>& BasicParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return tensors_[it->second];
}

template <typename T>
std::size_t BasicParameterStore<T>::element_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors_) total += t.numel();
  return total;
}

template class BasicParameterStore<float>;
template class BasicParameterStore<double>;

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t base = cfg.base_channels;
  const std::size_t mid = 2 * base;
  const std::size_t trunk = cfg.trunk_channels;
  const std::size_t r2 = kStageRatio * kStageRatio;
  std::vector<std::pair<std::string, Shape>> layout;
  add_conv(layout, "enc.conv0", base, kImageChannels, 3);
  add_conv(layout, "enc.down1", mid, base * r2, 3);
  add_conv(layout, "enc.down2", trunk, mid * r2, 3);
  for (std::size_t i = 0; i < cfg.num_residual_blocks; ++i) {
    const std::string block = "trunk.block" + std::to_string(i);
    add_conv(layout, block + ".conv1", trunk, trunk, 3);
    add_conv(layout, block + ".conv2", trunk, trunk, 3);
    if (cfg.use_channel_attention) {
      const std::size_t squeezed = trunk / cfg.ca_reduction;
      add_conv(layout, block + ".ca.down", squeezed, trunk, 1);
      add_conv(layout, block + ".ca.up", trunk, squeezed, 1);
    }
  }
  add_conv(layout, "dec.up1", mid * r2, trunk, 3);
  add_conv(layout, "dec.up2", base * r2, mid, 3);
  add_conv(layout, "dec.out", kImageChannels, base, 3);
  return layout;
}

ParameterStore build_model(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  ParameterStore store;
  for (auto& [name, shape] : parameter_layout(cfg)) {
    Tensor value(shape);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      double stddev = std::sqrt(2.0 / fan_in);
      if (name.ends_with(".conv2.kernel")) stddev = 0.0;
      if (name == "dec.out.kernel") stddev *= kOutputInitScale;
      for (float& v : value.data()) v = static_cast<float>(stddev * rng.normal());
    }
    store.add(name, std::move(value));
  }
  return store;
}

std::string default_reference_layer(const ModelConfig& cfg) {
  return "trunk.block" + std::to_string(cfg.num_residual_blocks - 1) +
         ".conv2.kernel";
}

// ---------------------------------------------------------------------------

template <typename T>
ParamVars<T>::ParamVars(Tape<T>& tape, const BasicParameterStore<T>& store,
                        bool requires_grad) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    Var<T> v = tape.leaf(store.tensor(i), requires_grad);
    vars_.emplace(store.name(i), v);
    order_.emplace_back(store.name(i), v);
  }
}

template <typename T>
Var<T> ParamVars<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("parameter not bound: " + name);
  return it->second;
}

template <typename T>
Var<T> channel_attention(Var<T> x, const ParamVars<T>& params,
                         const std::string& prefix, std::size_t reduction) {
  const std::size_t channels = x.value().dim(1);
  if (reduction == 0 || channels % reduction != 0) {
    throw ShapeError("channel_attention: " + std::to_string(channels) +
                     " channels not divisible by reduction " +
                     std::to_string(reduction));
  }
  Var<T> pooled = global_avg_pool(x);
  Var<T> squeezed = relu(conv(pooled, params, prefix + ".down", 0));
  Var<T> mask = sigmoid(conv(squeezed, params, prefix + ".up", 0));
  return add(x, scale_channels(x, mask));
}

template <typename T>
Var<T> residual_block(Var<T> x, const ParamVars<T>& params,
                      const std::string& prefix, bool use_ca,
                      std::size_t reduction) {
  Var<T> h = relu(conv(x, params, prefix + ".conv1", 1));
  h = conv(h, params, prefix + ".conv2", 1);
  if (use_ca) h = channel_attention(h, params, prefix + ".ca", reduction);
  return add(x, h);
}

template <typename T>
ForwardResult<T> forward(Var<T> rainy, const ParamVars<T>& params,
                         const ModelConfig& cfg) {
  const BasicTensor<T>& o = rainy.value();
  if (o.rank() != 4 || o.dim(1) != kImageChannels) {
    throw ShapeError("forward: expected [N,3,H,W] input, got " +
                     shape_to_string(o.shape()));
  }
  const std::size_t multiple = kStageRatio * kStageRatio;
  if (o.dim(2) % multiple != 0 || o.dim(3) % multiple != 0) {
    throw ShapeError("forward: H and W must be divisible by 4, got " +
                     shape_to_string(o.shape()));
  }
  if (!o.all_finite()) throw NumericError("forward: non-finite input");

  Var<T> e0 = relu(conv(rainy, params, "enc.conv0", 1));
  Var<T> e1 = relu(conv(desubpixel(e0, kStageRatio), params, "enc.down1", 1));
  Var<T> t = relu(conv(desubpixel(e1, kStageRatio), params, "enc.down2", 1));
  for (std::size_t i = 0; i < cfg.num_residual_blocks; ++i) {
    t = residual_block(t, params, "trunk.block" + std::to_string(i),
                       cfg.use_channel_attention, cfg.ca_reduction);
  }
  Var<T> u = add(subpixel(relu(conv(t, params, "dec.up1", 1)), kStageRatio), e1);
  u = add(subpixel(relu(conv(u, params, "dec.up2", 1)), kStageRatio), e0);
  Var<T> residual = conv(u, params, "dec.out", 1);
  Var<T> restored = clamp(sub(rainy, residual), T{0}, T{1});
  return {restored, residual};
}

#define MENET_INSTANTIATE(T)                                                  \
  template class ParamVars<T>;                                                \
  template Var<T> channel_attention<T>(Var<T>, const ParamVars<T>&,           \
                                       const std::string&, std::size_t);      \
  template Var<T> residual_block<T>(Var<T>, const ParamVars<T>&,              \
                                    const std::string&, bool, std::size_t);   \
  template ForwardResult<T> forward<T>(Var<T>, const ParamVars<T>&,           \
                                       const ModelConfig&);

MENET_INSTANTIATE(float)
MENET_INSTANTIATE(double)

#undef MENET_INSTANTIATE

}  // namespace menet
