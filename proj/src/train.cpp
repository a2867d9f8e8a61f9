#include "menet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "menet/metrics.hpp"
#include "menet/random.hpp"

namespace menet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'E', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr const char* kConfigTensor = "model.config";
constexpr std::uint8_t kFloat32 = 0;

// ---- binary encoding -------------------------------------------------------

class Writer {
 public:
  template <typename U>
  void put(U value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_tensor(const std::string& name, const Tensor& t) {
    if (name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + name);
    put(static_cast<std::uint16_t>(name.size()));
    put_bytes(name.data(), name.size());
    put(kFloat32);
    put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put(static_cast<std::uint64_t>(d));
    put_bytes(t.raw(), t.numel() * sizeof(float));
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("truncated checkpoint " + source_ + ": reading " + what +
                            " at byte " + std::to_string(pos_) + " needs " +
                            std::to_string(n) + " bytes, " +
                            std::to_string(bytes_.size() - pos_) + " left");
    }
  }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }
  void get_bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::pair<std::string, Tensor> get_tensor() {
    const auto len = get<std::uint16_t>("tensor name length");
    std::string name(len, '\0');
    get_bytes(name.data(), len, "tensor name");
    const auto dtype = get<std::uint8_t>("dtype");
    if (dtype != kFloat32) {
      throw CheckpointError("tensor " + name + " has unsupported dtype " +
                            std::to_string(dtype));
    }
    const auto rank = get<std::uint8_t>("rank");
    if (rank == 0) throw CheckpointError("tensor " + name + " has rank 0");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const auto v = get<std::uint64_t>("dims");
      if (v == 0 || v > (std::uint64_t{1} << 40)) {
        throw CheckpointError("tensor " + name + " has invalid extent " +
                              std::to_string(v));
      }
      d = static_cast<std::size_t>(v);
      numel *= d;
      if (numel > (std::size_t{1} << 40)) {
        throw CheckpointError("tensor " + name + " is implausibly large");
      }
    }
    need(numel * sizeof(float), "tensor values");
    std::vector<float> values(numel);
    get_bytes(values.data(), numel * sizeof(float), "tensor values");
    return {std::move(name), Tensor(std::move(shape), std::move(values))};
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

Tensor encode_config(const ModelConfig& cfg) {
  return Tensor(Shape{5}, {static_cast<float>(cfg.base_channels),
                           static_cast<float>(cfg.trunk_channels),
                           static_cast<float>(cfg.num_residual_blocks),
                           cfg.use_channel_attention ? 1.0f : 0.0f,
                           static_cast<float>(cfg.ca_reduction)});
}

ModelConfig decode_config(const Tensor& t) {
  if (t.shape() != Shape{5}) {
    throw CheckpointError("model.config tensor must have shape [5], got " +
                          shape_to_string(t.shape()));
  }
  auto count = [&](std::size_t i) {
    const float v = t[i];
    if (!(v >= 0.0f && v < 1e7f) || v != std::floor(v)) {
      throw CheckpointError("model.config holds a non-integer entry");
    }
    return static_cast<std::size_t>(v);
  };
  ModelConfig cfg;
  cfg.base_channels = count(0);
  cfg.trunk_channels = count(1);
  cfg.num_residual_blocks = count(2);
  cfg.use_channel_attention = count(3) != 0;
  cfg.ca_reduction = count(4);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded model config is invalid: ") + e.what());
  }
  return cfg;
}

// ---- training helpers ------------------------------------------------------

Tensor stack_batch(const std::vector<ImagePair>& patches,
                   const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end, bool rainy) {
  std::vector<const Tensor*> images;
  images.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const ImagePair& p = patches[order[i]];
    images.push_back(rainy ? &p.rainy : &p.clean);
  }
  return stack_images(images);
}

std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

}  // namespace

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(lr_drop_factor > 0.0)) throw ConfigError("lr drop factor must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (crop != 0 && crop % 4 != 0) throw ConfigError("crop must be a multiple of 4");
  if (texture_patch < 1) throw ConfigError("texture patch must be >= 1");
  if (strategy == Strategy::kFixed) menet::fixed_weights(fixed_weights);
}

TaskMask TrainConfig::enabled_tasks() const {
  return {true, use_edge_loss, use_texture_loss};
}

double TrainConfig::lr_at_epoch(std::size_t epoch) const {
  return epoch < lr_drop_epoch ? learning_rate : learning_rate / lr_drop_factor;
}

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.crop = 32;
  return cfg;
}

// ---- Adam ------------------------------------------------------------------

AdamState AdamState::zeros_like(const ParameterStore& params) {
  AdamState state;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m.emplace_back(params.tensor(i).shape());
    state.v.emplace_back(params.tensor(i).shape());
  }
  return state;
}

void adam_step(ParameterStore& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ConfigError("adam_step: " + std::to_string(grads.size()) +
                      " gradients for " + std::to_string(params.size()) +
                      " parameters");
  }
  if (state.m.empty() && state.v.empty()) {
    const std::uint64_t step = state.step;
    state = AdamState::zeros_like(params);
    state.step = step;
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ConfigError("adam_step: optimizer state does not match the parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) {
      throw ConfigError("adam_step: missing gradient for parameter " + params.name(i));
    }
    if (grads[i].shape() != params.tensor(i).shape()) {
      throw ConfigError("adam_step: gradient for " + params.name(i) + " has shape " +
                        shape_to_string(grads[i].shape()) + ", expected " +
                        shape_to_string(params.tensor(i).shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params.tensor(i);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < theta.numel(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double m_hat = mk / c1;
      const double v_hat = vk / c2;
      theta[k] = static_cast<float>(theta[k] - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

// ---- one step --------------------------------------------------------------

StepResult compute_step(const ParameterStore& params, const ModelConfig& mcfg,
                        const Tensor& rainy, const Tensor& clean,
                        const TrainConfig& tcfg) {
  if (rainy.shape() != clean.shape()) {
    throw ShapeError("compute_step: rainy " + shape_to_string(rainy.shape()) +
                     " vs clean " + shape_to_string(clean.shape()));
  }
  const TaskMask enabled = tcfg.enabled_tasks();
  Tape<float> tape;
  ParamVars<float> vars(tape, params, true);
  Var<float> o = tape.constant(rainy);
  Var<float> b_true = tape.constant(clean);
  ForwardResult<float> fwd = forward(o, vars, mcfg);

  std::array<std::optional<Var<float>>, kTaskCount> terms;
  terms[0] = pixel_loss(b_true, fwd.restored);
  if (enabled[1]) {
    static const EdgeLossNetwork phi(3);
    terms[1] = edge_aware_loss(b_true, fwd.restored, phi);
  }
  if (enabled[2]) {
    terms[2] = texture_matching_loss(b_true, fwd.restored,
                                     TextureLossConfig{tcfg.texture_patch});
  }
  std::array<double, kTaskCount> losses{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < kTaskCount; ++i) {
    if (terms[i]) losses[i] = static_cast<double>(terms[i]->value().item());
  }

  StepResult result;
  for (double l : losses) {
    if (!std::isfinite(l)) {
      result.report.l_p = losses[0];
      result.report.l_e = losses[1];
      result.report.l_t = losses[2];
      result.report.total = std::numeric_limits<double>::quiet_NaN();
      return result;
    }
  }
  switch (tcfg.strategy) {
    case Strategy::kFixed: {
      std::array<double, kTaskCount> w = tcfg.fixed_weights;
      for (std::size_t i = 0; i < kTaskCount; ++i)
        if (!enabled[i]) w[i] = 0.0;
      result.weights = fixed_weights(w);
      break;
    }
    case Strategy::kLossBalanced:
      result.weights = lb_weights(losses, enabled);
      break;
    case Strategy::kGradientBalanced: {
      const std::string ref = tcfg.reference_layer.empty()
                                  ? default_reference_layer(mcfg)
                                  : tcfg.reference_layer;
      if (!params.contains(ref)) {
        throw ConfigError("gradient-balancing reference layer not found: " + ref);
      }
      const Var<float> ref_var = vars[ref];
      const std::size_t stop = tape.first_consumer(ref_var.id);
      std::array<double, kTaskCount> norms{0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < kTaskCount; ++i) {
        if (!terms[i]) continue;
        tape.backward(*terms[i], stop);
        norms[i] = l2_norm(tape.grad(ref_var));
      }
      result.weights = gb_weights(norms, enabled, ref);
      break;
    }
  }
  result.report = total_loss(losses, result.weights.w);

  Var<float> total = weighted_total(terms, result.weights.w);
  tape.backward(total);
  result.grads.reserve(params.size());
  for (const auto& [name, var] : vars.ordered()) result.grads.push_back(tape.grad(var));
  return result;
}

// ---- checkpoint ------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(Checkpoint::kVersion);
  w.put(static_cast<std::uint32_t>(ckpt.params.size() + 1));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    w.put_tensor(ckpt.params.name(i), ckpt.params.tensor(i));
  }
  w.put_tensor(kConfigTensor, encode_config(ckpt.model));
  const bool has_moments = !ckpt.adam.m.empty();
  if (has_moments && (ckpt.adam.m.size() != ckpt.params.size() ||
                      ckpt.adam.v.size() != ckpt.params.size())) {
    throw CheckpointError("optimizer state does not match the parameters");
  }
  w.put(static_cast<std::uint32_t>(has_moments ? 2 * ckpt.params.size() : 0));
  if (has_moments) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      w.put_tensor("adam.m." + ckpt.params.name(i), ckpt.adam.m[i]);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      w.put_tensor("adam.v." + ckpt.params.name(i), ckpt.adam.v[i]);
  }
  w.put(static_cast<std::uint64_t>(ckpt.step));
  w.put(static_cast<std::uint64_t>(ckpt.seed));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw DataError("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  char magic[8];
  r.get_bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("bad checkpoint magic in " + path.string() +
                          " (expected MENETCKP)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " in " + path.string() + " (supported: 1)");
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<std::pair<std::string, Tensor>> stored;
  std::optional<Tensor> config_tensor;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto entry = r.get_tensor();
    if (entry.first == kConfigTensor) {
      config_tensor = std::move(entry.second);
    } else {
      stored.push_back(std::move(entry));
    }
  }
  if (!config_tensor) throw CheckpointError("checkpoint lacks the model.config tensor");

  Checkpoint ckpt;
  ckpt.model = decode_config(*config_tensor);
  const auto layout = parameter_layout(ckpt.model);
  if (layout.size() != stored.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(stored.size()) +
                          " parameters; the embedded model config needs " +
                          std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    if (stored[i].first != name) {
      throw CheckpointError("parameter " + std::to_string(i) + " is '" +
                            stored[i].first + "', expected '" + name + "'");
    }
    if (stored[i].second.shape() != shape) {
      throw CheckpointError("shape mismatch for " + name + ": stored " +
                            shape_to_string(stored[i].second.shape()) +
                            ", model config needs " + shape_to_string(shape));
    }
    ckpt.params.add(name, std::move(stored[i].second));
  }

  const auto moments = r.get<std::uint32_t>("optimizer tensor count");
  if (moments != 0 && moments != 2 * layout.size()) {
    throw CheckpointError("optimizer state holds " + std::to_string(moments) +
                          " tensors, expected 0 or " + std::to_string(2 * layout.size()));
  }
  for (std::uint32_t i = 0; i < moments; ++i) {
    auto [name, t] = r.get_tensor();
    const bool first_half = i < layout.size();
    const std::size_t k = first_half ? i : i - layout.size();
    const std::string expected = (first_half ? "adam.m." : "adam.v.") + layout[k].first;
    if (name != expected) {
      throw CheckpointError("optimizer tensor '" + name + "', expected '" + expected + "'");
    }
    if (t.shape() != layout[k].second) {
      throw CheckpointError("shape mismatch for " + name);
    }
    (first_half ? ckpt.adam.m : ckpt.adam.v).push_back(std::move(t));
  }
  ckpt.step = r.get<std::uint64_t>("step counter");
  ckpt.seed = r.get<std::uint64_t>("seed");
  if (!r.at_end()) {
    throw CheckpointError("trailing bytes after checkpoint payload in " + path.string());
  }
  ckpt.adam.step = ckpt.step;
  ckpt.model.seed = ckpt.seed;
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!same_architecture(ckpt.model, expected)) {
    throw CheckpointError("checkpoint " + path.string() +
                          " was trained with a different model configuration");
  }
  return ckpt;
}

// ---- training loop ---------------------------------------------------------

std::string format_log_row(const LogRow& row) {
  const LossReport& r = row.report;
  std::string out = std::to_string(row.step) + "," + std::to_string(row.epoch);
  for (double v : {row.lr, r.l_p, r.l_e, r.l_t, r.w_p, r.w_e, r.w_t, r.total}) {
    out += ",";
    out += format_number(v);
  }
  return out;
}

std::vector<ImagePair> training_patches(const Corpus& corpus, const TrainConfig& tcfg) {
  std::vector<ImagePair> patches;
  for (const ImagePair& pair : corpus.pairs) {
    if (tcfg.crop == 0) {
      patches.push_back(pair);
    } else {
      auto crops = augment(pair, tcfg.crop);
      std::move(crops.begin(), crops.end(), std::back_inserter(patches));
    }
  }
  return patches;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1)));
  rng.shuffle(order);
  return order;
}

TrainResult train(const Corpus& corpus, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const Checkpoint* resume,
                  const StepCallback& on_step) {
  mcfg.validate();
  tcfg.validate();
  if (corpus.empty()) throw DataError("cannot train on an empty corpus");

  const std::vector<ImagePair> patches = training_patches(corpus, tcfg);
  const Shape& shape0 = patches.front().clean.shape();
  for (const ImagePair& p : patches) {
    if (p.clean.shape() != shape0 || p.rainy.shape() != shape0) {
      throw DataError("training images differ in size; set a crop size (" + p.id + ")");
    }
  }
  const std::size_t h = shape0[1], w = shape0[2];
  if (h % 4 != 0 || w % 4 != 0) {
    throw ConfigError("training patches must have extents divisible by 4, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  if (tcfg.use_texture_loss && (h % tcfg.texture_patch != 0 || w % tcfg.texture_patch != 0)) {
    throw ConfigError("training patches must have extents divisible by the texture patch " +
                      std::to_string(tcfg.texture_patch));
  }

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  if (resume) {
    if (!same_architecture(resume->model, mcfg)) {
      throw ConfigError("resume checkpoint has a different model configuration");
    }
    if (resume->seed != tcfg.seed) {
      throw ConfigError("resume checkpoint was trained with seed " +
                        std::to_string(resume->seed) + ", not " + std::to_string(tcfg.seed));
    }
    ckpt = *resume;
    if (ckpt.adam.m.empty()) ckpt.adam = AdamState::zeros_like(ckpt.params);
    ckpt.adam.step = ckpt.step;
  } else {
    ckpt.model = mcfg;
    ckpt.params = build_model(mcfg);
    ckpt.adam = AdamState::zeros_like(ckpt.params);
    ckpt.step = 0;
  }
  ckpt.model.seed = mcfg.seed;
  ckpt.seed = tcfg.seed;

  const std::size_t count = patches.size();
  const std::size_t per_epoch = (count + tcfg.batch_size - 1) / tcfg.batch_size;
  std::uint64_t total_steps = static_cast<std::uint64_t>(per_epoch) * tcfg.epochs;
  if (tcfg.max_steps > 0) total_steps = std::min<std::uint64_t>(total_steps, tcfg.max_steps);

  std::ofstream log;
  if (!tcfg.log_path.empty()) {
    const bool append = resume != nullptr && std::filesystem::exists(tcfg.log_path);
    log.open(tcfg.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot open training log " + tcfg.log_path.string());
    if (!append) log << kLogHeader << '\n';
  }

  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  for (std::uint64_t s = ckpt.step; s < total_steps; ++s) {
    const std::size_t epoch_index = static_cast<std::size_t>(s / per_epoch);
    const std::size_t batch_index = static_cast<std::size_t>(s % per_epoch);
    if (epoch_index != cached_epoch) {
      order = epoch_order(count, tcfg.seed, epoch_index);
      cached_epoch = epoch_index;
    }
    const std::size_t begin = batch_index * tcfg.batch_size;
    const std::size_t end = std::min(count, begin + tcfg.batch_size);
    const Tensor rainy = stack_batch(patches, order, begin, end, true);
    const Tensor clean = stack_batch(patches, order, begin, end, false);

    const std::size_t epoch = epoch_index + 1;
    const double lr = tcfg.lr_at_epoch(epoch);
    StepResult step;
    try {
      step = compute_step(ckpt.params, ckpt.model, rainy, clean, tcfg);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(s) + ": " + e.what());
    }
    const LossReport& rep = step.report;
    if (!std::isfinite(rep.l_p) || !std::isfinite(rep.l_e) || !std::isfinite(rep.l_t) ||
        !std::isfinite(rep.total)) {
      throw NumericError("training diverged: non-finite loss at step " + std::to_string(s));
    }
    adam_step(ckpt.params, step.grads, ckpt.adam, lr);
    ckpt.step = s + 1;

    LogRow row{s, epoch, lr, rep};
    if (log) log << format_log_row(row) << '\n';
    result.log.push_back(row);
    if (on_step) on_step(row);

    const bool epoch_end = (s + 1) % per_epoch == 0;
    if (!tcfg.checkpoint_path.empty() && (epoch_end || s + 1 == total_steps)) {
      save_checkpoint(tcfg.checkpoint_path, ckpt);
    }
  }
  if (log) log.flush();
  return result;
}

// ---- inference -------------------------------------------------------------

Tensor reflect_pad(const Tensor& image, std::size_t multiple) {
  if (image.rank() != 3) {
    throw ShapeError("reflect_pad: expected [C,H,W], got " + shape_to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t ph = (h + multiple - 1) / multiple * multiple;
  const std::size_t pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Tensor out(Shape{c, ph, pw});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = reflect_index(static_cast<long>(y), static_cast<long>(h));
      for (std::size_t x = 0; x < pw; ++x) {
        const std::size_t sx = reflect_index(static_cast<long>(x), static_cast<long>(w));
        out[(ch * ph + y) * pw + x] = image[(ch * h + sy) * w + sx];
      }
    }
  return out;
}

Inference derain(const ParameterStore& params, const ModelConfig& mcfg,
                 const Tensor& rainy) {
  if (rainy.rank() != 3 || rainy.dim(0) != 3) {
    throw ShapeError("derain: expected [3,H,W], got " + shape_to_string(rainy.shape()));
  }
  const std::size_t h = rainy.dim(1), w = rainy.dim(2);
  const Tensor padded = reflect_pad(rainy, 4);
  const std::size_t ph = padded.dim(1), pw = padded.dim(2);
  Tape<float> tape;
  ParamVars<float> vars(tape, params, false);
  Var<float> o = tape.constant(padded.reshaped(Shape{1, 3, ph, pw}));
  ForwardResult<float> fwd = forward(o, vars, mcfg);
  const Tensor restored = fwd.restored.value().reshaped(Shape{3, ph, pw});
  const Tensor residual = fwd.residual.value().reshaped(Shape{3, ph, pw});
  return Inference{crop_image(restored, 0, 0, h, w), crop_image(residual, 0, 0, h, w)};
}

}  // namespace menet
