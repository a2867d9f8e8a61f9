#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "menet/data.hpp"
#include "menet/losses.hpp"
#include "menet/model.hpp"
#include "menet/weighting.hpp"

namespace menet {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t lr_drop_epoch = 40;  ///< 1-based epoch from which lr is divided
  double lr_drop_factor = 10.0;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;  ///< 0 means no cap
  std::size_t batch_size = 16;
  /// Augmentation crop size; 0 trains on whole images without augmentation.
  std::size_t crop = 64;
  bool use_edge_loss = false;
  bool use_texture_loss = false;
  std::size_t texture_patch = 4;
  Strategy strategy = Strategy::kFixed;
  std::array<double, kTaskCount> fixed_weights{1.0, 0.0, 0.0};
  std::string reference_layer;  ///< empty selects the default
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;  ///< empty disables checkpointing
  std::filesystem::path log_path;         ///< empty disables the CSV log

  /// Throws ConfigError.
  void validate() const;
  TaskMask enabled_tasks() const;
  /// lr for a 1-based epoch.
  double lr_at_epoch(std::size_t epoch) const;

  /// Batch 4, crop 32.
  static TrainConfig desk();
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments aligned with a ParameterStore.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterStore& params);
};

/// grads[i] belongs to params.tensor(i). Throws ConfigError on a missing
/// (empty) or misshapen gradient.
void adam_step(ParameterStore& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, const AdamConfig& cfg = {});

struct StepResult {
  LossReport report;
  TaskWeights weights;
  std::vector<Tensor> grads;  ///< aligned with the parameter store
};

/// Forward, enabled losses, task weights and the gradient of the weighted
/// total for one batch ([N,3,H,W] each).
StepResult compute_step(const ParameterStore& params, const ModelConfig& mcfg,
                        const Tensor& rainy, const Tensor& clean,
                        const TrainConfig& tcfg);

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  ParameterStore params;
  AdamState adam;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, unsupported version, truncation or a
/// shape table that disagrees with the embedded model configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also rejects a checkpoint whose architecture differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig& expected);

struct LogRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport report;
};

inline constexpr const char* kLogHeader =
    "step,epoch,lr,loss_p,loss_e,loss_t,w_p,w_e,w_t,total";
std::string format_log_row(const LogRow& row);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
};

using StepCallback = std::function<void(const LogRow&)>;

/// Runs from `resume` when given (its step counter and optimizer state),
/// otherwise from a fresh build of `mcfg`. Throws NumericError naming the
/// step when a loss turns non-finite.
TrainResult train(const Corpus& corpus, const ModelConfig& mcfg,
                  const TrainConfig& tcfg,
                  const Checkpoint* resume = nullptr,
                  const StepCallback& on_step = {});

/// The training patch set: augmented crops in corpus order, or the whole
/// images when tcfg.crop == 0.
std::vector<ImagePair> training_patches(const Corpus& corpus, const TrainConfig& tcfg);

/// Sample order for a 0-based epoch.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed,
                                     std::size_t epoch);

/// Reflect-pads bottom and right so both extents are multiples of `multiple`.
Tensor reflect_pad(const Tensor& image, std::size_t multiple);

struct Inference {
  Tensor restored;  ///< [3,H,W]
  Tensor residual;  ///< [3,H,W]
};

/// Single [3,H,W] image of any size.
Inference derain(const ParameterStore& params, const ModelConfig& mcfg,
                 const Tensor& rainy);

}  // namespace menet
