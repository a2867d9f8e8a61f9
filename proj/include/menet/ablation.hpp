#pragma once

// The eight loss/weighting/attention combinations of the ablation grid, each
// trained from the same seed and scored on a held-out corpus.

#include <array>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "menet/train.hpp"

namespace menet {

struct AblationPreset {
  std::string name;
  bool edge = false;
  bool texture = false;
  Strategy strategy = Strategy::kFixed;
  bool fixed_flag = false;  ///< the grid's "Fixed" column
  bool channel_attention = false;
  std::array<double, kTaskCount> fixed_weights{1.0, 0.0, 0.0};
};

/// Rows in grid order: Lp, LpLe+Fixed, LpLe+GB, LpLe+LB, LpLeLt+GB,
/// LpLeLt+LB, LpLeLt+GB+CA, LpLeLt+LB+CA.
const std::vector<AblationPreset>& ablation_presets();

struct AblationRow {
  AblationPreset preset;
  double mean_ssim = 0.0;
  double mean_psnr = 0.0;
  std::uint64_t steps = 0;
};

inline constexpr const char* kAblationHeader =
    "preset,L_p,L_e,L_t,Fixed,GB,LB,CA,ssim,psnr";

/// Model and training settings of a preset on top of shared base settings.
std::pair<ModelConfig, TrainConfig> preset_configs(const AblationPreset& preset,
                                                   const ModelConfig& base_model,
                                                   const TrainConfig& base_train);

std::vector<AblationRow> run_ablation(
    const Corpus& train_set, const Corpus& eval_set, const ModelConfig& base_model,
    const TrainConfig& base_train,
    const std::function<void(const AblationRow&)>& on_row = {});

std::string format_ablation_row(const AblationRow& row);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

/// Desk-scale synthetic corpus: procedural 64x64 scenes under light rain.
Corpus desk_corpus(std::size_t count, std::uint64_t seed);

}  // namespace menet
