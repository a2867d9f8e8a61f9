#include "menet/ablation.hpp"

#include <cstdio>

#include "menet/metrics.hpp"
#include "menet/random.hpp"

namespace menet {

const std::vector<AblationPreset>& ablation_presets() {
  using S = Strategy;
  static const std::vector<AblationPreset> presets = {
      {"Lp", false, false, S::kFixed, false, false, {1.0, 0.0, 0.0}},
      {"LpLe+Fixed", true, false, S::kFixed, true, false, {1.0, 1e-2, 0.0}},
      {"LpLe+GB", true, false, S::kGradientBalanced, false, false},
      {"LpLe+LB", true, false, S::kLossBalanced, false, false},
      {"LpLeLt+GB", true, true, S::kGradientBalanced, false, false},
      {"LpLeLt+LB", true, true, S::kLossBalanced, false, false},
      {"LpLeLt+GB+CA", true, true, S::kGradientBalanced, false, true},
      {"LpLeLt+LB+CA", true, true, S::kLossBalanced, false, true},
  };
  return presets;
}

std::pair<ModelConfig, TrainConfig> preset_configs(const AblationPreset& preset,
                                                   const ModelConfig& base_model,
                                                   const TrainConfig& base_train) {
  ModelConfig m = base_model;
  m.use_channel_attention = preset.channel_attention;
  TrainConfig t = base_train;
  t.use_edge_loss = preset.edge;
  t.use_texture_loss = preset.texture;
  t.strategy = preset.strategy;
  t.fixed_weights = preset.fixed_weights;
  t.reference_layer.clear();
  return {m, t};
}

std::vector<AblationRow> run_ablation(
    const Corpus& train_set, const Corpus& eval_set, const ModelConfig& base_model,
    const TrainConfig& base_train,
    const std::function<void(const AblationRow&)>& on_row) {
  if (eval_set.empty()) throw DataError("ablation needs a non-empty evaluation set");
  std::vector<AblationRow> rows;
  for (const AblationPreset& preset : ablation_presets()) {
    auto [mcfg, tcfg] = preset_configs(preset, base_model, base_train);
    const TrainResult result = train(train_set, mcfg, tcfg);
    std::vector<RestoredPair> restored;
    for (const ImagePair& pair : eval_set.pairs) {
      restored.push_back({pair.id, derain(result.checkpoint.params, mcfg, pair.rainy).restored,
                          pair.clean});
    }
    const MetricSummary summary = evaluate_corpus(restored);
    AblationRow row{preset, summary.mean_ssim, summary.mean_psnr, result.checkpoint.step};
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_row(const AblationRow& row) {
  const AblationPreset& p = row.preset;
  auto flag = [](bool b) { return b ? "1" : "0"; };
  std::string out = p.name;
  for (bool b : {true, p.edge, p.texture, p.fixed_flag,
                 p.strategy == Strategy::kGradientBalanced,
                 p.strategy == Strategy::kLossBalanced, p.channel_attention}) {
    out += ",";
    out += flag(b);
  }
  out += "," + format_number(row.mean_ssim) + "," + format_number(row.mean_psnr);
  return out;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << kAblationHeader << '\n';
  for (const AblationRow& row : rows) out << format_ablation_row(row) << '\n';
}

Corpus desk_corpus(std::size_t count, std::uint64_t seed) {
  Corpus corpus;
  Rng rng(seed);
  constexpr Pattern kPatterns[] = {Pattern::kGradient, Pattern::kCheckerboard,
                                   Pattern::kBlobs};
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor clean = procedural_image(kPatterns[i % 3], 64, 64, rng.next());
    char id[24];
    std::snprintf(id, sizeof(id), "%03zu", i);
    corpus.pairs.push_back(synthesize_rain(clean, RainParams::light(rng.next()), id));
  }
  return corpus;
}

}  // namespace menet
