#include "menet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "menet/ablation.hpp"
#include "menet/data.hpp"
#include "menet/gradcheck_suite.hpp"
#include "menet/image_io.hpp"
#include "menet/metrics.hpp"
#include "menet/random.hpp"
#include "menet/train.hpp"

namespace menet {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_on_off(const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("expected on|off, got '" + value + "'");
}

std::array<double, kTaskCount> parse_triple(const std::string& text) {
  std::array<double, kTaskCount> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= kTaskCount) break;
    try {
      std::size_t used = 0;
      out[i] = std::stod(trim(item), &used);
      if (used != trim(item).size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--fixed-w expects three numbers p,e,t, got '" + text + "'");
    }
    ++i;
  }
  if (i != kTaskCount || std::getline(ss, item, ',')) {
    throw ConfigError("--fixed-w expects three numbers p,e,t, got '" + text + "'");
  }
  return out;
}

struct SynthOptions {
  std::string out;
  std::string clean_dir;
  std::size_t count = 20;
  std::size_t size = 64;
  std::string rain = "light";
  double density = -1.0, length = -1.0, angle = 1e9, intensity = -1.0;
  std::uint64_t seed = 0;
  std::string format = "png";
};

struct TrainOptions {
  std::string data;
  std::string out = "menet.ckpt";
  std::string log = "train_log.csv";
  std::string resume;
  bool desk = false;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;
  std::size_t batch = 16;
  std::size_t crop = 64;
  double lr = 1e-3;
  std::size_t lr_drop_epoch = 40;
  bool loss_e = false;
  bool loss_t = false;
  std::string weighting = "fixed";
  std::string fixed_w = "1,0,0";
  std::string ref_layer;
  std::size_t blocks = 8;
  std::string ca = "on";
  std::uint64_t seed = 0;
};

struct DerainOptions {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string residual_dir;
};

struct EvalOptions {
  std::string restored;
  std::string truth;
  std::string out = "-";
};

struct GradcheckCliOptions {
  std::size_t trials = 5;
  std::uint64_t seed = 2024;
  bool no_model = false;
};

struct AblateOptions {
  bool desk = false;
  std::string data;
  std::size_t holdout = 4;
  std::size_t steps = 0;
  std::string out = "ablation.csv";
  std::uint64_t seed = 0;
};

RainParams rain_params(const SynthOptions& o, std::uint64_t seed) {
  RainParams p;
  if (o.rain == "light") p = RainParams::light(seed);
  else if (o.rain == "moderate") p = RainParams::moderate(seed);
  else if (o.rain == "heavy") p = RainParams::heavy(seed);
  else throw ConfigError("--rain must be light|moderate|heavy, got '" + o.rain + "'");
  if (o.density >= 0.0) p.density = o.density;
  if (o.length >= 0.0) p.length = o.length;
  if (o.angle < 1e8) p.angle_deg = o.angle;
  if (o.intensity >= 0.0) p.intensity = o.intensity;
  p.validate();
  return p;
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  if (o.format != "png" && o.format != "ppm") {
    throw ConfigError("--format must be png or ppm");
  }
  Rng rng(o.seed);
  Corpus corpus;
  if (!o.clean_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.clean_dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      corpus.pairs.push_back(
          synthesize_rain(read_image(f), rain_params(o, rng.next()), f.stem().string()));
    }
  } else {
    if (o.size < 1) throw ConfigError("--size must be >= 1");
    constexpr Pattern kPatterns[] = {Pattern::kGradient, Pattern::kCheckerboard,
                                     Pattern::kBlobs};
    for (std::size_t i = 0; i < o.count; ++i) {
      const Tensor clean = procedural_image(kPatterns[i % 3], o.size, o.size, rng.next());
      char id[16];
      std::snprintf(id, sizeof(id), "%03zu", i);
      corpus.pairs.push_back(synthesize_rain(clean, rain_params(o, rng.next()), id));
    }
  }
  save_corpus(o.out, corpus, "." + o.format);
  out << "wrote " << corpus.size() << " pairs to " << o.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  ModelConfig mcfg;
  mcfg.num_residual_blocks = o.blocks;
  mcfg.use_channel_attention = parse_on_off(o.ca);
  mcfg.seed = o.seed;
  TrainConfig tcfg;
  tcfg.learning_rate = o.lr;
  tcfg.lr_drop_epoch = o.lr_drop_epoch;
  tcfg.epochs = o.epochs;
  tcfg.max_steps = o.max_steps;
  tcfg.batch_size = o.batch;
  tcfg.crop = o.crop;
  if (o.desk) {
    tcfg.batch_size = TrainConfig::desk().batch_size;
    tcfg.crop = TrainConfig::desk().crop;
  }
  tcfg.use_edge_loss = o.loss_e;
  tcfg.use_texture_loss = o.loss_t;
  tcfg.strategy = parse_strategy(o.weighting);
  tcfg.fixed_weights = parse_triple(o.fixed_w);
  tcfg.reference_layer = o.ref_layer;
  tcfg.seed = o.seed;
  tcfg.checkpoint_path = o.out;
  tcfg.log_path = o.log;

  const Corpus corpus = load_corpus(o.data);
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume, mcfg);

  const auto start = std::chrono::steady_clock::now();
  const TrainResult result =
      train(corpus, mcfg, tcfg, resume ? &*resume : nullptr, [&](const LogRow& row) {
        if (row.step % 10 == 0) {
          err << "step " << row.step << " epoch " << row.epoch << " lr "
              << format_number(row.lr) << " total " << format_number(row.report.total)
              << "\n";
        }
      });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "trained " << result.log.size() << " steps (total " << result.checkpoint.step
      << ") in " << format_number(seconds) << " s; checkpoint " << o.out << "\n";
  return kExitOk;
}

int cmd_derain(const DerainOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  auto process = [&](const fs::path& in, const fs::path& dst) {
    const Inference inf = derain(ckpt.params, ckpt.model, read_image(in));
    write_image(dst, inf.restored);
    if (!o.residual_dir.empty()) {
      write_image(fs::path(o.residual_dir) / dst.filename(), inf.residual);
    }
  };
  if (!o.residual_dir.empty()) fs::create_directories(o.residual_dir);
  std::size_t count = 0;
  if (fs::is_directory(o.input)) {
    fs::create_directories(o.out);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.input)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      process(f, fs::path(o.out) / f.filename());
      ++count;
    }
  } else {
    if (!fs::exists(o.input)) throw DataError("input not found: " + o.input);
    fs::path dst = o.out;
    if (fs::is_directory(dst)) dst /= fs::path(o.input).filename();
    process(o.input, dst);
    ++count;
  }
  out << "derained " << count << " image(s)\n";
  return kExitOk;
}

std::map<std::string, fs::path> index_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, fs::path> index;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_image_file(e.path())) continue;
    if (!index.emplace(corpus_stem(e.path()), e.path()).second) {
      throw DataError("duplicate image id in " + dir.string() + ": " +
                      corpus_stem(e.path()));
    }
  }
  return index;
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto restored = index_images(o.restored);
  const auto truth = index_images(o.truth);
  std::vector<RestoredPair> pairs;
  for (const auto& [id, path] : restored) {
    auto it = truth.find(id);
    if (it == truth.end()) throw DataError("no ground truth for " + path.string());
    pairs.push_back({id, read_image(path), read_image(it->second)});
  }
  for (const auto& [id, path] : truth) {
    if (!restored.count(id)) throw DataError("no restored image for " + path.string());
  }
  const MetricSummary summary = evaluate_corpus(pairs);
  if (o.out == "-") {
    write_metrics_csv(out, summary);
  } else {
    std::ofstream f(o.out);
    if (!f) throw DataError("cannot write " + o.out);
    write_metrics_csv(f, summary);
    out << "mean psnr " << format_number(summary.mean_psnr) << " dB, mean ssim "
        << format_number(summary.mean_ssim) << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const GradcheckCliOptions& o, std::ostream& out) {
  SuiteOptions so;
  so.trials = o.trials;
  so.seed = o.seed;
  so.include_model = !o.no_model;
  bool ok = true;
  for (const SuiteEntry& e : run_gradcheck_suite(so)) {
    out << e.name << ": max rel err " << format_number(e.max_rel_error) << " over "
        << e.checked << " coords, " << e.trials << " inputs (h=" << format_number(e.step)
        << ", tol=" << format_number(e.tol) << ") " << (e.passed ? "ok" : "FAIL") << "\n";
    ok = ok && e.passed;
  }
  out << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return ok ? kExitOk : kExitNumeric;
}

int cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream& err) {
  if (!o.desk && o.data.empty()) {
    throw ConfigError("ablate needs --data DIR or --desk");
  }
  Corpus corpus = o.data.empty() ? desk_corpus(14, o.seed) : load_corpus(o.data);
  if (corpus.size() <= o.holdout) {
    throw DataError("corpus of " + std::to_string(corpus.size()) +
                    " pairs is too small for a holdout of " + std::to_string(o.holdout));
  }
  auto [train_set, eval_set] = corpus.split(o.holdout);
  ModelConfig mcfg;
  mcfg.seed = o.seed;
  TrainConfig tcfg = o.desk ? TrainConfig::desk() : TrainConfig{};
  tcfg.seed = o.seed;
  tcfg.max_steps = o.steps > 0 ? o.steps : (o.desk ? 40 : 0);
  const auto rows = run_ablation(train_set, eval_set, mcfg, tcfg, [&](const AblationRow& r) {
    err << r.preset.name << ": ssim " << format_number(r.mean_ssim) << " psnr "
        << format_number(r.mean_psnr) << "\n";
  });
  if (o.out == "-") {
    write_ablation_csv(out, rows);
  } else {
    std::ofstream f(o.out);
    if (!f) throw DataError("cannot write " + o.out);
    write_ablation_csv(f, rows);
    out << "wrote " << rows.size() << " presets to " << o.out << "\n";
  }
  return kExitOk;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || trim(t.substr(0, eq)).empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return entries;
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task single-image de-raining: synthesis, training, inference, "
               "evaluation and ablation."};
  app.name("menet");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.get_formatter()->column_width(34);
  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "Flat key=value file; command-line flags override its values");
  };

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Write a synthetic rainy/clean corpus");
  synth->add_option("--out", so.out, "Corpus root (rain/ and norain/ are created)")->required();
  synth->add_option("--clean", so.clean_dir, "Directory of clean images to rain on "
                                             "(default: procedural scenes)");
  synth->add_option("--count", so.count, "Number of procedural images")->capture_default_str();
  synth->add_option("--size", so.size, "Procedural image side length")->capture_default_str();
  synth->add_option("--rain", so.rain, "Rain preset: light|moderate|heavy")->capture_default_str();
  synth->add_option("--density", so.density, "Override streak seed density in [0,1]");
  synth->add_option("--length", so.length, "Override streak length in pixels");
  synth->add_option("--angle", so.angle, "Override streak angle from vertical, degrees");
  synth->add_option("--intensity", so.intensity, "Override streak intensity in [0,1]");
  synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();
  synth->add_option("--format", so.format, "Image format: png|ppm")->capture_default_str();
  add_config(synth);

  TrainOptions to;
  auto* trn = app.add_subcommand("train", "Train a model on a corpus");
  trn->add_option("--data", to.data, "Corpus root with rain/ and norain/")->required();
  trn->add_option("--out", to.out, "Checkpoint path")->capture_default_str();
  trn->add_option("--log", to.log, "Training log CSV")->capture_default_str();
  trn->add_option("--resume", to.resume, "Continue from this checkpoint");
  trn->add_flag("--desk", to.desk, "Desk scale: batch 4, crop 32");
  trn->add_option("--epochs", to.epochs, "Training epochs")->capture_default_str();
  trn->add_option("--max-steps", to.max_steps, "Stop after this many steps (0: no cap)")
      ->capture_default_str();
  trn->add_option("--batch", to.batch, "Batch size")->capture_default_str();
  trn->add_option("--crop", to.crop, "Augmentation crop, multiple of 4 (0: whole images)")
      ->capture_default_str();
  trn->add_option("--lr", to.lr, "Initial learning rate")->capture_default_str();
  trn->add_option("--lr-drop-epoch", to.lr_drop_epoch, "Epoch from which lr is divided by 10")
      ->capture_default_str();
  trn->add_flag("--loss-e", to.loss_e, "Enable the edge-aware loss");
  trn->add_flag("--loss-t", to.loss_t, "Enable the texture matching loss");
  trn->add_option("--weighting", to.weighting, "Task weighting: fixed|gb|lb")
      ->capture_default_str();
  trn->add_option("--fixed-w", to.fixed_w, "Fixed weights p,e,t")->capture_default_str();
  trn->add_option("--ref-layer", to.ref_layer,
                  "gb reference parameter (default: last trunk conv kernel)");
  trn->add_option("--blocks", to.blocks, "Residual blocks (8, or 16 for the deep model)")
      ->capture_default_str();
  trn->add_option("--ca", to.ca, "Channel attention: on|off")->capture_default_str();
  trn->add_option("--seed", to.seed, "Seed for initialisation and batch order")
      ->capture_default_str();
  add_config(trn);

  DerainOptions dop;
  auto* der = app.add_subcommand("derain", "De-rain an image or a directory of images");
  der->add_option("--checkpoint", dop.checkpoint, "Trained checkpoint")->required();
  der->add_option("--input", dop.input, "Image file or directory")->required();
  der->add_option("--out", dop.out, "Output file or directory")->required();
  der->add_option("--residual", dop.residual_dir, "Also write the predicted rain layer here");
  add_config(der);

  EvalOptions eo;
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM of restored images against ground truth");
  ev->add_option("--restored", eo.restored, "Directory of restored images")->required();
  ev->add_option("--truth", eo.truth, "Directory of clean images")->required();
  ev->add_option("--out", eo.out, "Metrics CSV ('-' for stdout)")->capture_default_str();
  add_config(ev);

  GradcheckCliOptions go;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gc->add_option("--trials", go.trials, "Random inputs per case")->capture_default_str();
  gc->add_option("--seed", go.seed, "Random seed")->capture_default_str();
  gc->add_flag("--no-model", go.no_model, "Skip the end-to-end model case");
  add_config(gc);

  AblateOptions ao;
  auto* ab = app.add_subcommand("ablate", "Train and score the eight ablation presets");
  ab->add_flag("--desk", ao.desk, "Desk scale: synthetic corpus, batch 4, crop 32, 40 steps");
  ab->add_option("--data", ao.data, "Corpus root (default with --desk: synthetic)");
  ab->add_option("--holdout", ao.holdout, "Pairs held out for scoring")->capture_default_str();
  ab->add_option("--steps", ao.steps, "Training steps per preset (0: desk 40 / full run)")
      ->capture_default_str();
  ab->add_option("--out", ao.out, "Ablation CSV ('-' for stdout)")->capture_default_str();
  ab->add_option("--seed", ao.seed, "Random seed")->capture_default_str();
  add_config(ab);

  std::vector<std::string> args = args_in;
  try {
    // Config-file entries go right after the command name so that later
    // command-line flags win.
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      CLI::App* sub = nullptr;
      try {
        sub = app.get_subcommand(args[0]);
      } catch (const CLI::OptionNotFound&) {
        throw ConfigError("--config must follow a command");
      }
      std::vector<std::string> injected;
      for (const auto& [key, value] : read_config_file(path)) {
        if (key == "config" || sub->get_option_no_throw("--" + key) == nullptr) {
          throw ConfigError("unknown config key '" + key + "' in " + path);
        }
        injected.push_back("--" + key + "=" + value);
      }
      args.insert(args.begin() + 1, injected.begin(), injected.end());
      break;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(so, out);
    if (*trn) return cmd_train(to, out, err);
    if (*der) return cmd_derain(dop, out);
    if (*ev) return cmd_eval(eo, out);
    if (*gc) return cmd_gradcheck(go, out);
    if (*ab) return cmd_ablate(ao, out, err);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace menet
