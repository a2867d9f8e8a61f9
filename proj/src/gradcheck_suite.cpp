#include "menet/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "menet/losses.hpp"
#include "menet/model.hpp"
#include "menet/random.hpp"

namespace menet {

namespace {

using V = Var<double>;
using Tp = Tape<double>;

struct Trial {
  Tensor64 x;
  ScalarFn64 f;
  /// Extra admissibility test beyond the relu margin (e.g. clamp bounds).
  std::function<bool()> admissible;
};

struct Case {
  std::string name;
  std::function<Trial(Rng&)> make;
  bool model = false;
};

Tensor64 normal(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

Tensor64 uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor64 t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [lo, hi] with random sign.
Tensor64 away_from_zero(Rng& rng, Shape shape, double lo, double hi) {
  Tensor64 t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return t;
}

// Random linear functional of y, so every output element carries a distinct
// upstream gradient.
V probe(Tp& tape, V y, const Tensor64& w) { return sum(mul(y, tape.constant(w))); }

Case unary(std::string name, Shape in, Shape out,
           std::function<V(Tp&, V)> op, double lo = -1.0, double hi = 1.0) {
  return {std::move(name), [=](Rng& rng) {
            Tensor64 w = normal(rng, out);
            Tensor64 x = uniform(rng, in, lo, hi);
            return Trial{x, [=](Tp& t, V v) { return probe(t, op(t, v), w); }, {}};
          }};
}

Case binary_elementwise(const std::string& name, Elementwise kind, bool lhs) {
  return {"elementwise." + name + (lhs ? ".lhs" : ".rhs"), [=](Rng& rng) {
            const Shape s{2, 3, 4};
            Tensor64 w = normal(rng, s);
            Tensor64 c = away_from_zero(rng, s, 0.5, 1.5);
            Tensor64 x = away_from_zero(rng, s, 0.5, 1.5);
            return Trial{x,
                         [=](Tp& t, V v) {
                           V other = t.constant(c);
                           return probe(t, lhs ? elementwise(v, other, kind)
                                               : elementwise(other, v, kind),
                                        w);
                         },
                         {}};
          }};
}

Case scalar_elementwise(const std::string& name, Elementwise kind) {
  return {"elementwise." + name + ".scalar", [=](Rng& rng) {
            const Shape s{3, 5};
            Tensor64 w = normal(rng, s);
            const double c = rng.uniform(0.5, 2.0);
            Tensor64 x = away_from_zero(rng, s, 0.5, 1.5);
            return Trial{x, [=](Tp& t, V v) { return probe(t, elementwise(v, c, kind), w); },
                         {}};
          }};
}

Case conv_case(const std::string& which) {
  return {"conv2d." + which, [=](Rng& rng) {
            const Shape xs{2, 3, 5, 5}, ks{4, 3, 3, 3}, bs{4};
            Tensor64 input = normal(rng, xs);
            Tensor64 kernel = normal(rng, ks, 0.5);
            Tensor64 bias = normal(rng, bs);
            Tensor64 w = normal(rng, Shape{2, 4, 5, 5});
            const std::size_t pad = 1;
            Tensor64 x = which == "input" ? input : which == "kernel" ? kernel : bias;
            return Trial{x,
                         [=](Tp& t, V v) {
                           V in = which == "input" ? v : t.constant(input);
                           V k = which == "kernel" ? v : t.constant(kernel);
                           V b = which == "bias" ? v : t.constant(bias);
                           return probe(t, conv2d(in, k, std::optional<V>(b), pad), w);
                         },
                         {}};
          }};
}

Case matmul_case(bool lhs) {
  return {std::string("matmul.") + (lhs ? "lhs" : "rhs"), [=](Rng& rng) {
            Tensor64 a = normal(rng, Shape{3, 4});
            Tensor64 b = normal(rng, Shape{4, 2});
            Tensor64 w = normal(rng, Shape{3, 2});
            return Trial{lhs ? a : b,
                         [=](Tp& t, V v) {
                           V l = lhs ? v : t.constant(a);
                           V r = lhs ? t.constant(b) : v;
                           return probe(t, matmul(l, r), w);
                         },
                         {}};
          }};
}

Case scale_channels_case(bool gate) {
  return {std::string("scale_channels.") + (gate ? "gate" : "input"), [=](Rng& rng) {
            Tensor64 x = normal(rng, Shape{2, 3, 3, 3});
            Tensor64 g = normal(rng, Shape{2, 3, 1, 1});
            Tensor64 w = normal(rng, Shape{2, 3, 3, 3});
            return Trial{gate ? g : x,
                         [=](Tp& t, V v) {
                           V in = gate ? t.constant(x) : v;
                           V gv = gate ? v : t.constant(g);
                           return probe(t, scale_channels(in, gv), w);
                         },
                         {}};
          }};
}

Case loss_case(const std::string& name,
               std::function<V(V clean, V restored)> loss, Shape shape) {
  return {"loss." + name, [=](Rng& rng) {
            // Disjoint ranges keep every Gram difference away from zero; near
            // b ~ B the gradient vanishes and curvature dominates the
            // central difference.
            Tensor64 clean = uniform(rng, shape, 0.5, 1.0);
            Tensor64 restored = uniform(rng, shape, 0.0, 0.5);
            return Trial{restored,
                         [=](Tp& t, V v) { return loss(t.constant(clean), v); }, {}};
          }};
}

// Parameters for a single block or attention unit, He-scaled.
ParameterStore64 random_block_params(Rng& rng, std::size_t c, std::size_t reduction,
                                     bool convs, bool ca) {
  ParameterStore64 store;
  auto add_conv = [&](const std::string& name, std::size_t out, std::size_t in,
                      std::size_t k) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    store.add(name + ".kernel", normal(rng, Shape{out, in, k, k}, std_dev));
    store.add(name + ".bias", normal(rng, Shape{out}, 0.1));
  };
  if (convs) {
    add_conv("b.conv1", c, c, 3);
    add_conv("b.conv2", c, c, 3);
  }
  if (ca) {
    add_conv("b.ca.down", c / reduction, c, 1);
    add_conv("b.ca.up", c, c / reduction, 1);
  }
  return store;
}

Case channel_attention_case() {
  return {"channel_attention", [](Rng& rng) {
            const std::size_t c = 8, r = 4;
            auto store = std::make_shared<ParameterStore64>(
                random_block_params(rng, c, r, false, true));
            Tensor64 x = normal(rng, Shape{1, c, 4, 4});
            Tensor64 w = normal(rng, x.shape());
            return Trial{x,
                         [=](Tp& t, V v) {
                           ParamVars<double> p(t, *store, false);
                           return probe(t, channel_attention(v, p, "b.ca", r), w);
                         },
                         {}};
          }};
}

Case residual_block_case() {
  return {"residual_block", [](Rng& rng) {
            const std::size_t c = 4, r = 2;
            auto store = std::make_shared<ParameterStore64>(
                random_block_params(rng, c, r, true, true));
            Tensor64 x = normal(rng, Shape{1, c, 4, 4});
            Tensor64 w = normal(rng, x.shape());
            return Trial{x,
                         [=](Tp& t, V v) {
                           ParamVars<double> p(t, *store, false);
                           return probe(t, residual_block(v, p, "b", true, r), w);
                         },
                         {}};
          }};
}

Case model_case() {
  return {"model.forward", [](Rng& rng) {
            ModelConfig cfg;
            cfg.seed = rng.next();
            auto store = std::make_shared<ParameterStore64>(build_model(cfg).cast<double>());
            for (std::size_t i = 0; i < store->size(); ++i) {
              const std::string& name = store->name(i);
              Tensor64& t = store->tensor(i);
              if (name.ends_with(".bias")) {
                for (double& v : t.data()) v = 0.05 * rng.normal();
              } else if (name.ends_with(".conv2.kernel")) {
                const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
                const double std_dev = 0.3 * std::sqrt(2.0 / fan_in);
                for (double& v : t.data()) v = std_dev * rng.normal();
              }
            }
            Tensor64 rainy = uniform(rng, Shape{1, 3, 8, 8}, 0.2, 0.8);
            Tensor64 clean = uniform(rng, Shape{1, 3, 8, 8}, 0.0, 1.0);
            auto fn = [=](Tp& t, V v) {
              ParamVars<double> p(t, *store, false);
              ForwardResult<double> out = forward(v, p, cfg);
              return pixel_loss(t.constant(clean), out.restored);
            };
            auto admissible = [=]() {
              Tp t;
              ParamVars<double> p(t, *store, false);
              ForwardResult<double> out = forward(t.constant(rainy), p, cfg);
              const Tensor64& r = out.residual.value();
              for (std::size_t i = 0; i < r.numel(); ++i) {
                const double b = rainy[i] - r[i];
                if (b < 0.01 || b > 0.99) return false;
              }
              return true;
            };
            return Trial{rainy, fn, admissible};
          },
          true};
}

std::vector<Case> all_cases() {
  std::vector<Case> cases;
  cases.push_back(binary_elementwise("add", Elementwise::kAdd, true));
  cases.push_back(binary_elementwise("add", Elementwise::kAdd, false));
  cases.push_back(binary_elementwise("sub", Elementwise::kSub, true));
  cases.push_back(binary_elementwise("sub", Elementwise::kSub, false));
  cases.push_back(binary_elementwise("mul", Elementwise::kMul, true));
  cases.push_back(binary_elementwise("mul", Elementwise::kMul, false));
  cases.push_back(binary_elementwise("div", Elementwise::kDiv, true));
  cases.push_back(binary_elementwise("div", Elementwise::kDiv, false));
  cases.push_back(scalar_elementwise("add", Elementwise::kAdd));
  cases.push_back(scalar_elementwise("sub", Elementwise::kSub));
  cases.push_back(scalar_elementwise("mul", Elementwise::kMul));
  cases.push_back(scalar_elementwise("div", Elementwise::kDiv));
  cases.push_back(conv_case("input"));
  cases.push_back(conv_case("kernel"));
  cases.push_back(conv_case("bias"));
  cases.push_back(unary("activation.relu", {2, 3, 4}, {2, 3, 4},
                        [](Tp&, V v) { return relu(v); }));
  cases.push_back(unary("activation.sigmoid", {2, 3, 4}, {2, 3, 4},
                        [](Tp&, V v) { return sigmoid(v); }, -4.0, 4.0));
  cases.push_back(unary("desubpixel", {1, 2, 6, 6}, {1, 8, 3, 3},
                        [](Tp&, V v) { return desubpixel(v, 2); }));
  cases.push_back(unary("subpixel", {1, 9, 2, 2}, {1, 1, 6, 6},
                        [](Tp&, V v) { return subpixel(v, 3); }));
  cases.push_back(unary("reduce.sum", {3, 4}, {1}, [](Tp&, V v) { return sum(v); }));
  cases.push_back(unary("reduce.mean", {3, 4}, {1}, [](Tp&, V v) { return mean(v); }));
  cases.push_back(unary("reduce.global_avg_pool", {2, 3, 4, 4}, {2, 3, 1, 1},
                        [](Tp&, V v) { return global_avg_pool(v); }));
  cases.push_back(unary("reduce.frobenius_sq", {3, 4}, {1},
                        [](Tp&, V v) { return frobenius_sq(v); }));
  cases.push_back(matmul_case(true));
  cases.push_back(matmul_case(false));
  cases.push_back(unary("transpose", {3, 5}, {5, 3}, [](Tp&, V v) { return transpose(v); }));
  cases.push_back(scale_channels_case(false));
  cases.push_back(scale_channels_case(true));
  cases.push_back(unary("clamp", {4, 6}, {4, 6},
                        [](Tp&, V v) { return clamp(v, 0.0, 1.0); }, -0.5, 1.5));
  cases.push_back(unary("unfold_patches", {2, 2, 4, 4}, {2, 8, 4},
                        [](Tp&, V v) { return unfold_patches(v, 2); }));
  cases.push_back(unary("batch_item", {3, 2, 2, 2}, {2, 2, 2},
                        [](Tp&, V v) { return batch_item(v, 1); }));
  cases.push_back(loss_case("pixel", [](V c, V r) { return pixel_loss(c, r); },
                            {2, 3, 4, 4}));
  cases.push_back(loss_case("edge_aware",
                            [](V c, V r) {
                              static const EdgeLossNetwork phi(3);
                              return edge_aware_loss(c, r, phi);
                            },
                            {2, 3, 4, 4}));
  cases.push_back(loss_case("texture_matching",
                            [](V c, V r) {
                              return texture_matching_loss(c, r, TextureLossConfig{4});
                            },
                            {2, 3, 8, 8}));
  cases.push_back(channel_attention_case());
  cases.push_back(residual_block_case());
  cases.push_back(model_case());
  return cases;
}

bool clear_of_kinks(const Trial& trial, double step) {
  if (trial.admissible && !trial.admissible()) return false;
  Tp tape;
  (void)trial.f(tape, tape.constant(trial.x));
  return tape.relu_margin() > 10.0 * step;
}

bool clamp_clear(const Tensor64& x, double step) {
  for (double v : x.data()) {
    if (std::abs(v) <= 10.0 * step || std::abs(v - 1.0) <= 10.0 * step) return false;
  }
  return true;
}

}  // namespace

std::vector<std::string> gradcheck_case_names(bool include_model) {
  std::vector<std::string> names;
  for (const Case& c : all_cases()) {
    if (c.model && !include_model) continue;
    names.push_back(c.name);
  }
  return names;
}

std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options) {
  std::vector<SuiteEntry> entries;
  Rng rng(options.seed);
  for (const Case& c : all_cases()) {
    if (c.model && !options.include_model) continue;
    SuiteEntry entry;
    entry.name = c.name;
    entry.step = c.model ? options.model_step : options.step;
    entry.tol = c.model ? options.model_tol : options.tol;
    GradcheckOptions go;
    go.step = entry.step;
    go.tol = entry.tol;
    if (c.model) go.full_limit = 64;
    for (std::size_t trial_index = 0; trial_index < options.trials; ++trial_index) {
      Trial trial = c.make(rng);
      for (int attempt = 0; attempt < 100; ++attempt) {
        const bool clamp_ok = c.name != "clamp" || clamp_clear(trial.x, entry.step);
        if (clamp_ok && clear_of_kinks(trial, entry.step)) break;
        trial = c.make(rng);
      }
      go.seed = rng.next();
      const GradcheckReport report = gradcheck(trial.f, trial.x, go);
      entry.max_rel_error = std::max(entry.max_rel_error, report.max_rel_error);
      entry.checked += report.checked;
      entry.passed = entry.passed && report.passed;
      ++entry.trials;
    }
    entries.push_back(entry);
  }
  return entries;
}

}  // namespace menet
