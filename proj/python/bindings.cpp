#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <sstream>
#include <variant>

#include "menet/cli.hpp"
#include "menet/errors.hpp"
#include "menet/gradcheck_suite.hpp"
#include "menet/image_io.hpp"
#include "menet/metrics.hpp"
#include "menet/train.hpp"

namespace py = pybind11;
using namespace menet;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
BasicTensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<T> data(a.data(), a.data() + a.size());
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T>
py::array_t<T> to_array(const BasicTensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  return py::array_t<T>(shape, t.raw());
}

TaskMask to_mask(const std::array<bool, kTaskCount>& m) { return {m[0], m[1], m[2]}; }

RainParams rain_params(const std::string& preset, std::uint64_t seed,
                       std::optional<double> density, std::optional<double> length,
                       std::optional<double> angle, std::optional<double> intensity) {
  RainParams p;
  if (preset == "light") p = RainParams::light(seed);
  else if (preset == "moderate") p = RainParams::moderate(seed);
  else if (preset == "heavy") p = RainParams::heavy(seed);
  else throw ConfigError("unknown rain preset '" + preset + "' (light|moderate|heavy)");
  if (density) p.density = *density;
  if (length) p.length = *length;
  if (angle) p.angle_deg = *angle;
  if (intensity) p.intensity = *intensity;
  p.validate();
  return p;
}

Pattern parse_pattern(const std::string& name) {
  if (name == "gradient") return Pattern::kGradient;
  if (name == "checkerboard") return Pattern::kCheckerboard;
  if (name == "blobs") return Pattern::kBlobs;
  throw ConfigError("unknown pattern '" + name + "' (gradient|checkerboard|blobs)");
}

py::dict log_row_dict(const LogRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["epoch"] = r.epoch;
  d["lr"] = r.lr;
  d["loss_p"] = r.report.l_p;
  d["loss_e"] = r.report.l_e;
  d["loss_t"] = r.report.l_t;
  d["w_p"] = r.report.w_p;
  d["w_e"] = r.report.w_e;
  d["w_t"] = r.report.w_t;
  d["total"] = r.report.total;
  return d;
}

using PairList = std::vector<std::pair<Array<float>, Array<float>>>;

Corpus corpus_from(const std::variant<std::string, PairList>& data) {
  if (const auto* path = std::get_if<std::string>(&data)) return load_corpus(*path);
  Corpus c;
  std::size_t i = 0;
  for (const auto& [rainy, clean] : std::get<PairList>(data)) {
    c.pairs.push_back({to_tensor(rainy), to_tensor(clean), std::to_string(i++)});
  }
  return c;
}

}  // namespace

PYBIND11_MODULE(_menet, m) {
  m.doc() = "C++ core of the multi-task de-raining network";

  auto shape_error = py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", data_error.ptr());
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  (void)shape_error;
  (void)config_error;

  // ---- tensor ops (float64) ----
  m.def("desubpixel", [](const Array<double>& x, std::size_t r) {
    return to_array(desubpixel_tensor(to_tensor(x), r));
  }, py::arg("x"), py::arg("ratio"), "[N,C,H,W] -> [N,C*r*r,H/r,W/r]");
  m.def("subpixel", [](const Array<double>& x, std::size_t r) {
    return to_array(subpixel_tensor(to_tensor(x), r));
  }, py::arg("x"), py::arg("ratio"), "[N,C*r*r,H,W] -> [N,C,H*r,W*r]");
  m.def("conv2d", [](const Array<double>& x, const Array<double>& k,
                     std::optional<Array<double>> bias, std::size_t padding) {
    Tape<double> tape;
    std::optional<Var<double>> b;
    if (bias) b = tape.constant(to_tensor(*bias));
    return to_array(conv2d(tape.constant(to_tensor(x)), tape.constant(to_tensor(k)), b, padding).value());
  }, py::arg("x"), py::arg("kernel"), py::arg("bias") = py::none(), py::arg("padding") = 1);

  // ---- losses ----
  m.def("pixel_loss", [](const Array<double>& b, const Array<double>& r) {
    return pixel_loss(to_tensor(b), to_tensor(r));
  }, py::arg("clean"), py::arg("restored"));
  m.def("edge_aware_loss", [](const Array<double>& b, const Array<double>& r) {
    return edge_aware_loss(to_tensor(b), to_tensor(r));
  }, py::arg("clean"), py::arg("restored"));
  m.def("texture_matching_loss", [](const Array<double>& b, const Array<double>& r, std::size_t patch) {
    return texture_matching_loss(to_tensor(b), to_tensor(r), TextureLossConfig{patch});
  }, py::arg("clean"), py::arg("restored"), py::arg("patch") = 4);

  // ---- weighting ----
  m.def("balanced_weights", [](const std::vector<double>& v) { return balanced_weights(v); },
        py::arg("values"));
  m.def("lb_weights", [](const std::array<double, kTaskCount>& losses,
                         const std::array<bool, kTaskCount>& enabled) {
    return lb_weights(losses, to_mask(enabled)).w;
  }, py::arg("losses"), py::arg("enabled") = std::array<bool, 3>{true, true, true});
  m.def("gb_weights", [](const std::array<double, kTaskCount>& norms,
                         const std::array<bool, kTaskCount>& enabled) {
    return gb_weights(norms, to_mask(enabled)).w;
  }, py::arg("grad_norms"), py::arg("enabled") = std::array<bool, 3>{true, true, true});

  // ---- metrics ----
  m.def("psnr", [](const Array<double>& x, const Array<double>& y, double max_val) {
    return psnr(to_tensor(x), to_tensor(y), max_val);
  }, py::arg("x"), py::arg("y"), py::arg("max_val") = 1.0);
  m.def("ssim", [](const Array<double>& x, const Array<double>& y) {
    return ssim(to_tensor(x), to_tensor(y));
  }, py::arg("x"), py::arg("y"));

  // ---- data ----
  m.def("procedural_image", [](const std::string& pattern, std::size_t h, std::size_t w,
                               std::uint64_t seed) {
    return to_array(procedural_image(parse_pattern(pattern), h, w, seed));
  }, py::arg("pattern"), py::arg("height"), py::arg("width"), py::arg("seed") = 0);
  m.def("rain_layer", [](std::size_t h, std::size_t w, const std::string& rain, std::uint64_t seed,
                         std::optional<double> density, std::optional<double> length,
                         std::optional<double> angle, std::optional<double> intensity) {
    return to_array(rain_layer(h, w, rain_params(rain, seed, density, length, angle, intensity)));
  }, py::arg("height"), py::arg("width"), py::arg("rain") = "light", py::arg("seed") = 0,
     py::arg("density") = py::none(), py::arg("length") = py::none(),
     py::arg("angle") = py::none(), py::arg("intensity") = py::none());
  m.def("synthesize_rain", [](const Array<float>& clean, const std::string& rain, std::uint64_t seed,
                              std::optional<double> density, std::optional<double> length,
                              std::optional<double> angle, std::optional<double> intensity) {
    const RainParams p = rain_params(rain, seed, density, length, angle, intensity);
    return to_array(synthesize_rain(to_tensor(clean), p).rainy);
  }, py::arg("clean"), py::arg("rain") = "light", py::arg("seed") = 0,
     py::arg("density") = py::none(), py::arg("length") = py::none(),
     py::arg("angle") = py::none(), py::arg("intensity") = py::none(),
     "O = clamp(B + R, 0, 1) for a [3,H,W] image in [0,1].");
  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); },
        py::arg("path"));
  m.def("write_image", [](const std::filesystem::path& p, const Array<float>& img) {
    write_image(p, to_tensor(img));
  }, py::arg("path"), py::arg("image"));

  // ---- model, training, inference ----
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](std::size_t base, std::size_t trunk, std::size_t blocks, bool ca,
                       std::size_t reduction, std::uint64_t seed) {
             ModelConfig c;
             c.base_channels = base;
             c.trunk_channels = trunk;
             c.num_residual_blocks = blocks;
             c.use_channel_attention = ca;
             c.ca_reduction = reduction;
             c.seed = seed;
             c.validate();
             return c;
           }),
           py::arg("base_channels") = 16, py::arg("trunk_channels") = 64,
           py::arg("num_residual_blocks") = 8, py::arg("use_channel_attention") = true,
           py::arg("ca_reduction") = 4, py::arg("seed") = 0)
      .def_readwrite("base_channels", &ModelConfig::base_channels)
      .def_readwrite("trunk_channels", &ModelConfig::trunk_channels)
      .def_readwrite("num_residual_blocks", &ModelConfig::num_residual_blocks)
      .def_readwrite("use_channel_attention", &ModelConfig::use_channel_attention)
      .def_readwrite("ca_reduction", &ModelConfig::ca_reduction)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("__repr__", [](const ModelConfig& c) {
        std::ostringstream s;
        s << "ModelConfig(base_channels=" << c.base_channels << ", trunk_channels="
          << c.trunk_channels << ", num_residual_blocks=" << c.num_residual_blocks
          << ", use_channel_attention=" << (c.use_channel_attention ? "True" : "False")
          << ", ca_reduction=" << c.ca_reduction << ", seed=" << c.seed << ")";
        return s.str();
      });

  m.def("parameter_count", [](const ModelConfig& c) { return build_model(c).element_count(); },
        py::arg("config") = ModelConfig{});

  m.def("train",
        [](const std::variant<std::string, PairList>& data, const std::string& checkpoint,
           const ModelConfig& model, std::size_t max_steps, std::size_t epochs,
           std::size_t batch_size, std::size_t crop, double learning_rate, bool edge_loss,
           bool texture_loss, const std::string& weighting,
           const std::array<double, kTaskCount>& fixed_weights, std::uint64_t seed,
           const std::string& log, std::optional<std::string> resume) {
          const Corpus corpus = corpus_from(data);
          TrainConfig t;
          t.max_steps = max_steps;
          t.epochs = epochs;
          t.batch_size = batch_size;
          t.crop = crop;
          t.learning_rate = learning_rate;
          t.use_edge_loss = edge_loss;
          t.use_texture_loss = texture_loss;
          t.strategy = parse_strategy(weighting);
          t.fixed_weights = fixed_weights;
          t.seed = seed;
          t.checkpoint_path = checkpoint;
          t.log_path = log;
          std::optional<Checkpoint> from;
          if (resume) from = load_checkpoint(*resume, model);
          TrainResult res;
          {
            py::gil_scoped_release release;
            res = train(corpus, model, t, from ? &*from : nullptr);
          }
          py::list rows;
          for (const LogRow& r : res.log) rows.append(log_row_dict(r));
          return rows;
        },
        py::arg("data"), py::arg("checkpoint") = "", py::arg("model") = ModelConfig{},
        py::arg("max_steps") = 0, py::arg("epochs") = 100, py::arg("batch_size") = 4,
        py::arg("crop") = 32, py::arg("learning_rate") = 1e-3, py::arg("edge_loss") = false,
        py::arg("texture_loss") = false, py::arg("weighting") = "fixed",
        py::arg("fixed_weights") = std::array<double, 3>{1.0, 0.0, 0.0}, py::arg("seed") = 0,
        py::arg("log") = "", py::arg("resume") = py::none(),
        "Trains on a corpus directory or a list of (rainy, clean) [3,H,W] arrays and "
        "returns the per-step log as a list of dicts.");

  m.def("derain", [](const std::string& checkpoint, const Array<float>& image) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    Inference inf;
    const Tensor img = to_tensor(image);
    {
      py::gil_scoped_release release;
      inf = derain(ck.params, ck.model, img);
    }
    return py::make_tuple(to_array(inf.restored), to_array(inf.residual));
  }, py::arg("checkpoint"), py::arg("image"), "Returns (restored, rain_layer) for a [3,H,W] image.");

  m.def("load_checkpoint_info", [](const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    py::dict d;
    d["step"] = ck.step;
    d["seed"] = ck.seed;
    d["model"] = ck.model;
    d["parameters"] = ck.params.element_count();
    d["has_optimizer_state"] = !ck.adam.m.empty();
    return d;
  }, py::arg("path"));

  m.def("gradcheck_suite", [](bool include_model, std::size_t trials, std::uint64_t seed) {
    SuiteOptions o;
    o.include_model = include_model;
    o.trials = trials;
    o.seed = seed;
    std::vector<SuiteEntry> entries;
    {
      py::gil_scoped_release release;
      entries = run_gradcheck_suite(o);
    }
    py::list out;
    for (const SuiteEntry& e : entries) {
      py::dict d;
      d["name"] = e.name;
      d["trials"] = e.trials;
      d["max_rel_error"] = e.max_rel_error;
      d["passed"] = e.passed;
      out.append(d);
    }
    return out;
  }, py::arg("include_model") = false, py::arg("trials") = 5, py::arg("seed") = 2024);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the menet command line; returns (exit_code, stdout, stderr).");
}
