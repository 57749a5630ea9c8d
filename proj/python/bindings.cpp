// Python module: data generation, RLE, metrics, training, prediction and
// gradient checks on top of the C++ core.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "evfsam/config.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/gradsuite.hpp"
#include "evfsam/train.hpp"

namespace py = pybind11;
using namespace evfsam;

namespace {

using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using ImageArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mask to_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mask must be a 2-D array");
  Mask m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  const auto* p = a.data();
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = p[i] ? 1 : 0;
  return m;
}

py::array_t<std::uint8_t> from_mask(const Mask& m) {
  py::array_t<std::uint8_t> a({m.height, m.width});
  std::copy(m.bits.begin(), m.bits.end(), a.mutable_data());
  return a;
}

Image to_image(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("image must have shape (H, W, 3)");
  Image im(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + im.rgb.size(), im.rgb.begin());
  return im;
}

py::array_t<double> from_image(const Image& im) {
  py::array_t<double> a({im.height, im.width, std::size_t{3}});
  std::copy(im.rgb.begin(), im.rgb.end(), a.mutable_data());
  return a;
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  d["giou"] = r.giou;
  d["ciou"] = r.ciou;
  d["n_samples"] = r.n_samples;
  d["per_sample_iou"] = r.per_sample_iou;
  return d;
}

RunConfig parse_config(const std::string& json_text) {
  return json_text.empty() ? RunConfig{} : run_config_from_json(nlohmann::json::parse(json_text));
}

// Owns a model built from a run configuration.
struct PyModel {
  RunConfig config;
  std::unique_ptr<EvfSamModel> model;

  explicit PyModel(const RunConfig& rc)
      : config(rc), model(std::make_unique<EvfSamModel>(rc.model, grammar_tokenizer(rc.model.encoder.max_text_len))) {}
};

std::unique_ptr<PyModel> load_model(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  auto m = std::make_unique<PyModel>(run_config_from_json(ckpt.config));
  ckpt.apply(*m->model, nullptr);
  return m;
}

py::tuple train(const std::string& json_text, const std::string& checkpoint_path) {
  auto m = std::make_unique<PyModel>(parse_config(json_text));
  MetricsReport report;
  std::ostringstream log;
  {
    py::gil_scoped_release release;
    const Splits splits = load_splits(m->config.data);
    Trainer trainer(*m->model, m->config.train);
    report = trainer.run(splits.train, splits.val, &log);
    if (!checkpoint_path.empty())
      save_checkpoint(checkpoint_path,
                      Checkpoint::capture(*m->model, &trainer.optimizer(), trainer.iteration(), to_json(m->config)));
  }
  return py::make_tuple(std::move(m), metrics_dict(report), log.str());
}

}  // namespace

PYBIND11_MODULE(_evfsam, m) {
  m.doc() = "Early vision-language fused segmentation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); }, "Default run configuration as JSON text");
  m.def("normalize_config", [](const std::string& s) { return to_json(parse_config(s)).dump(); }, py::arg("config"),
        "Validate a (partial) run configuration and return it with defaults filled in");

  m.def("rle_encode", [](const MaskArray& a) { return rle_encode(to_mask(a)); }, py::arg("mask"));
  m.def("rle_decode",
        [](const std::vector<std::uint64_t>& counts, std::size_t h, std::size_t w) {
          return from_mask(rle_decode(counts, h, w));
        },
        py::arg("counts"), py::arg("height"), py::arg("width"));

  m.def("compute_metrics",
        [](const std::vector<MaskArray>& pred, const std::vector<MaskArray>& gt) {
          std::vector<Mask> p, g;
          for (const auto& a : pred) p.push_back(to_mask(a));
          for (const auto& a : gt) g.push_back(to_mask(a));
          return metrics_dict(compute_metrics(p, g));
        },
        py::arg("predictions"), py::arg("ground_truth"));

  m.def("generate_dataset",
        [](std::uint64_t seed, std::size_t n, std::size_t size, const std::string& difficulty) {
          GeneratorConfig g;
          g.seed = seed;
          g.n_samples = n;
          g.canvas_size = size;
          g.difficulty = parse_difficulty(difficulty);
          py::list out;
          for (const auto& s : generate_dataset(g)) {
            py::dict d;
            d["id"] = s.sample_id;
            d["image"] = from_image(s.image);
            d["expression"] = s.expression;
            d["mask"] = from_mask(s.mask);
            out.append(d);
          }
          return out;
        },
        py::arg("seed") = 0, py::arg("n") = 100, py::arg("size") = 48, py::arg("difficulty") = "spatial");

  m.def("gradcheck",
        [](const std::string& scope, std::size_t configs, std::uint64_t seed) {
          py::dict out;
          for (const auto& r : run_gradcheck(scope, configs, seed)) out[py::str(r.block)] = r.max_rel_error;
          return out;
        },
        py::arg("scope") = "all", py::arg("configs") = 20, py::arg("seed") = 0,
        "Maximum relative finite-difference error per block");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& s) { return std::make_unique<PyModel>(parse_config(s)); }),
           py::arg("config") = "")
      .def_static("load", &load_model, py::arg("path"))
      .def_property_readonly("config", [](const PyModel& p) { return to_json(p.config).dump(); })
      .def_property_readonly("num_parameters",
                             [](const PyModel& p) {
                               std::size_t n = 0;
                               for (const auto& e : p.model->params().params()) n += e.value.numel();
                               return n;
                             })
      .def("predict",
           [](const PyModel& p, const ImageArray& image, const std::string& text, double threshold) {
             return from_mask(p.model->predict(to_image(image), text, static_cast<Scalar>(threshold)));
           },
           py::arg("image"), py::arg("text"), py::arg("threshold") = 0.0)
      .def("evaluate",
           [](const PyModel& p, const std::string& split) {
             if (split != "train" && split != "val") throw std::invalid_argument("split must be 'train' or 'val'");
             const Splits s = load_splits(p.config.data);
             return metrics_dict(evaluate(*p.model, split == "train" ? s.train : s.val, p.config.train.threshold));
           },
           py::arg("split") = "val");

  m.def("train", &train, py::arg("config") = "", py::arg("checkpoint") = "",
        "Train from a run configuration; returns (model, val metrics, JSON-lines log)");
}
