// Python bindings for the core pipeline. Images cross the boundary as float64
// numpy arrays of shape (H, W, 3) in [0, 1]; maps as (H, W); configs as JSON strings.

#include <cstring>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ueg/data.hpp"
#include "ueg/errors.hpp"
#include "ueg/imaging.hpp"
#include "ueg/masks.hpp"
#include "ueg/metrics.hpp"
#include "ueg/model.hpp"
#include "ueg/train.hpp"

namespace py = pybind11;
using namespace ueg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageRGB to_rgb(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an (H, W, 3) array");
  ImageRGB img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(img.data().data(), a.data(), img.data().size() * sizeof(double));
  return img;
}

Array from_rgb(const ImageRGB& img) {
  Array a({img.height(), img.width(), 3});
  std::memcpy(a.mutable_data(), img.data().data(), img.data().size() * sizeof(double));
  return a;
}

Plane to_plane(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected an (H, W) array");
  Plane p(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(p.data().data(), a.data(), p.data().size() * sizeof(double));
  return p;
}

Array from_plane(const Plane& p) {
  Array a({p.height(), p.width()});
  std::memcpy(a.mutable_data(), p.data().data(), p.data().size() * sizeof(double));
  return a;
}

/// (C, H, W) tensor to a (H, W, C) array.
Array from_chw(const ad::Tensor& t) {
  Array a({t.height(), t.width(), t.channels()});
  auto m = a.mutable_unchecked<3>();
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x) m(y, x, c) = t.at(c, y, x);
  return a;
}

Array from_labels(const ExposureLabelMap& l) {
  Array a({l.height, l.width});
  for (std::size_t i = 0; i < l.data.size(); ++i) a.mutable_data()[i] = static_cast<double>(l.data[i]);
  return a;
}

template <class T>
T parse(const std::string& json) {
  return json.empty() ? T{} : nlohmann::json::parse(json).get<T>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mixed-exposure enhancement core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("load_image", [](const std::filesystem::path& p) { return from_rgb(load_image(p)); }, py::arg("path"));
  m.def("save_image", [](const Array& a, const std::filesystem::path& p) { save_image(to_rgb(a), p); },
        py::arg("image"), py::arg("path"));
  m.def("rgb_to_luminance", [](const Array& a) { return from_plane(rgb_to_luminance(to_rgb(a))); }, py::arg("image"));

  m.def("otsu_threshold", [](const Array& lum) { return otsu_threshold(histogram(to_plane(lum))); }, py::arg("lum"));
  m.def(
      "multi_otsu_thresholds",
      [](const Array& lum) {
        const auto t = multi_otsu_two_thresholds(histogram(to_plane(lum)));
        return py::make_tuple(t.t_low, t.t_high);
      },
      py::arg("lum"));
  m.def(
      "exposure_labels",
      [](const Array& lum, double t_low, double t_high, const std::string& mask_config) {
        return from_labels(make_exposure_labels(to_plane(lum), t_low, t_high, parse<MaskConfig>(mask_config)));
      },
      py::arg("lum"), py::arg("t_low"), py::arg("t_high"), py::arg("mask_config") = "",
      "Labels per pixel: 0 correct, 1 under, 2 over.");

  m.def(
      "synth_degrade",
      [](const Array& clean, const std::string& cfg) { return from_rgb(synth_degrade(to_rgb(clean), parse<SynthConfig>(cfg))); },
      py::arg("clean"), py::arg("synth_config") = "");
  m.def("procedural_image", [](int h, int w, std::uint64_t seed) { return from_rgb(procedural_image(h, w, seed)); },
        py::arg("height"), py::arg("width"), py::arg("seed"));

  py::class_<ModelState>(m, "Model")
      .def(py::init([](const std::string& cfg) { return init_model(parse<ModelConfig>(cfg)); }),
           py::arg("model_config") = "")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def("save", [](const ModelState& s, const std::filesystem::path& p) { save_checkpoint(s, p); }, py::arg("path"))
      .def("parameter_count", [](const ModelState& s) { return count_parameters(s); })
      .def("parameter_breakdown", [](const ModelState& s) { return parameter_breakdown(s); })
      .def("config_json", [](const ModelState& s) { return nlohmann::json(s.config).dump(); })
      .def(
          "enhance",
          [](const ModelState& s, const Array& img) {
            EnhancedOutput o;
            {
              py::gil_scoped_release release;
              o = forward(to_rgb(img), s);
            }
            py::dict d;
            d["image"] = from_rgb(o.image);
            d["attention"] = from_chw(o.attn);
            d["local"] = from_rgb(o.local_image);
            d["global"] = from_rgb(o.global_image);
            d["gamma"] = o.global_params.gamma;
            d["fusion_weights"] = o.fusion_weights;
            return d;
          },
          py::arg("image"));

  m.def("psnr", [](const Array& y, const Array& yhat) { return metrics::psnr(to_rgb(y), to_rgb(yhat)); });
  m.def("ssim", [](const Array& y, const Array& yhat) { return metrics::ssim(to_rgb(y), to_rgb(yhat)); });
  m.def("ssim_map", [](const Array& y, const Array& yhat) { return from_plane(metrics::ssim_map(to_rgb(y), to_rgb(yhat))); });

  m.def(
      "lr_at",
      [](long step, long steps_per_epoch, const std::string& cfg) {
        return train::lr_at(step, steps_per_epoch, parse<train::TrainConfig>(cfg));
      },
      py::arg("step"), py::arg("steps_per_epoch"), py::arg("train_config") = "");

  m.def(
      "run",
      [](const std::string& cfg, const std::filesystem::path& out_dir, bool dry_run) {
        train::RunOptions o;
        o.out_dir = out_dir;
        o.dry_run = dry_run;
        train::RunResult r;
        {
          py::gil_scoped_release release;
          r = train::run(train::parse_run_config(nlohmann::json::parse(cfg)), o);
        }
        py::dict d;
        d["final_checkpoint"] = r.final_checkpoint.string();
        d["eval_report"] = r.eval_report.string();
        d["dry_run"] = r.dry_run;
        return d;
      },
      py::arg("run_config"), py::arg("out_dir"), py::arg("dry_run") = false,
      "Full pipeline: precompute, pretrain, finetune, evaluation.");
}
