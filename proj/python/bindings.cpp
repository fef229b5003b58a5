#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "volfreq/attacks.hpp"
#include "volfreq/dct.hpp"
#include "volfreq/losses.hpp"
#include "volfreq/metrics.hpp"
#include "volfreq/model.hpp"
#include "volfreq/pipeline.hpp"
#include "volfreq/synth.hpp"
#include "volfreq/training.hpp"

namespace py = pybind11;
using namespace volfreq;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Extent extent_of(const py::buffer_info& b) {
  if (b.ndim != 3) throw py::value_error("expected a 3-D array laid out (H, W, D)");
  return {static_cast<std::size_t>(b.shape[0]), static_cast<std::size_t>(b.shape[1]),
          static_cast<std::size_t>(b.shape[2])};
}

Volume to_volume(const F64Array& a) {
  const auto b = a.request();
  const auto* p = static_cast<const double*>(b.ptr);
  const Extent e = extent_of(b);
  return Volume(e, std::vector<double>(p, p + e.voxels()));
}

LabelField to_labels(const U8Array& a, int num_class) {
  const auto b = a.request();
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  const Extent e = extent_of(b);
  return LabelField(e, num_class, std::vector<std::uint8_t>(p, p + e.voxels()));
}

template <typename T, typename Span>
py::array_t<T> to_array(const Extent& e, const Span& values) {
  py::array_t<T> out({e.h, e.w, e.d});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Tensor<double> to_tensor(const F64Array& a) {
  const auto b = a.request();
  const Extent e = extent_of(b);
  const auto* p = static_cast<const double*>(b.ptr);
  return Tensor<double>(e.shape(), std::vector<double>(p, p + e.voxels()));
}

py::array_t<double> from_tensor(const Tensor<double>& t) {
  return to_array<double>(Extent{t.shape[0], t.shape[1], t.shape[2]}, t.data);
}

int classes_in(const U8Array& a, const U8Array& b) {
  int hi = 0;
  for (const auto* arr : {&a, &b}) {
    const auto* p = arr->data();
    for (py::ssize_t i = 0; i < arr->size(); ++i) hi = std::max<int>(hi, p[i]);
  }
  return hi + 1;
}

py::object optional_list(const std::vector<std::optional<double>>& v) {
  py::list out;
  for (const auto& x : v) out.append(x ? py::object(py::float_(*x)) : py::object(py::none()));
  return out;
}

}  // namespace

PYBIND11_MODULE(_volfreq, m) {
  m.doc() = "DCT-domain volumetric attacks, baselines and segmentation metrics.";

  m.def(
      "dct3",
      [](const F64Array& x) {
        const auto t = to_tensor(x);
        return from_tensor(dct3(t, DctPlan({t.shape[0], t.shape[1], t.shape[2]})));
      },
      py::arg("x"), "Orthonormal 3-D DCT-II of a whole array.");
  m.def(
      "idct3",
      [](const F64Array& c) {
        const auto t = to_tensor(c);
        return from_tensor(idct3(t, DctPlan({t.shape[0], t.shape[1], t.shape[2]})));
      },
      py::arg("c"), "Inverse of dct3.");

  m.def(
      "fpm",
      [](const F64Array& block, const F64Array& q, double coeff_scale) {
        auto x = to_tensor(block);
        const auto qt = to_tensor(q);
        if (qt.shape != x.shape) throw py::value_error("q must have the block's shape");
        for (auto& v : x.data) v *= coeff_scale;
        Tensor<double> stack({1, x.shape[0], x.shape[1], x.shape[2]}, std::move(x.data));
        auto y = fpm_forward(stack, qt, DctPlan({qt.shape[0], qt.shape[1], qt.shape[2]}));
        for (auto& v : y.data) v = std::clamp(v / coeff_scale, 0.0, 1.0);
        return from_tensor(Tensor<double>(qt.shape, std::move(y.data)));
      },
      py::arg("block"), py::arg("q"), py::arg("coeff_scale") = 255.0,
      "Hard quantisation of one block: clamp(idct3(round(dct3(s x) / q) q) / s, 0, 1).");

  m.def(
      "dice_per_class",
      [](const U8Array& pred, const U8Array& truth, int num_class) {
        if (num_class <= 0) num_class = classes_in(pred, truth);
        return dice_per_class(to_labels(pred, num_class), to_labels(truth, num_class));
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_class") = 0);
  m.def(
      "hd95",
      [](const U8Array& pred, const U8Array& truth, int num_class) {
        if (num_class <= 0) num_class = classes_in(pred, truth);
        const auto r = hd95(to_labels(pred, num_class), to_labels(truth, num_class));
        return py::make_tuple(r.mean, optional_list(r.per_class), r.undefined);
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_class") = 0,
      "Returns (mean over defined classes, per-class list with None for undefined, undefined count).");
  m.def(
      "ssim",
      [](const F64Array& x, const F64Array& y, std::size_t patch) {
        return mean_patch_ssim(to_volume(x), to_volume(y), patch);
      },
      py::arg("x"), py::arg("y"), py::arg("patch") = 32);

  m.def(
      "generate",
      [](std::size_t extent, int num_class, std::size_t count, std::uint64_t seed, double radius_min,
         double radius_max) {
        SynthSpec spec;
        spec.extent = {extent, extent, extent};
        spec.num_class = num_class;
        spec.seed = seed;
        spec.radius_min = radius_min;
        spec.radius_max = radius_max;
        spec.validate();
        py::list out;
        for (std::size_t i = 0; i < count; ++i) {
          const auto s = generate_sample(spec, seed + i, "sample_" + std::to_string(i));
          out.append(py::make_tuple(to_array<double>(s.x.extent(), s.x.data()),
                                    to_array<std::uint8_t>(s.y.extent(), s.y.classes())));
        }
        return out;
      },
      py::arg("extent") = 64, py::arg("num_class") = 4, py::arg("count") = 1, py::arg("seed") = 7,
      py::arg("radius_min") = 12.0, py::arg("radius_max") = 22.0,
      "Blob phantoms as a list of (volume, labels) pairs.");

  py::class_<SegModel<double>>(m, "Model")
      .def(py::init([](int num_class, std::uint64_t seed) { return SegModel<double>::init(num_class, seed); }),
           py::arg("num_class") = 4, py::arg("seed") = 1)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint<double>(p); })
      .def("save", [](const SegModel<double>& self, const std::filesystem::path& p) { save_checkpoint(self, p); })
      .def_property_readonly("num_class", &SegModel<double>::num_class)
      .def("predict",
           [](const SegModel<double>& self, const F64Array& x) {
             const auto y = predict_labels(self, to_volume(x));
             return to_array<std::uint8_t>(y.extent(), y.classes());
           })
      .def(
          "fit",
          [](SegModel<double>& self, const std::vector<std::pair<F64Array, U8Array>>& data, int epochs,
             double learning_rate, std::size_t batch_size, std::uint64_t seed) {
            std::vector<Sample> samples;
            for (std::size_t i = 0; i < data.size(); ++i)
              samples.push_back({"s" + std::to_string(i), to_volume(data[i].first),
                                 to_labels(data[i].second, self.num_class())});
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.learning_rate = learning_rate;
            cfg.batch_size = batch_size;
            cfg.seed = seed;
            const auto report = train_standard(self, samples, cfg);
            std::vector<double> losses;
            for (const auto& e : report.epochs) losses.push_back(e.total_loss);
            return losses;
          },
          py::arg("data"), py::arg("epochs") = 25, py::arg("learning_rate") = 0.002, py::arg("batch_size") = 4,
          py::arg("seed") = 1, "Standard training in place; returns the loss of every epoch.");

  m.def(
      "attack",
      [](const SegModel<double>& model, const F64Array& x, const U8Array& y, const std::string& kind, int steps,
         double q_max, std::size_t patch, double epsilon, std::uint64_t seed, const std::string& rounding) {
        AttackConfig cfg;
        cfg.kind = parse_attack_kind(kind);
        cfg.steps = steps;
        cfg.q_max = q_max;
        cfg.patch = patch;
        cfg.epsilon = epsilon / 255.0;
        cfg.seed = seed;
        cfg.rounding = parse_rounding(rounding);
        cfg.validate();
        const auto r = run_attack(to_volume(x), to_labels(y, model.num_class()), model, cfg);
        py::dict out;
        out["adversarial"] = to_array<double>(r.adversarial.extent(), r.adversarial.data());
        out["objective"] = r.objective_trace;
        out["dice"] = r.dice_trace;
        out["ssim"] = r.ssim;
        return out;
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("kind") = "vafa", py::arg("steps") = 20,
      py::arg("q_max") = 20.0, py::arg("patch") = 32, py::arg("epsilon") = 8.0, py::arg("seed") = 0,
      py::arg("rounding") = "ste", "Runs one attack; epsilon is in 0-255 units.");

  m.def(
      "run",
      [](const std::string& command, const std::string& config, const std::filesystem::path& out,
         std::optional<std::uint64_t> seed) {
        RunRequest req;
        req.command = command;
        req.config = Config::parse(config);
        req.out = out;
        req.seed = seed;
        std::ostringstream log;
        const int code = volfreq::run(req, log);
        return py::make_tuple(code, log.str());
      },
      py::arg("command"), py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
      "Runs a CLI command with config text; returns (exit code, log).");
}
