#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "csegnet/error.hpp"
#include "csegnet/gradsuite.hpp"
#include "csegnet/metrics.hpp"
#include "csegnet/model.hpp"
#include "csegnet/nifti.hpp"
#include "csegnet/phantom.hpp"
#include "csegnet/trainer.hpp"
#include "csegnet/version.hpp"

namespace py = pybind11;
using namespace csegnet;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<py::ssize_t> dims_of(const Shape& s) { return {s.begin(), s.end()}; }

py::array_t<float> to_numpy(const Tensor& t) {
  py::array_t<float> out(dims_of(t.shape()));
  std::memcpy(out.mutable_data(), t.vec().data(), t.vec().size() * sizeof(float));
  return out;
}

py::array_t<std::uint8_t> to_numpy(const std::vector<std::uint8_t>& v, const Shape& shape) {
  py::array_t<std::uint8_t> out(dims_of(shape));
  std::memcpy(out.mutable_data(), v.data(), v.size());
  return out;
}

Tensor from_numpy(const F32Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor t(shape, 0.0f);
  std::memcpy(t.data().data(), a.data(), static_cast<std::size_t>(a.size()) * sizeof(float));
  return t;
}

std::span<const std::uint8_t> span_of(const U8Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Dims3 dims3_of(const U8Array& a) {
  if (a.ndim() != 3) throw Error(ErrorKind::ShapeMismatch, "masks must be (D, H, W)");
  return {a.shape(0), a.shape(1), a.shape(2)};
}

py::dict case_dict(const Case& c) {
  py::dict d;
  d["case_id"] = c.case_id;
  d["phase"] = std::string(phase_name(c.phase));
  d["image"] = to_numpy(c.image);
  d["label"] = to_numpy(c.label, c.image.shape());
  d["spacing"] = py::make_tuple(c.spacing.slice, c.spacing.row, c.spacing.col);
  return d;
}

}  // namespace

PYBIND11_MODULE(_csegnet, m) {
  m.doc() = "Cardiac MRI segmentation network: phantoms, metrics and checkpoint inference.";
  m.attr("__version__") = kVersion;

  static py::exception<Error> error(m, "CSegNetError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def(
      "generate_phantom",
      [](std::int64_t count, std::int64_t size, std::int64_t depth, std::uint64_t seed, double noise) {
        PhantomConfig pc;
        pc.size = size;
        pc.depth = depth;
        pc.seed = seed;
        pc.noise_sigma = noise;
        py::list out;
        for (const auto& p : generate_phantom(pc, count)) {
          py::dict d;
          d["ed"] = case_dict(p.ed);
          d["es"] = case_dict(p.es);
          d["target_ef"] = p.target_ef;
          d["target_rv_ef"] = p.target_rv_ef;
          out.append(d);
        }
        return out;
      },
      py::arg("count"), py::arg("size") = 128, py::arg("depth") = 4, py::arg("seed") = 0, py::arg("noise") = 0.06,
      "Synthetic ED/ES pairs with exact labels and the generator's ejection fractions.");

  m.def("dice", [](const U8Array& a, const U8Array& b) { return dice(span_of(a), span_of(b)); }, py::arg("a"),
        py::arg("b"));
  m.def(
      "hausdorff_mm",
      [](const U8Array& a, const U8Array& b, std::array<double, 3> spacing) {
        const auto dims = dims3_of(a);
        if (dims3_of(b) != dims) throw Error(ErrorKind::ShapeMismatch, "mask shapes differ");
        return hausdorff_mm(span_of(a), span_of(b), dims, {spacing[0], spacing[1], spacing[2]});
      },
      py::arg("a"), py::arg("b"), py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
      "None when either mask is empty.");
  m.def(
      "volume_ml",
      [](const U8Array& mask, std::array<double, 3> spacing) {
        return volume_ml(span_of(mask), {spacing[0], spacing[1], spacing[2]});
      },
      py::arg("mask"), py::arg("spacing"));
  m.def("ef_percent", &ef_percent, py::arg("edv_ml"), py::arg("esv_ml"));

  m.def(
      "parameter_count",
      [](int stages, int base_channels, int input_size, const std::string& variant) {
        ModelConfig cfg;
        cfg.stages = stages;
        cfg.base_channels = base_channels;
        cfg.input_height = cfg.input_width = input_size;
        cfg.variant = parse_variant(variant);
        return count_parameters(build(cfg, 0));
      },
      py::arg("stages") = 4, py::arg("base_channels") = 8, py::arg("input_size") = 128,
      py::arg("variant") = "csegnet");

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_readonly("val_dice", &Checkpoint::val_dice)
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_property_readonly("input_size", [](const Checkpoint& c) { return c.config.input_height; })
      .def_property_readonly("config_json", [](const Checkpoint& c) { return model_config_to_json(c.config); })
      .def("summary", [](const Checkpoint& c) { return architecture_summary(c.config, c.params); });

  m.def(
      "ensemble_probabilities",
      [](const std::vector<const Checkpoint*>& members, const F32Array& x) {
        return to_numpy(ensemble_probabilities(members, from_numpy(x)));
      },
      py::arg("members"), py::arg("x"), "Mean softmax (B, 4, H, W) of (B, 1, H, W) inputs.");
  m.def(
      "ensemble_predict",
      [](const std::vector<const Checkpoint*>& members, const F32Array& x) {
        const auto in = from_numpy(x);
        return to_numpy(ensemble_predict(members, in), {in.dim(0), in.dim(2), in.dim(3)});
      },
      py::arg("members"), py::arg("x"), "Argmax labels (B, H, W).");

  m.def(
      "read_nifti",
      [](const std::filesystem::path& path) {
        const auto v = read_nifti(path);
        return py::make_tuple(to_numpy(v.data), py::make_tuple(v.spacing.slice, v.spacing.row, v.spacing.col));
      },
      py::arg("path"), "(volume (D, H, W), spacing (slice, row, col) in mm).");

  m.def(
      "gradient_suite",
      [](int shapes_per_op, double h, std::uint64_t seed) {
        py::list out;
        for (const auto& e : run_gradient_suite({shapes_per_op, h, seed})) {
          py::dict d;
          d["op"] = e.op;
          d["detail"] = e.detail;
          d["max_rel_error"] = e.max_rel_error;
          out.append(d);
        }
        return out;
      },
      py::arg("shapes_per_op") = 5, py::arg("h") = 1e-3, py::arg("seed") = 0);
}
