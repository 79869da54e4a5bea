#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "tracewarp/checkpoint.hpp"
#include "tracewarp/config.hpp"
#include "tracewarp/data.hpp"
#include "tracewarp/deformation.hpp"
#include "tracewarp/eval.hpp"
#include "tracewarp/gradcheck.hpp"
#include "tracewarp/io.hpp"
#include "tracewarp/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace tracewarp;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Array64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

nlohmann::json json_of(const py::object& obj) {
  if (obj.is_none()) return nlohmann::json::object();
  auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(obj).cast<std::string>());
}

py::object py_of(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Array array_of(const Tensor<float>& t, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// [H,W] in [-1,1] -> [1,1,H,W].
Tensor<float> image_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D image array");
  const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
  return Tensor<float>::from({1, 1, h, w}, std::vector<float>(a.data(), a.data() + a.size()));
}

// [2,H,W] -> [1,2,H,W].
Tensor<float> field_tensor(const Array& a) {
  if (a.ndim() != 3 || a.shape(0) != 2) throw ShapeError("expected a [2,H,W] field array");
  const auto h = static_cast<std::size_t>(a.shape(1)), w = static_cast<std::size_t>(a.shape(2));
  return Tensor<float>::from({1, 2, h, w}, std::vector<float>(a.data(), a.data() + a.size()));
}

// 0..255 scale.
Image metric_image(const Array64& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D image array");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          std::vector<double>(a.data(), a.data() + a.size())};
}

py::dict pair_dict(const ImagePair& p) {
  const auto h = static_cast<py::ssize_t>(p.source.dim(2)), w = static_cast<py::ssize_t>(p.source.dim(3));
  py::dict d;
  d["id"] = p.id;
  d["source"] = array_of(p.source, {h, w});
  d["reference"] = array_of(p.reference, {h, w});
  d["displacement"] = p.gt_displacement ? py::object(array_of(*p.gt_displacement, {2, h, w})) : py::none();
  return d;
}

class Model {
 public:
  explicit Model(const fs::path& path) : ck_(load_checkpoint(path)) {
    set_requires_grad(ck_.state.params.all_parameters(), false);
  }

  py::dict infer(const Array& image) const {
    const auto x = image_tensor(image);
    const auto out = forward(x, ck_.state.params.generator, ck_.config.integration_steps);
    const auto h = static_cast<py::ssize_t>(x.dim(2)), w = static_cast<py::ssize_t>(x.dim(3));
    py::dict d;
    d["y_trans"] = array_of(out.y_trans, {h, w});
    d["y_warp"] = array_of(out.y_warp, {h, w});
    d["velocity"] = array_of(out.v.grid, {2, h, w});
    d["displacement"] = array_of(out.u.grid, {2, h, w});
    return d;
  }

  py::object config() const { return py_of(to_json(ck_.config)); }
  std::size_t epoch() const { return ck_.state.epoch; }
  std::string log_csv() const { return ck_.state.log.to_csv(); }

 private:
  Checkpoint ck_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "tracewarp native core";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "generate_pairs",
      [](const py::object& cfg) {
        const auto pairs = generate_pairs(synth_config_from_json(json_of(cfg)));
        py::list out;
        for (const auto& p : pairs) out.append(pair_dict(p));
        return out;
      },
      py::arg("config") = py::none(), "Synthesise image pairs; values in [-1,1].");

  m.def(
      "synth",
      [](const py::object& cfg, const fs::path& out) {
        const auto c = synth_config_from_json(json_of(cfg));
        return write_dataset(generate_pairs(c), c, out);
      },
      py::arg("config"), py::arg("out"), "Write a dataset directory and return its checksum.");

  m.def(
      "load_dataset",
      [](const fs::path& dir) {
        const auto ds = load_dataset(dir);
        py::list out;
        for (const auto& p : ds.pairs) out.append(pair_dict(p));
        return out;
      },
      py::arg("dir"));

  m.def(
      "train",
      [](const py::object& cfg, const fs::path& data, const fs::path& out) {
        const auto c = train_config_from_json(json_of(cfg));
        const auto ds = load_dataset(data);
        const auto sp = split(ds.pairs.size(), c.train_fraction, c.seed);
        std::vector<ImagePair> train;
        for (auto i : sp.train) train.push_back(ds.pairs[i]);
        FitOptions opts;
        opts.out_dir = out;
        TrainState state;
        {
          py::gil_scoped_release release;
          state = fit(train, c, TrainState::fresh(c), opts);
        }
        return state.log.to_csv();
      },
      py::arg("config"), py::arg("data"), py::arg("out"),
      "Train on the dataset's train split; writes final.ttck and train_log.csv, returns the log.");

  py::class_<Model>(m, "Model")
      .def(py::init<const fs::path&>(), py::arg("checkpoint"))
      .def("infer", &Model::infer, py::arg("image"), "Image in [-1,1], shape [H,W].")
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("epoch", &Model::epoch)
      .def_property_readonly("log_csv", &Model::log_csv);

  m.def(
      "integrate_velocity",
      [](const Array& v, int steps) {
        const auto t = field_tensor(v);
        const auto u = integrate_velocity(VelocityField<float>{t}, steps);
        return array_of(u.grid, {2, static_cast<py::ssize_t>(t.dim(2)), static_cast<py::ssize_t>(t.dim(3))});
      },
      py::arg("velocity"), py::arg("steps") = kDefaultIntegrationSteps);

  m.def(
      "warp",
      [](const Array& image, const Array& u) {
        const auto x = image_tensor(image);
        const auto phi = to_deformation(DisplacementField<float>{field_tensor(u)});
        return array_of(warp(x, phi), {static_cast<py::ssize_t>(x.dim(2)), static_cast<py::ssize_t>(x.dim(3))});
      },
      py::arg("image"), py::arg("displacement"));

  m.def(
      "jacobian_determinant",
      [](const Array& u) {
        const auto t = field_tensor(u);
        const auto det = jacobian_determinant(to_deformation(DisplacementField<float>{t}));
        return array_of(det, {static_cast<py::ssize_t>(det.dim(2)), static_cast<py::ssize_t>(det.dim(3))});
      },
      py::arg("displacement"));

  m.def(
      "fold_fraction",
      [](const Array& u) {
        return fold_fraction(jacobian_determinant(to_deformation(DisplacementField<float>{field_tensor(u)})));
      },
      py::arg("displacement"));

  m.def("ssim", [](const Array64& a, const Array64& b) { return ssim(metric_image(a), metric_image(b)); });
  m.def("psnr", [](const Array64& a, const Array64& b) { return psnr(metric_image(a), metric_image(b)); });
  m.def("mae", [](const Array64& a, const Array64& b) { return mae(metric_image(a), metric_image(b)); });
  m.def(
      "nmi", [](const Array64& a, const Array64& b, int bins) { return nmi_hard(metric_image(a), metric_image(b), bins); },
      py::arg("a"), py::arg("b"), py::arg("bins") = 64);
  m.def(
      "edge_dice",
      [](const Array64& a, const Array64& b, double q) {
        return dice(sobel_edges(metric_image(a), q), sobel_edges(metric_image(b), q));
      },
      py::arg("a"), py::arg("b"), py::arg("quantile") = 0.9);

  m.def(
      "evaluate",
      [](const fs::path& ckpt, const fs::path& data, const std::string& protocol) {
        const auto ck = load_checkpoint(ckpt);
        const auto ds = load_dataset(data);
        const auto sp = split(ds.pairs.size(), ck.config.train_fraction, ck.config.seed);
        std::vector<ImagePair> test;
        for (auto i : sp.test) test.push_back(ds.pairs[i]);
        EvalOptions opts;
        opts.integration_steps = ck.config.integration_steps;
        return evaluate(ck.state.params, test, parse_protocol(protocol), opts).to_csv();
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("protocol") = "standard",
      "Evaluate on the checkpoint's test split; returns the metric CSV.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["coordinates"] = r.coordinates;
          d["skipped"] = r.skipped;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0);

  m.def("checksum", [](const py::bytes& b) {
    const std::string s = b;
    return checksum(std::vector<std::uint8_t>(s.begin(), s.end()));
  });
}
