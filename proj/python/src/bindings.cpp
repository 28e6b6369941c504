#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fasn/checkpoint.hpp"
#include "fasn/data.hpp"
#include "fasn/loss.hpp"
#include "fasn/metrics.hpp"
#include "fasn/network.hpp"
#include "fasn/trainer.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

fasn::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw fasn::ShapeError("expected a 4-d (N, C, H, W) array");
  const fasn::Shape s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                      static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
  return fasn::Tensor::from_data(s, std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const fasn::Tensor& t) {
  const fasn::Shape& s = t.shape();
  Array a({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

fasn::Variant variant_from(const std::string& name) {
  if (auto v = fasn::parse_variant(name)) return *v;
  throw py::value_error("unknown variant '" + name + "'; expected unet, attn, adv-attn or full-attn");
}

fasn::NetworkConfig make_config(const std::string& variant, std::size_t base_width, std::size_t depth) {
  fasn::NetworkConfig c;
  c.variant = variant_from(variant);
  c.base_width = base_width;
  c.depth = depth;
  c.validate();
  return c;
}

std::vector<fasn::SamplePair> to_samples(const Array& images, const Array& masks) {
  const fasn::Tensor x = to_tensor(images);
  const fasn::Tensor y = to_tensor(masks);
  const fasn::Shape xs = x.shape();
  const fasn::Shape ys = y.shape();
  if (xs.n != ys.n || ys.c != 1 || xs.h != ys.h || xs.w != ys.w) {
    throw fasn::ShapeError("images " + fasn::to_string(xs) + " and masks " + fasn::to_string(ys) + " do not pair up");
  }
  std::vector<fasn::SamplePair> out;
  for (std::size_t n = 0; n < xs.n; ++n) {
    fasn::SamplePair s;
    const std::size_t ni = xs.c * xs.plane();
    s.image = fasn::Tensor::from_data({1, xs.c, xs.h, xs.w},
                                      std::vector<float>(x.data().begin() + n * ni, x.data().begin() + (n + 1) * ni));
    s.mask = fasn::Tensor::from_data({1, 1, xs.h, xs.w}, std::vector<float>(y.data().begin() + n * xs.plane(),
                                                                          y.data().begin() + (n + 1) * xs.plane()));
    s.source = "sample_" + std::to_string(n);
    s.valid_height = xs.h;
    s.valid_width = xs.w;
    out.push_back(std::move(s));
  }
  return out;
}

class PyNetwork {
 public:
  PyNetwork(const std::string& variant, std::size_t base_width, std::size_t depth, std::uint64_t seed)
      : net_(make_config(variant, base_width, depth), seed) {}

  Array forward(const Array& x, bool train) {
    fasn::Tape tape(false);
    return to_array(net_.forward(tape, to_tensor(x), train ? fasn::Mode::train : fasn::Mode::eval));
  }

  std::string variant() const { return std::string(fasn::variant_name(net_.config().variant)); }
  std::size_t parameter_count() const { return net_.parameter_count(); }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [name, t] : net_.parameters()) names.push_back(name);
    return names;
  }
  void force_gates_open() { net_.force_gates_open(); }
  std::size_t copy_state_from(const PyNetwork& other) { return net_.copy_state_from(other.net_); }
  void load(const std::filesystem::path& path) { fasn::load_weights(net_, fasn::load_checkpoint(path)); }
  void save(const std::filesystem::path& path) const { fasn::save_checkpoint(fasn::snapshot(net_), path); }

 private:
  fasn::Network<float> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "U-Net variants with attention gates for binary crack segmentation";

  py::register_exception<fasn::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<fasn::ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<fasn::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<fasn::FormatError>(m, "FormatError", PyExc_IOError);

  m.attr("VARIANTS") = py::make_tuple("unet", "attn", "adv-attn", "full-attn");

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<const std::string&, std::size_t, std::size_t, std::uint64_t>(), py::arg("variant"),
           py::arg("base_width") = 64, py::arg("depth") = 5, py::arg("seed") = 0)
      .def("forward", &PyNetwork::forward, py::arg("x"), py::arg("train") = false,
           "Logits (N, 1, H, W) for an (N, 3, H, W) float array.")
      .def_property_readonly("variant", &PyNetwork::variant)
      .def("parameter_count", &PyNetwork::parameter_count)
      .def("parameter_names", &PyNetwork::parameter_names)
      .def("force_gates_open", &PyNetwork::force_gates_open)
      .def("copy_state_from", &PyNetwork::copy_state_from)
      .def("load", &PyNetwork::load, py::arg("path"))
      .def("save", &PyNetwork::save, py::arg("path"));

  m.def(
      "synth_crack",
      [](std::uint64_t seed, std::size_t width, std::size_t height, std::size_t cracks) {
        fasn::SynthParams p;
        p.crack_count = cracks;
        const fasn::SamplePair s = fasn::synth_crack(seed, {width, height}, p);
        return py::make_tuple(to_array(s.image), to_array(s.mask));
      },
      py::arg("seed"), py::arg("width") = 64, py::arg("height") = 64, py::arg("cracks") = 1,
      "Seeded synthetic (image, mask) pair of shapes (1,3,H,W) and (1,1,H,W).");

  m.def(
      "augment_flips",
      [](const Array& image, const Array& mask) {
        fasn::SamplePair s;
        s.image = to_tensor(image);
        s.mask = to_tensor(mask);
        py::list out;
        for (const auto& a : fasn::augment_flips(s)) out.append(py::make_tuple(to_array(a.image), to_array(a.mask)));
        return out;
      },
      py::arg("image"), py::arg("mask"));

  m.def(
      "bce_with_logits",
      [](const Array& logits, const Array& targets) {
        fasn::Tape tape(false);
        return static_cast<double>(fasn::bce_with_logits(tape, to_tensor(logits), to_tensor(targets)).item());
      },
      py::arg("logits"), py::arg("targets"), "Mean binary cross-entropy on logits.");

  m.def(
      "iou",
      [](const Array& pred, const Array& gt, float threshold) {
        const fasn::IoUResult r = fasn::iou(to_tensor(pred), to_tensor(gt), threshold);
        return py::make_tuple(r.intersection, r.union_count, r.iou);
      },
      py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.5f, "(intersection, union, iou)");

  m.def(
      "miou",
      [](const std::vector<double>& values) {
        if (values.empty()) throw fasn::ContractError("miou of an empty sequence");
        double sum = 0.0;
        for (double v : values) sum += v;
        return sum / static_cast<double>(values.size());
      },
      py::arg("ious"));

  m.def(
      "train",
      [](const std::string& variant, const Array& images, const Array& masks, std::size_t base_width,
         std::uint64_t epochs, std::size_t batch_size, double learning_rate, std::uint64_t seed) {
        fasn::TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.learning_rate = learning_rate;
        tc.seed = seed;
        const auto samples = to_samples(images, masks);
        fasn::Trainer trainer(make_config(variant, base_width, 5), tc);
        const fasn::TrainingReport report = trainer.fit(samples);
        std::vector<double> losses;
        for (const auto& e : report.epochs) losses.push_back(e.mean_loss);
        return losses;
      },
      py::arg("variant"), py::arg("images"), py::arg("masks"), py::arg("base_width") = 8, py::arg("epochs") = 50,
      py::arg("batch_size") = 2, py::arg("learning_rate") = 1e-5, py::arg("seed") = 0,
      "Trains a fresh network and returns the per-epoch mean losses.");
}
