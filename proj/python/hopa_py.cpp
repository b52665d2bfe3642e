#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "hopa/cli.hpp"
#include "hopa/config.hpp"
#include "hopa/data.hpp"
#include "hopa/experiment.hpp"
#include "hopa/high_order.hpp"
#include "hopa/paired_aspp.hpp"
#include "hopa/training.hpp"

namespace py = pybind11;
using namespace hopa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected a 4-d (n, c, h, w) array");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const LabelArray& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a 3-d (n, h, w) label array");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

LabelArray to_label_array(const LabelMap& m) {
  LabelArray out({m.n, m.h, m.w});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

Array conv2d_py(const Array& x, const Array& weight, std::optional<Array> bias, int stride,
                int dilation, int padding) {
  Conv2d p;
  p.weight = to_tensor(weight);
  if (bias) {
    const auto b = bias->unchecked<1>();
    p.bias = Tensor({1, static_cast<int>(b.shape(0)), 1, 1},
                    std::vector<double>(bias->data(), bias->data() + bias->size()));
  }
  p.stride = stride;
  p.dilation = dilation;
  p.padding = padding;
  return to_array(conv2d(to_tensor(x), p));
}

class PyHighOrder {
 public:
  PyHighOrder(int in_channels, int order, int rank, int out_per_degree, std::uint64_t seed) {
    Rng rng(seed);
    p_ = make_high_order(in_channels, HighOrderConfig{order, rank, out_per_degree}, rng);
  }
  std::vector<Array> project(const Array& x) const {
    std::vector<Array> out;
    for (const Tensor& z : hr_project(to_tensor(x), p_).z) out.push_back(to_array(z));
    return out;
  }
  Array forward(const Array& x) const { return to_array(hr_forward(to_tensor(x), p_)); }
  /// Filters u_s^{r,d} of degree r as an (r, rank, in_channels) array.
  Array filters(int r) const {
    const auto& bank = p_.proj.at(static_cast<std::size_t>(r - 1));
    const int rank = p_.ranks[r - 1];
    Array out({r, rank, p_.in_channels});
    double* dst = out.mutable_data();
    for (const Conv2d& c : bank) dst = std::copy(c.weight.data().begin(), c.weight.data().end(), dst);
    return out;
  }
  int order() const { return p_.order(); }
  int out_channels() const { return p_.out_channels(); }

 private:
  HighOrderParams p_;
};

class PyModel {
 public:
  PyModel(const std::string& config_text, std::uint64_t seed)
      : cfg_(parse_experiment_config(config_text)), model_(cfg_.model, seed) {}

  Array forward(const Array& img, bool training) { return to_array(model_.forward(to_tensor(img), training)); }
  Array infer(const Array& img, std::vector<double> scales, bool flip) {
    return to_array(infer_multiscale(to_tensor(img), model_, InferConfig{std::move(scales), flip}));
  }
  int load(const std::string& dir) {
    ParamList params = model_.parameters();
    return load_checkpoint(dir, params);
  }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& e : model_.parameters()) names.push_back(e.name);
    return names;
  }

 private:
  ExperimentConfig cfg_;
  SegmentationModel model_;
};

const char* branch_name(BranchSource s) {
  switch (s) {
    case BranchSource::kPair1: return "V14";
    case BranchSource::kPair2: return "V24";
    case BranchSource::kPair3: return "V34";
    case BranchSource::kStage4: return "Y4";
    case BranchSource::kStage4Pool: return "GAP";
  }
  return "?";
}

py::dict scale_table(const std::string& backbone, int combination) {
  PairedAsppConfig pa;
  pa.combination = combination == 2 ? Combination::kTwo : Combination::kOne;
  const StageMetadata meta = stage_metadata(BackboneConfig::preset(backbone));
  const ScaleCoverage cov = scale_coverage(pa, meta);
  py::list branches;
  for (const auto& b : cov.branches) {
    branches.append(py::make_tuple(branch_name(b.source), b.rate, b.min_rf, b.max_rf));
  }
  py::list stages;
  for (const auto& s : meta) stages.append(py::make_tuple(s.stride, s.receptive_field, s.channels));
  py::dict out;
  out["stages"] = stages;
  out["branches"] = branches;
  out["union"] = py::make_tuple(cov.union_min, cov.union_max);
  out["overlap_count"] = cov.overlap_count;
  return out;
}

}  // namespace

PYBIND11_MODULE(_hopa, m) {
  m.doc() = "High-order Paired-ASPP segmentation core (float64, NCHW).";

  m.def("conv2d", &conv2d_py, py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(),
        py::arg("stride") = 1, py::arg("dilation") = 1, py::arg("padding") = 0);
  m.def("bilinear_resize", [](const Array& x, int h, int w) { return to_array(bilinear_resize(to_tensor(x), h, w)); });
  m.def("softmax", [](const Array& x) { return to_array(softmax_channels(to_tensor(x))); });
  m.def("cross_entropy", [](const Array& logits, const LabelArray& labels) {
    return cross_entropy_loss(to_tensor(logits), to_labels(labels)).item();
  });
  m.def("poly_lr", [](int iter, double base_lr, int max_iter, int warmup_iter, double power) {
    TrainConfig cfg;
    cfg.base_lr = base_lr;
    cfg.max_iter = max_iter;
    cfg.warmup_iter = warmup_iter;
    cfg.poly_power = power;
    return poly_lr(iter, cfg);
  }, py::arg("iter"), py::arg("base_lr") = 0.01, py::arg("max_iter") = 1000,
     py::arg("warmup_iter") = 50, py::arg("power") = 0.9);
  m.def("miou", [](const LabelArray& truth, const LabelArray& pred, int num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.add(to_labels(truth), to_labels(pred));
    const MiouResult r = miou(cm);
    return py::make_tuple(r.per_class, r.mean);
  });
  m.def("scale_coverage", &scale_table, py::arg("backbone") = "toy", py::arg("combination") = 1);
  m.def("gen_synthetic", [](const std::string& spec_text, std::uint64_t seed) {
    const SyntheticDataset ds = gen_synthetic(parse_synthetic_spec(spec_text), seed);
    auto pack = [](const std::vector<SegSample>& xs) {
      py::list out;
      for (const auto& s : xs) out.append(py::make_tuple(to_array(s.image), to_label_array(s.label)));
      return out;
    };
    return py::make_tuple(pack(ds.train), pack(ds.val));
  }, py::arg("spec_text") = "", py::arg("seed") = 0);
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });

  py::class_<PyHighOrder>(m, "HighOrder")
      .def(py::init<int, int, int, int, std::uint64_t>(), py::arg("in_channels"), py::arg("order") = 3,
           py::arg("rank") = 8, py::arg("out_per_degree") = 8, py::arg("seed") = 0)
      .def("project", &PyHighOrder::project)
      .def("forward", &PyHighOrder::forward)
      .def("filters", &PyHighOrder::filters)
      .def_property_readonly("order", &PyHighOrder::order)
      .def_property_readonly("out_channels", &PyHighOrder::out_channels);

  py::class_<PyModel>(m, "SegmentationModel")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("config_text") = "", py::arg("seed") = 1)
      .def("forward", &PyModel::forward, py::arg("image"), py::arg("training") = false)
      .def("infer", &PyModel::infer, py::arg("image"),
           py::arg("scales") = std::vector<double>{0.5, 0.75, 1.0, 1.25, 1.5, 1.75}, py::arg("flip") = true)
      .def("load_checkpoint", &PyModel::load)
      .def("parameter_names", &PyModel::parameter_names);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
}
