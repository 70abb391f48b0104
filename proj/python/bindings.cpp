// Python bindings: images cross the boundary as float32 arrays, (C, H, W) for
// one image and (N, C, H, W) for a batch.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <vector>

#include "sfda/adapt.hpp"
#include "sfda/dataset.hpp"
#include "sfda/experiments.hpp"
#include "sfda/models.hpp"
#include "sfda/shiftgen.hpp"
#include "sfda/transforms.hpp"

namespace py = pybind11;
using namespace sfda;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image image_from_array(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("expected an (H, W) or (C, H, W) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2)), w = static_cast<int>(a.shape(a.ndim() - 1));
  Image img(c, h, w);
  std::copy_n(a.data(), img.size(), img.data.begin());
  return img;
}

FloatArray array_from_image(const Image& img) {
  FloatArray out({img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

std::vector<Image> images_from_batch(const FloatArray& a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected an (N, C, H, W) array");
  const auto n = a.shape(0);
  const int c = static_cast<int>(a.shape(1)), h = static_cast<int>(a.shape(2)), w = static_cast<int>(a.shape(3));
  std::vector<Image> images;
  images.reserve(static_cast<std::size_t>(n));
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  for (py::ssize_t i = 0; i < n; ++i) {
    Image img(c, h, w);
    std::copy_n(a.data() + static_cast<std::size_t>(i) * per, per, img.data.begin());
    images.push_back(std::move(img));
  }
  return images;
}

FloatArray batch_from_images(const std::vector<Image>& images) {
  if (images.empty()) return FloatArray(std::vector<py::ssize_t>{0, 0, 0, 0});
  const Image& f = images.front();
  FloatArray out({static_cast<py::ssize_t>(images.size()), static_cast<py::ssize_t>(f.channels),
                  static_cast<py::ssize_t>(f.height), static_cast<py::ssize_t>(f.width)});
  float* dst = out.mutable_data();
  for (const Image& img : images) dst = std::copy(img.data.begin(), img.data.end(), dst);
  return out;
}

LabeledDataset dataset_from_arrays(const FloatArray& images, const std::vector<int>& labels) {
  LabeledDataset d;
  d.name = "python";
  d.images = images_from_batch(images);
  d.labels = labels;
  d.validate();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Source-free domain adaptation with learned per-image backward transforms";

  py::register_exception<ParameterDomainError>(m, "ParameterDomainError", PyExc_ValueError);

  py::enum_<Axis>(m, "Axis")
      .value("rotation", Axis::kRotation)
      .value("brightness", Axis::kBrightness)
      .value("contrast", Axis::kContrast);

  py::enum_<DatasetId>(m, "Dataset").value("mnist", DatasetId::kMnist).value("cifar10", DatasetId::kCifar10);

  py::class_<TransformParams>(m, "TransformParams")
      .def(py::init<>())
      .def(py::init([](double r, double b, double c) { return TransformParams{r, b, c}; }), py::arg("rotation_deg"),
           py::arg("brightness"), py::arg("contrast"))
      .def_readwrite("rotation_deg", &TransformParams::rotation_deg)
      .def_readwrite("brightness", &TransformParams::brightness)
      .def_readwrite("contrast", &TransformParams::contrast)
      .def("__eq__", [](const TransformParams& a, const TransformParams& b) { return a == b; })
      .def("__repr__", [](const TransformParams& p) {
        return "TransformParams(" + std::to_string(p.rotation_deg) + ", " + std::to_string(p.brightness) + ", " +
               std::to_string(p.contrast) + ")";
      });

  m.def("apply_brightness", [](const FloatArray& x, double p) { return array_from_image(apply_brightness(image_from_array(x), p)); });
  m.def("apply_contrast", [](const FloatArray& x, double p) { return array_from_image(apply_contrast(image_from_array(x), p)); });
  m.def("apply_rotation", [](const FloatArray& x, double deg) { return array_from_image(apply_rotation(image_from_array(x), deg)); });
  m.def("apply_backward_transform", [](const FloatArray& x, const TransformParams& p) {
    return array_from_image(apply_backward_transform(image_from_array(x), p));
  });
  m.def("msp", [](const std::vector<float>& logits, double s) { return msp(logits, s); }, py::arg("logits"),
        py::arg("temperature"));

  py::class_<ShiftSpec>(m, "ShiftSpec")
      .def(py::init([](const std::vector<std::tuple<Axis, double, double>>& stages, std::uint64_t seed) {
             ShiftSpec s;
             for (const auto& [axis, mu, sigma] : stages) s.stages.push_back({axis, mu, sigma});
             s.seed = seed;
             return s;
           }),
           py::arg("stages"), py::arg("seed") = 0)
      .def_readwrite("seed", &ShiftSpec::seed)
      .def("label", &ShiftSpec::label)
      .def("sample", [](const ShiftSpec& s, std::size_t n) { return sample_shift_params(s, n); }, py::arg("n"))
      .def("apply", [](const ShiftSpec& s, const FloatArray& images) {
        LabeledDataset d;
        d.images = images_from_batch(images);
        d.labels.assign(d.images.size(), 0);
        return batch_from_images(apply_shift(d, s).images);
      });

  py::class_<Classifier>(m, "Classifier")
      .def_static("load", &Classifier::load, py::arg("path"))
      .def_static("build", &build_source_classifier, py::arg("dataset") = DatasetId::kMnist, py::arg("init_seed") = 0)
      .def("save", &Classifier::save, py::arg("path"))
      .def("predict", [](Classifier& c, const FloatArray& images) { return c.predict(images_from_batch(images)); })
      .def("logits", [](Classifier& c, const FloatArray& images) {
        const nn::Tensor z = c.logits(images_from_batch(images));
        FloatArray out({z.shape[0], z.shape[1]});
        std::copy(z.data.begin(), z.data.end(), out.mutable_data());
        return out;
      })
      .def("train", [](Classifier& c, const FloatArray& images, const std::vector<int>& labels, int max_epochs,
                       std::uint64_t seed) {
        TrainConfig cfg;
        cfg.max_epochs = max_epochs;
        cfg.seed = seed;
        return train_source_classifier(c, dataset_from_arrays(images, labels), cfg).best_val_accuracy;
      }, py::arg("images"), py::arg("labels"), py::arg("max_epochs") = 50, py::arg("seed") = 0);

  py::class_<TransformNet>(m, "TransformNet")
      .def_static("build", [](DatasetId id, std::uint64_t seed) { return build_transform_net(id, ParamSpace::standard(), seed); },
                  py::arg("dataset") = DatasetId::kMnist, py::arg("init_seed") = 0)
      .def_static("load", &TransformNet::load, py::arg("path"))
      .def("save", &TransformNet::save, py::arg("path"))
      .def("predict", [](TransformNet& t, const FloatArray& images) { return t.predict(images_from_batch(images)); });

  m.def(
      "adapt",
      [](const TransformNet& net, const FloatArray& images, Classifier& phi, int epochs, double lr, int batch_size,
         double temperature, std::uint64_t seed) {
        AdaptConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cfg.batch_size = batch_size;
        cfg.temperature = temperature;
        cfg.seed = seed;
        AdaptResult r = train_transform_net(net, images_from_batch(images), phi, cfg);
        return py::make_tuple(std::move(r.net), r.loss_history);
      },
      py::arg("net"), py::arg("images"), py::arg("classifier"), py::arg("epochs") = 30, py::arg("lr") = 5e-5,
      py::arg("batch_size") = 64, py::arg("temperature") = 10.0, py::arg("seed") = 0,
      "Train a transformation network on unlabeled images; returns (net, loss_history).");

  m.def("transform_and_classify", [](TransformNet& net, const FloatArray& images, Classifier& phi) {
    const ClassifiedImages out = transform_and_classify(net, images_from_batch(images), phi);
    return py::make_tuple(out.predictions, out.params);
  });

  m.def("msp_gap_loss", [](const TransformParams& p, const FloatArray& x, Classifier& phi, double s) {
    return msp_gap_loss(p, image_from_array(x), phi, s);
  }, py::arg("params"), py::arg("image"), py::arg("classifier"), py::arg("temperature") = 10.0);

  m.def("grid_search_msp_oracle", [](const FloatArray& x, Classifier& phi, Axis axis, int resolution, double s) {
    const GridSearchResult r = grid_search_msp_oracle(image_from_array(x), phi, axis, resolution, s);
    return py::make_tuple(r.best_param, r.best_msp);
  }, py::arg("image"), py::arg("classifier"), py::arg("axis"), py::arg("resolution") = 101, py::arg("temperature") = 10.0);

  m.def("evaluate_with_subsampling", [](const std::vector<int>& preds, const std::vector<int>& labels, int k,
                                        double fraction, std::uint64_t seed) {
    const SubsampleSummary s = evaluate_with_subsampling(preds, labels, k, fraction, seed);
    return py::make_tuple(s.mean, s.std, s.accuracies);
  }, py::arg("predictions"), py::arg("labels"), py::arg("k") = 10, py::arg("fraction") = 0.8, py::arg("seed") = 0);

  m.def("load_mnist", [](const std::string& root, bool train, std::size_t limit) {
    const LabeledDataset d = load_mnist(resolve_data_root(root.empty() ? std::nullopt : std::optional<std::filesystem::path>(root)),
                                        train ? Split::kTrain : Split::kTest, limit);
    return py::make_tuple(batch_from_images(d.images), d.labels);
  }, py::arg("root") = "", py::arg("train") = false, py::arg("limit") = 0);

  m.def("read_results_csv", [](const std::string& path) {
    py::list rows;
    for (const ResultRecord& r : read_results_csv(path)) {
      py::dict d;
      d["experiment_id"] = r.experiment_id;
      d["dataset"] = r.dataset;
      d["axes"] = r.axes;
      d["mu_1"] = r.mu_1;
      d["sigma_1"] = r.sigma_1;
      d["mu_2"] = r.mu_2;
      d["sigma_2"] = r.sigma_2;
      d["method"] = r.method;
      d["n_labels"] = r.n_labels;
      d["subsample_idx"] = r.subsample_idx;
      d["seed"] = r.seed;
      d["accuracy"] = r.accuracy;
      rows.append(d);
    }
    return rows;
  });
}
