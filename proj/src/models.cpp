#include "sfda/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sfda/io.hpp"
#include "sfda/rng.hpp"

namespace sfda {

namespace fs = std::filesystem;
using nlohmann::json;

std::string arch_name(Arch arch) {
  switch (arch) {
    case Arch::kMnistCnn: return "mnist-cnn";
    case Arch::kResNet18: return "resnet18";
    case Arch::kMnistTransformNet: return "mnist-tnet";
    case Arch::kCifarTransformNet: return "cifar-tnet";
    case Arch::kLinearProbe: return "linear";
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  for (Arch a : {Arch::kMnistCnn, Arch::kResNet18, Arch::kMnistTransformNet, Arch::kCifarTransformNet,
                 Arch::kLinearProbe}) {
    if (arch_name(a) == name) return a;
  }
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

Preprocessing Preprocessing::for_dataset(DatasetId id) {
  if (id == DatasetId::kMnist) return {{0.1307f}, {0.3081f}};
  // torchvision model-zoo normalization
  return {{0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}};
}

nn::Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_batch: empty image set");
  const Image& first = images.front();
  nn::Tensor t({static_cast<int>(images.size()), first.channels, first.height, first.width});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) {
      throw std::invalid_argument("to_batch: image " + std::to_string(i) + " has shape " +
                                  shape_of(images[i]) + ", expected " + shape_of(first));
    }
    std::copy(images[i].data.begin(), images[i].data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return t;
}

Image image_from_batch(const nn::Tensor& batch, int index) {
  Image img(batch.dim(1), batch.dim(2), batch.dim(3));
  const std::size_t per = img.size();
  const auto begin = batch.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(index) * per);
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(per), img.data.begin());
  return img;
}

std::vector<double> softmax(std::span<const float> logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::domain_error("softmax temperature must be > 0, got " + std::to_string(temperature));
  }
  if (logits.empty()) throw std::invalid_argument("softmax of empty logit vector");
  const double zmax = *std::max_element(logits.begin(), logits.end()) / temperature;
  std::vector<double> p(logits.size());
  double denom = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) denom += (p[k] = std::exp(logits[k] / temperature - zmax));
  for (double& v : p) v /= denom;
  return p;
}

double msp(std::span<const float> logits, double temperature) {
  const auto p = softmax(logits, temperature);
  return *std::max_element(p.begin(), p.end());
}

int argmax(std::span<const float> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

// ------------------------------------------------------------------ networks

namespace {

nn::Sequential make_network(Arch arch, InputShape s, int outputs, std::uint64_t seed) {
  std::mt19937_64 rng(rng::derive(seed, "init"));
  nn::Sequential net;
  switch (arch) {
    case Arch::kMnistCnn:
    case Arch::kMnistTransformNet: {
      // No pooling: the first linear layer sees 16 x (H-4) x (W-4) features.
      net.add<nn::Conv2d>(s.channels, 6, 3, 1, 0, true, rng);
      net.add<nn::ReLU>();
      net.add<nn::Conv2d>(6, 16, 3, 1, 0, true, rng);
      net.add<nn::ReLU>();
      net.add<nn::Flatten>();
      net.add<nn::Linear>(16 * (s.height - 4) * (s.width - 4), 120, rng);
      net.add<nn::ReLU>();
      net.add<nn::Linear>(120, 84, rng);
      net.add<nn::ReLU>();
      net.add<nn::Linear>(84, outputs, rng);
      break;
    }
    case Arch::kCifarTransformNet: {
      net.add<nn::Conv2d>(s.channels, 6, 5, 1, 0, true, rng);
      net.add<nn::ReLU>();
      net.add<nn::MaxPool2d>(2, 2);
      net.add<nn::Conv2d>(6, 16, 5, 1, 0, true, rng);
      net.add<nn::ReLU>();
      net.add<nn::Flatten>();
      const int h = (s.height - 4) / 2 - 4, w = (s.width - 4) / 2 - 4;
      net.add<nn::Linear>(16 * h * w, 120, rng);
      net.add<nn::ReLU>();
      net.add<nn::Linear>(120, 84, rng);
      net.add<nn::ReLU>();
      net.add<nn::Linear>(84, outputs, rng);
      break;
    }
    case Arch::kResNet18: {
      net.add<nn::Conv2d>(s.channels, 64, 7, 2, 3, false, rng);
      net.add<nn::BatchNorm2d>(64);
      net.add<nn::ReLU>();
      net.add<nn::MaxPool2d>(3, 2, 1);
      int in = 64;
      for (int width : {64, 128, 256, 512}) {
        const int stride = width == 64 ? 1 : 2;
        net.add<nn::BasicBlock>(in, width, stride, rng);
        net.add<nn::BasicBlock>(width, width, 1, rng);
        in = width;
      }
      net.add<nn::GlobalAvgPool>();
      net.add<nn::Linear>(512, outputs, rng);
      break;
    }
    case Arch::kLinearProbe:
      net.add<nn::Flatten>();
      net.add<nn::Linear>(s.channels * s.height * s.width, outputs, rng);
      break;
  }
  return net;
}

nn::Linear& last_linear(nn::Sequential& net) {
  auto* lin = dynamic_cast<nn::Linear*>(&net.layer(net.size() - 1));
  if (!lin) throw std::logic_error("network does not end in a linear layer");
  return *lin;
}

json shape_json(const InputShape& s) { return {s.channels, s.height, s.width}; }
InputShape shape_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

void check_pixels(const nn::Tensor& pixels, const InputShape& s, const char* who) {
  if (pixels.rank() != 4 || pixels.dim(1) != s.channels || pixels.dim(2) != s.height ||
      pixels.dim(3) != s.width) {
    throw std::invalid_argument(std::string(who) + ": expected batch of " +
                                shape_of(s.channels, s.height, s.width) + " images, got " +
                                nn::shape_string(pixels.shape));
  }
}

}  // namespace

// ------------------------------------------------------------------ Classifier

Classifier::Classifier(Arch arch, int num_classes, InputShape shape, Preprocessing prep,
                       std::uint64_t init_seed)
    : arch_(arch),
      num_classes_(num_classes),
      shape_(shape),
      prep_(std::move(prep)),
      init_seed_(init_seed),
      net_(make_network(arch, shape, num_classes, init_seed)) {
  if (num_classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  if (prep_.mean.size() != static_cast<std::size_t>(shape.channels) || prep_.std.size() != prep_.mean.size()) {
    throw std::invalid_argument("preprocessing must give one mean/std per channel");
  }
}

Classifier::Classifier(const Classifier& other)
    : arch_(other.arch_),
      num_classes_(other.num_classes_),
      shape_(other.shape_),
      prep_(other.prep_),
      init_seed_(other.init_seed_),
      metadata_(other.metadata_),
      net_(make_network(other.arch_, other.shape_, other.num_classes_, other.init_seed_)) {
  auto& src = const_cast<nn::Sequential&>(other.net_);
  nn::unpack_state(net_, nn::pack_state(src));
  auto dst_params = net_.parameters();
  auto src_params = src.parameters();
  for (std::size_t i = 0; i < dst_params.size(); ++i) dst_params[i]->requires_grad = src_params[i]->requires_grad;
}

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) *this = Classifier(other);
  return *this;
}

nn::Tensor Classifier::logits(const nn::Tensor& pixels, nn::Mode mode) {
  check_pixels(pixels, shape_, "classifier");
  nn::Tensor x = pixels;
  const std::size_t plane = static_cast<std::size_t>(shape_.height) * shape_.width;
  const int n = pixels.dim(0);
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < shape_.channels; ++c) {
      float* p = x.ptr() + (static_cast<std::size_t>(b) * shape_.channels + c) * plane;
      const float m = prep_.mean[c], inv = 1.0f / prep_.std[c];
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - m) * inv;
    }
  }
  return net_.forward(x, mode);
}

nn::Tensor Classifier::input_gradient(const nn::Tensor& grad_logits) {
  nn::Tensor g = net_.backward(grad_logits);
  const std::size_t plane = static_cast<std::size_t>(shape_.height) * shape_.width;
  const int n = g.dim(0);
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < shape_.channels; ++c) {
      float* p = g.ptr() + (static_cast<std::size_t>(b) * shape_.channels + c) * plane;
      const float inv = 1.0f / prep_.std[c];
      for (std::size_t k = 0; k < plane; ++k) p[k] *= inv;
    }
  }
  return g;
}

std::vector<int> Classifier::predict(std::span<const Image> images, int batch_size) {
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), images.size() - start);
    const nn::Tensor z = logits(images.subspan(start, len));
    for (std::size_t i = 0; i < len; ++i) {
      out.push_back(argmax(std::span<const float>(z.ptr() + i * num_classes_, static_cast<std::size_t>(num_classes_))));
    }
  }
  return out;
}

double Classifier::accuracy(const LabeledDataset& data, int batch_size) {
  if (data.empty()) throw std::invalid_argument("accuracy of an empty dataset");
  const auto pred = predict(data.images, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

nn::Linear& Classifier::final_layer() { return last_linear(net_); }

void Classifier::check_input(const Image& img) const {
  if (img.channels != shape_.channels || img.height != shape_.height || img.width != shape_.width) {
    throw std::invalid_argument("classifier expects " + shape_of(shape_.channels, shape_.height, shape_.width) +
                                " images, got " + shape_of(img));
  }
}

void Classifier::save(const fs::path& dir) {
  fs::create_directories(dir);
  io::write_floats(dir / "weights.bin", state());
  json meta = metadata_;
  meta["kind"] = "classifier";
  meta["arch"] = arch_name(arch_);
  meta["num_classes"] = num_classes_;
  meta["input_shape"] = shape_json(shape_);
  meta["preprocessing"] = {{"mean", prep_.mean}, {"std", prep_.std}};
  meta["init_seed"] = init_seed_;
  io::write_json(dir / "meta.json", meta);
}

Classifier Classifier::load(const fs::path& dir) {
  const json meta = io::read_json(dir / "meta.json");
  if (meta.value("kind", "") != "classifier") throw std::runtime_error(dir.string() + ": not a classifier checkpoint");
  Classifier c(parse_arch(meta.at("arch").get<std::string>()), meta.at("num_classes").get<int>(),
               shape_from_json(meta.at("input_shape")),
               {meta.at("preprocessing").at("mean").get<std::vector<float>>(),
                meta.at("preprocessing").at("std").get<std::vector<float>>()},
               meta.at("init_seed").get<std::uint64_t>());
  c.load_state(io::read_floats(dir / "weights.bin"));
  c.metadata_ = meta;
  for (const char* k : {"kind", "arch", "num_classes", "input_shape", "preprocessing", "init_seed"}) c.metadata_.erase(k);
  return c;
}

Classifier build_source_classifier(DatasetId dataset, std::uint64_t init_seed) {
  if (dataset == DatasetId::kMnist) {
    Classifier c(Arch::kMnistCnn, 10, {1, 28, 28}, Preprocessing::for_dataset(dataset), init_seed);
    c.metadata()["dataset"] = "mnist";
    return c;
  }
  Classifier c(Arch::kResNet18, 10, {3, 32, 32}, Preprocessing::for_dataset(dataset), init_seed);
  c.metadata()["dataset"] = "cifar10";
  return c;
}

// ---------------------------------------------------------------- TransformNet

TransformNet::TransformNet(Arch arch, InputShape shape, ParamSpace space, std::uint64_t init_seed, OutputScale scale)
    : arch_(arch),
      shape_(shape),
      space_(space),
      init_seed_(init_seed),
      scale_(scale),
      net_(make_network(arch, shape, 3, init_seed)) {
  space_.validate();
  for (double k : scale_) {
    if (!(k > 0.0)) throw std::invalid_argument("transform net: output scale must be > 0");
  }
  auto& head = last_linear(net_);
  std::fill(head.weight().value.begin(), head.weight().value.end(), 0.0f);
  for (std::size_t a = 0; a < 3; ++a) {
    head.bias().value[a] = static_cast<float>(space_.bounds(kAllAxes[a]).identity / scale_[a]);
  }
}

std::array<double, 3> TransformNet::unclamped_params(std::span<const float> raw) const {
  return {scale_[0] * raw[0], scale_[1] * raw[1], scale_[2] * raw[2]};
}

TransformNet::TransformNet(const TransformNet& other)
    : arch_(other.arch_),
      shape_(other.shape_),
      space_(other.space_),
      init_seed_(other.init_seed_),
      scale_(other.scale_),
      metadata_(other.metadata_),
      net_(make_network(other.arch_, other.shape_, 3, other.init_seed_)) {
  nn::unpack_state(net_, nn::pack_state(const_cast<nn::Sequential&>(other.net_)));
}

TransformNet& TransformNet::operator=(const TransformNet& other) {
  if (this != &other) *this = TransformNet(other);
  return *this;
}

nn::Tensor TransformNet::raw_outputs(const nn::Tensor& pixels, nn::Mode mode) {
  check_pixels(pixels, shape_, "transform net");
  return net_.forward(pixels, mode);
}

std::vector<TransformParams> TransformNet::predict(std::span<const Image> images, int batch_size) {
  std::vector<TransformParams> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), images.size() - start);
    const nn::Tensor raw = raw_outputs(to_batch(images.subspan(start, len)));
    for (std::size_t i = 0; i < len; ++i) {
      out.push_back(clamp_params(unclamped_params(std::span<const float>(raw.data).subspan(3 * i, 3)), space_));
    }
  }
  return out;
}

void TransformNet::save(const fs::path& dir) {
  fs::create_directories(dir);
  io::write_floats(dir / "weights.bin", state());
  json meta = metadata_;
  meta["kind"] = "transform_net";
  meta["arch"] = arch_name(arch_);
  meta["input_shape"] = shape_json(shape_);
  meta["init_seed"] = init_seed_;
  json space = json::object();
  for (Axis a : kAllAxes) {
    const auto& b = space_.bounds(a);
    space[axis_name(a)] = {{"low", b.low}, {"high", b.high}, {"identity", b.identity}};
  }
  meta["param_space"] = space;
  meta["output_scale"] = scale_;
  io::write_json(dir / "meta.json", meta);
}

TransformNet TransformNet::load(const fs::path& dir) {
  const json meta = io::read_json(dir / "meta.json");
  if (meta.value("kind", "") != "transform_net") throw std::runtime_error(dir.string() + ": not a transform-net checkpoint");
  ParamSpace space;
  auto read_axis = [&](Axis a, AxisBounds& b) {
    const auto& j = meta.at("param_space").at(axis_name(a));
    b = {j.at("low").get<double>(), j.at("high").get<double>(), j.at("identity").get<double>()};
  };
  read_axis(Axis::kRotation, space.rotation);
  read_axis(Axis::kBrightness, space.brightness);
  read_axis(Axis::kContrast, space.contrast);
  TransformNet t(parse_arch(meta.at("arch").get<std::string>()), shape_from_json(meta.at("input_shape")), space,
                 meta.at("init_seed").get<std::uint64_t>(), meta.at("output_scale").get<OutputScale>());
  t.load_state(io::read_floats(dir / "weights.bin"));
  t.metadata_ = meta;
  for (const char* k : {"kind", "arch", "input_shape", "init_seed", "param_space", "output_scale"}) t.metadata_.erase(k);
  return t;
}

TransformNet build_transform_net(DatasetId dataset, const ParamSpace& space, std::uint64_t init_seed,
                                 OutputScale scale) {
  if (dataset == DatasetId::kMnist) return TransformNet(Arch::kMnistTransformNet, {1, 28, 28}, space, init_seed, scale);
  return TransformNet(Arch::kCifarTransformNet, {3, 32, 32}, space, init_seed, scale);
}

// ------------------------------------------------------------------- training

TrainConfig TrainConfig::for_dataset(DatasetId id, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.augment = id == DatasetId::kCifar10;
  return cfg;
}

json TrainConfig::to_json() const {
  return {{"optimizer", "adam"},          {"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"max_epochs", max_epochs},     {"patience", patience},           {"validation_fraction", validation_fraction},
          {"augment", augment},           {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.augment = j.value("augment", c.augment);
  c.seed = j.value("seed", c.seed);
  return c;
}

json TrainReport::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy},
                           {"best_val_accuracy", e.best_val_accuracy}});
  }
  return {{"epochs", epochs_json}, {"best_epoch", best_epoch}, {"best_val_accuracy", best_val_accuracy},
          {"train_size", train_size}, {"val_size", val_size}};
}

namespace {

Image augment_image(const Image& img, std::mt19937_64& gen) {
  constexpr int kPad = 4;
  std::uniform_int_distribution<int> shift(-kPad, kPad);
  std::bernoulli_distribution flip(0.5);
  const int dy = shift(gen), dx = shift(gen);
  const bool mirror = flip(gen);
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    for (int i = 0; i < img.height; ++i) {
      for (int j = 0; j < img.width; ++j) {
        const int si = i + dy;
        const int sj0 = j + dx;
        const int sj = mirror ? img.width - 1 - sj0 : sj0;
        if (si >= 0 && si < img.height && sj >= 0 && sj < img.width) out.at(c, i, j) = img.at(c, si, sj);
      }
    }
  }
  return out;
}

}  // namespace

TrainReport fit_classifier(Classifier& model, const LabeledDataset& train, const LabeledDataset& val,
                           const TrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("fit_classifier: empty training set");
  if (val.empty()) throw std::invalid_argument("fit_classifier: empty validation set");
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1) {
    throw std::invalid_argument("fit_classifier: batch size, epochs and patience must be >= 1");
  }
  train.validate();
  model.check_input(train.images.front());

  auto params = model.net().parameters();
  nn::Adam adam(params, cfg.learning_rate);
  model.net().zero_grad();

  TrainReport report;
  report.train_size = train.size();
  report.val_size = val.size();
  report.best_val_accuracy = -1.0;
  std::vector<float> best_state = model.state();
  std::vector<std::size_t> order(train.size());
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto gen = rng::stream(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), gen);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<Image> batch;
    std::vector<int> labels;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(cfg.augment ? augment_image(train.images[order[k]], gen) : train.images[order[k]]);
        labels.push_back(train.labels[order[k]]);
      }
      const nn::Tensor z = model.logits(to_batch(batch), cfg.eval_mode_forward ? nn::Mode::kEval : nn::Mode::kTrain);
      nn::Tensor g;
      loss_sum += nn::softmax_cross_entropy(z, labels, &g) * static_cast<double>(labels.size());
      seen += labels.size();
      model.net().backward(g);
      adam.step();
    }
    const double val_acc = model.accuracy(val);
    if (val_acc > report.best_val_accuracy) {
      report.best_val_accuracy = val_acc;
      report.best_epoch = epoch;
      best_state = model.state();
      since_best = 0;
    } else {
      ++since_best;
    }
    report.epochs.push_back({epoch, loss_sum / static_cast<double>(seen), val_acc, report.best_val_accuracy});
    if (cfg.log) {
      std::ostringstream os;
      os << "epoch " << epoch << " loss " << loss_sum / static_cast<double>(seen) << " val_acc " << val_acc;
      cfg.log(os.str());
    }
    if (since_best >= cfg.patience) break;
  }
  model.load_state(best_state);
  return report;
}

TrainReport train_source_classifier(Classifier& model, const LabeledDataset& data, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_source_classifier: empty dataset");
  data.validate();
  const std::set<int> classes(data.labels.begin(), data.labels.end());
  if (classes.size() < 2) throw std::invalid_argument("train_source_classifier: data holds a single class");
  if (static_cast<int>(classes.size()) != model.num_classes()) {
    throw std::invalid_argument("train_source_classifier: labels cover " + std::to_string(classes.size()) + " of " +
                                std::to_string(model.num_classes()) + " classes");
  }
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto gen = rng::stream(cfg.seed, "train-val-split");
  std::shuffle(order.begin(), order.end(), gen);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(data.size())));
  if (n_val == 0 || n_val >= data.size()) throw std::invalid_argument("dataset too small for a train/validation split");
  const std::span<const std::size_t> all(order);
  const LabeledDataset val = data.subset(all.first(n_val), data.name + "/val");
  const LabeledDataset train = data.subset(all.subspan(n_val), data.name + "/train");
  TrainReport report = fit_classifier(model, train, val, cfg);
  model.metadata()["training"] = cfg.to_json();
  model.metadata()["training_seed"] = cfg.seed;
  model.metadata()["trained_on"] = data.name;
  model.metadata()["best_val_accuracy"] = report.best_val_accuracy;
  return report;
}

}  // namespace sfda
