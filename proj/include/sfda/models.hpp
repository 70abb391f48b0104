#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfda/dataset.hpp"
#include "sfda/nn.hpp"
#include "sfda/transforms.hpp"

namespace sfda {

// kLinearProbe is a single linear layer over the flattened pixels.
enum class Arch { kMnistCnn, kResNet18, kMnistTransformNet, kCifarTransformNet, kLinearProbe };

std::string arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct InputShape {
  int channels = 1, height = 28, width = 28;
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

// Per-channel normalization applied inside the classifier, after any
// backward transform.
struct Preprocessing {
  std::vector<float> mean;
  std::vector<float> std;

  static Preprocessing for_dataset(DatasetId id);
};

nn::Tensor to_batch(std::span<const Image> images);
Image image_from_batch(const nn::Tensor& batch, int index);

std::vector<double> softmax(std::span<const float> logits, double temperature = 1.0);

// Maximum softmax probability of logits / temperature.
double msp(std::span<const float> logits, double temperature);

int argmax(std::span<const float> values);

// ------------------------------------------------------------------ classifier

class Classifier {
 public:
  Classifier(Arch arch, int num_classes, InputShape shape, Preprocessing prep,
             std::uint64_t init_seed);

  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  // Logits for a pixel-space batch (N, C, H, W). Normalization happens here,
  // exactly once. Caches activations for input_gradient()/backward().
  nn::Tensor logits(const nn::Tensor& pixels, nn::Mode mode = nn::Mode::kEval);
  nn::Tensor logits(std::span<const Image> images) { return logits(to_batch(images)); }

  // Gradient of a scalar with respect to the pixels of the most recent
  // logits() call, given its gradient with respect to the logits. Weight
  // gradients accumulate only for parameters that require grad.
  nn::Tensor input_gradient(const nn::Tensor& grad_logits);

  std::vector<int> predict(std::span<const Image> images, int batch_size = 256);
  double accuracy(const LabeledDataset& data, int batch_size = 256);

  void freeze() { net_.set_requires_grad(false); }
  nn::Sequential& net() { return net_; }
  nn::Linear& final_layer();

  Arch arch() const { return arch_; }
  int num_classes() const { return num_classes_; }
  const InputShape& input_shape() const { return shape_; }
  const Preprocessing& preprocessing() const { return prep_; }
  std::uint64_t init_seed() const { return init_seed_; }

  // Free-form metadata persisted with checkpoints (training seed, dataset,
  // fine-tuning scheme, ...).
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  std::vector<float> state() { return nn::pack_state(net_); }
  void load_state(std::span<const float> blob) { nn::unpack_state(net_, blob); }

  void save(const std::filesystem::path& dir);
  static Classifier load(const std::filesystem::path& dir);

  void check_input(const Image& img) const;

 private:
  Arch arch_;
  int num_classes_;
  InputShape shape_;
  Preprocessing prep_;
  std::uint64_t init_seed_;
  nlohmann::json metadata_ = nlohmann::json::object();
  nn::Sequential net_;
};

// MNIST: the two-conv / three-linear CNN; CIFAR-10: ResNet-18 with a
// 10-way head.
Classifier build_source_classifier(DatasetId dataset, std::uint64_t init_seed = 0);

// -------------------------------------------------------------- transform net

// Per-axis factor from network output units to parameter units.
using OutputScale = std::array<double, 3>;

// Rotation is predicted as a fraction of a half turn; brightness and
// contrast are predicted directly.
inline constexpr OutputScale kDefaultOutputScale = {180.0, 1.0, 1.0};

class TransformNet {
 public:
  TransformNet(Arch arch, InputShape shape, ParamSpace space, std::uint64_t init_seed,
               OutputScale scale = kDefaultOutputScale);

  TransformNet(const TransformNet& other);
  TransformNet& operator=(const TransformNet& other);
  TransformNet(TransformNet&&) = default;
  TransformNet& operator=(TransformNet&&) = default;

  // Unclamped network outputs in network units, shape (N, 3) in
  // (rotation, brightness, contrast) order. Caches activations for
  // backward().
  nn::Tensor raw_outputs(const nn::Tensor& pixels, nn::Mode mode = nn::Mode::kEval);
  void backward(const nn::Tensor& grad_raw) { net_.backward(grad_raw); }

  // Network units to parameter units, before clamping.
  std::array<double, 3> unclamped_params(std::span<const float> raw) const;
  const OutputScale& output_scale() const { return scale_; }

  // Clamped parameter predictions.
  std::vector<TransformParams> predict(std::span<const Image> images, int batch_size = 256);

  nn::Sequential& net() { return net_; }
  const ParamSpace& space() const { return space_; }
  Arch arch() const { return arch_; }
  const InputShape& input_shape() const { return shape_; }
  nlohmann::json& metadata() { return metadata_; }

  std::vector<float> state() { return nn::pack_state(net_); }
  void load_state(std::span<const float> blob) { nn::unpack_state(net_, blob); }

  void save(const std::filesystem::path& dir);
  static TransformNet load(const std::filesystem::path& dir);

 private:
  Arch arch_;
  InputShape shape_;
  ParamSpace space_;
  std::uint64_t init_seed_;
  OutputScale scale_;
  nlohmann::json metadata_ = nlohmann::json::object();
  nn::Sequential net_;
};

// Final layer: zero weights, bias = identity triple, so the initial
// prediction is the identity transform for every input.
TransformNet build_transform_net(DatasetId dataset, const ParamSpace& space = ParamSpace::standard(),
                                 std::uint64_t init_seed = 0, OutputScale scale = kDefaultOutputScale);

// ------------------------------------------------------------------- training

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  int max_epochs = 50;
  int patience = 5;
  double validation_fraction = 0.2;
  // Horizontal flips + 4-pixel-padded random crops (CIFAR recipe).
  bool augment = false;
  // Run training forwards in inference mode (batch-norm statistics stay
  // fixed); used when only the head is trained.
  bool eval_mode_forward = false;
  std::uint64_t seed = 0;
  // Called after every epoch; may be empty.
  std::function<void(const std::string&)> log;

  static TrainConfig for_dataset(DatasetId id, std::uint64_t seed);
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double best_val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::size_t train_size = 0, val_size = 0;

  nlohmann::json to_json() const;
};

// Adam + early stopping on validation accuracy; restores the best weights.
// Only parameters with requires_grad are updated.
TrainReport fit_classifier(Classifier& model, const LabeledDataset& train, const LabeledDataset& val,
                           const TrainConfig& cfg);

// Seeded 80/20 split of `data`, then fit_classifier.
TrainReport train_source_classifier(Classifier& model, const LabeledDataset& data,
                                    const TrainConfig& cfg);

}  // namespace sfda
