#pragma once

// Minimal batched CNN building blocks: NCHW float tensors, layers with an
// explicit forward/backward pair, and Adam. Backward always returns the
// gradient with respect to the layer input; weight gradients are only
// accumulated for parameters with requires_grad set.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sfda::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, float fill = 0.0f);

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, std::size_t size)
      : name(std::move(n)), value(size, 0.0f), grad(size, 0.0f) {}
};

enum class Mode { kTrain, kEval };

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  // Consumes the cache of the most recent forward call.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_parameters(std::vector<Parameter*>& out) { (void)out; }
  // Non-trainable persistent state (batch-norm running statistics).
  virtual void collect_buffers(std::vector<std::vector<float>*>& out) { (void)out; }
  virtual std::string describe() const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
         bool bias, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

 private:
  int in_channels_, out_channels_, kernel_, stride_, padding_;
  bool has_bias_;
  Parameter weight_, bias_;
  std::vector<int> in_shape_;
  std::vector<float> cols_;
};

class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override { return "relu"; }

 private:
  std::vector<std::uint8_t> active_;
  std::vector<int> shape_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {}
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override;

 private:
  int kernel_, stride_, padding_;
  std::vector<int> in_shape_;
  std::vector<std::int64_t> argmax_;
};

class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<std::vector<float>*>& out) override;
  std::string describe() const override;

 private:
  int channels_;
  float momentum_, eps_;
  Parameter gamma_, beta_;
  std::vector<float> running_mean_, running_var_;
  // cache
  Mode mode_ = Mode::kEval;
  std::vector<int> shape_;
  std::vector<float> xhat_, inv_std_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string describe() const override { return "global_avg_pool"; }

 private:
  std::vector<int> in_shape_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<std::vector<float>*>& out) override;
  std::string describe() const override;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  std::vector<Parameter*> parameters();
  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ResNet basic block: conv-bn-relu-conv-bn plus identity or projection
// shortcut, followed by relu.
class BasicBlock final : public Layer {
 public:
  BasicBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<std::vector<float>*>& out) override;
  std::string describe() const override;

 private:
  Sequential main_;
  Sequential shortcut_;  // empty means identity
  ReLU out_relu_;
};

class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);
  // Updates every parameter with requires_grad, then clears all gradients.
  void step();
  double lr() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Mean softmax cross-entropy over the batch; writes d(loss)/d(logits).
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Tensor* grad_logits);

// Flat float blob of all parameters followed by all buffers.
std::vector<float> pack_state(Layer& net);
void unpack_state(Layer& net, std::span<const float> blob);

}  // namespace sfda::nn
