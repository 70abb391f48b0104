#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "sfda/nn.hpp"

using namespace sfda::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.data) v = u(gen);
  return t;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
  return s;
}

// Directional finite-difference check of a layer's input and parameter
// gradients for the scalar <G, layer(x)>.
void check_layer(Layer& layer, const Tensor& x, Mode mode, std::uint64_t seed, double tol = 2e-2,
                 double h = 1e-3) {
  const Tensor y = layer.forward(x, mode);
  const Tensor g = random_tensor(y.shape, seed + 1);
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  const Tensor gx = layer.backward(g);
  ASSERT_EQ(gx.shape, x.shape);

  auto objective = [&](const Tensor& in) { return dot(g.data, layer.forward(in, mode).data); };
  const Tensor d = random_tensor(x.shape, seed + 2);
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    xp.data[i] += float(h * d.data[i]);
    xm.data[i] -= float(h * d.data[i]);
  }
  const double fd = (objective(xp) - objective(xm)) / (2 * h);
  const double an = dot(gx.data, d.data);
  EXPECT_NEAR(an, fd, tol * std::max(1.0, std::abs(fd))) << layer.describe() << " input";

  for (auto* p : params) {
    const std::vector<float> saved = p->value;
    const std::vector<float> grad = p->grad;
    const Tensor dp = random_tensor({static_cast<int>(saved.size())}, seed + 3);
    for (std::size_t i = 0; i < saved.size(); ++i) p->value[i] = saved[i] + float(h * dp.data[i]);
    const double up = objective(x);
    for (std::size_t i = 0; i < saved.size(); ++i) p->value[i] = saved[i] - float(h * dp.data[i]);
    const double down = objective(x);
    p->value = saved;
    const double fdp = (up - down) / (2 * h);
    EXPECT_NEAR(dot(grad, dp.data), fdp, tol * std::max(1.0, std::abs(fdp))) << layer.describe() << " " << p->name;
  }
}

}  // namespace

TEST(Layers, LinearGradients) {
  std::mt19937_64 rng(1);
  Linear lin(7, 5, rng);
  check_layer(lin, random_tensor({3, 7}, 10), Mode::kTrain, 10);
}

TEST(Layers, ConvGradients) {
  std::mt19937_64 rng(2);
  Conv2d conv(2, 3, 3, 1, 0, true, rng);
  check_layer(conv, random_tensor({2, 2, 6, 6}, 20), Mode::kTrain, 20);
  Conv2d strided(3, 4, 3, 2, 1, false, rng);
  check_layer(strided, random_tensor({2, 3, 7, 7}, 21), Mode::kTrain, 21);
}

TEST(Layers, ConvMatchesDirectSum) {
  std::mt19937_64 rng(3);
  Conv2d conv(1, 1, 3, 1, 1, false, rng);
  std::vector<Parameter*> ps;
  conv.collect_parameters(ps);
  ps[0]->value = {0, 0, 0, 0, 1, 0, 0, 0, 0};
  const Tensor x = random_tensor({1, 1, 4, 4}, 30);
  EXPECT_EQ(conv.forward(x, Mode::kEval).data, x.data);
  ps[0]->value = {1, 1, 1, 1, 1, 1, 1, 1, 1};
  const Tensor y = conv.forward(x, Mode::kEval);
  double s = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s += x.data[static_cast<std::size_t>(i * 4 + j)];
  EXPECT_NEAR(y.data[0], s, 1e-5);
}

TEST(Layers, MaxPoolGradients) {
  MaxPool2d pool(2, 2);
  check_layer(pool, random_tensor({2, 3, 6, 6}, 40), Mode::kTrain, 40);
  MaxPool2d padded(3, 2, 1);
  check_layer(padded, random_tensor({1, 2, 7, 7}, 41), Mode::kTrain, 41);
}

TEST(Layers, ReluAndFlattenGradients) {
  ReLU relu;
  Tensor x = random_tensor({2, 3, 4, 4}, 50);
  for (auto& v : x.data) v += v < 0 ? -0.05f : 0.05f;  // keep clear of the kink
  check_layer(relu, x, Mode::kTrain, 50);
  Flatten flat;
  check_layer(flat, random_tensor({2, 3, 4, 4}, 51), Mode::kTrain, 51);
  GlobalAvgPool gap;
  check_layer(gap, random_tensor({2, 3, 4, 4}, 52), Mode::kTrain, 52);
}

TEST(Layers, BatchNormGradientsBothModes) {
  BatchNorm2d bn(3);
  check_layer(bn, random_tensor({4, 3, 3, 3}, 60), Mode::kTrain, 60, 3e-2);
  check_layer(bn, random_tensor({4, 3, 3, 3}, 61), Mode::kEval, 61);
}

TEST(Layers, BatchNormTrainingNormalizesAndTracksStats) {
  BatchNorm2d bn(2);
  const Tensor x = random_tensor({8, 2, 4, 4}, 70, 2.0f, 4.0f);
  const Tensor y = bn.forward(x, Mode::kTrain);
  for (int c = 0; c < 2; ++c) {
    double m = 0.0;
    for (int n = 0; n < 8; ++n)
      for (int k = 0; k < 16; ++k) m += y.data[static_cast<std::size_t>((n * 2 + c) * 16 + k)];
    EXPECT_NEAR(m / 128.0, 0.0, 1e-4);
  }
  std::vector<std::vector<float>*> bufs;
  bn.collect_buffers(bufs);
  ASSERT_EQ(bufs.size(), 2u);
  EXPECT_NEAR((*bufs[0])[0], 0.1 * 3.0, 0.05);  // momentum 0.1 toward the batch mean of ~3
}

TEST(Layers, BasicBlockGradients) {
  std::mt19937_64 rng(4);
  BasicBlock identity(4, 4, 1, rng);
  check_layer(identity, random_tensor({2, 4, 5, 5}, 80), Mode::kEval, 80, 2e-2, 1e-4);
  BasicBlock projection(3, 6, 2, rng);
  check_layer(projection, random_tensor({2, 3, 6, 6}, 81), Mode::kEval, 81, 2e-2, 1e-4);
}

TEST(Sequential, FrozenParametersAccumulateNothing) {
  std::mt19937_64 rng(5);
  Sequential net;
  net.add<Linear>(4, 3, rng);
  net.add<ReLU>();
  net.add<Linear>(3, 2, rng);
  net.set_requires_grad(false);
  const Tensor x = random_tensor({2, 4}, 90);
  net.forward(x, Mode::kTrain);
  const Tensor gx = net.backward(random_tensor({2, 2}, 91));
  for (auto* p : net.parameters())
    for (float g : p->grad) EXPECT_EQ(g, 0.0f);
  double norm = 0.0;
  for (float v : gx.data) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Loss, SoftmaxCrossEntropyValueAndGradient) {
  Tensor logits({1, 2});
  logits.data = {2.0f, 0.0f};
  Tensor grad;
  const int label = 0;
  const double loss = softmax_cross_entropy(logits, std::span<const int>(&label, 1), &grad);
  const double p0 = std::exp(2.0) / (std::exp(2.0) + 1.0);
  EXPECT_NEAR(loss, -std::log(p0), 1e-6);
  EXPECT_NEAR(grad.data[0], p0 - 1.0, 1e-6);
  EXPECT_NEAR(grad.data[1], 1.0 - p0, 1e-6);
}

TEST(Optim, AdamMinimizesQuadratic) {
  Parameter p("w", 3);
  p.value = {3.0f, -2.0f, 1.0f};
  Adam opt({&p}, 0.1);
  for (int t = 0; t < 500; ++t) {
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0f * p.value[i];
    opt.step();
  }
  for (float v : p.value) EXPECT_NEAR(v, 0.0f, 1e-2);
  for (float g : p.grad) EXPECT_EQ(g, 0.0f);
}

TEST(Optim, AdamFirstStepHasLearningRateMagnitude) {
  Parameter p("w", 1);
  p.value = {1.0f};
  p.grad = {123.0f};
  Adam opt({&p}, 5e-5);
  opt.step();
  EXPECT_NEAR(p.value[0], 1.0f - 5e-5f, 1e-7);
}

TEST(Optim, AdamSkipsFrozenParameters) {
  Parameter p("w", 1);
  p.value = {1.0f};
  p.grad = {1.0f};
  p.requires_grad = false;
  Adam opt({&p}, 0.1);
  opt.step();
  EXPECT_EQ(p.value[0], 1.0f);
}

TEST(State, PackUnpackRoundTrip) {
  std::mt19937_64 rng(6);
  Sequential a;
  a.add<Conv2d>(1, 2, 3, 1, 0, true, rng);
  a.add<BatchNorm2d>(2);
  Sequential b;
  std::mt19937_64 other(7);
  b.add<Conv2d>(1, 2, 3, 1, 0, true, other);
  b.add<BatchNorm2d>(2);
  a.forward(random_tensor({4, 1, 5, 5}, 100), Mode::kTrain);  // moves running stats
  const auto blob = pack_state(a);
  unpack_state(b, blob);
  EXPECT_EQ(pack_state(b), blob);
  const Tensor x = random_tensor({2, 1, 5, 5}, 101);
  EXPECT_EQ(a.forward(x, Mode::kEval).data, b.forward(x, Mode::kEval).data);
  EXPECT_THROW(unpack_state(b, std::span<const float>(blob.data(), blob.size() - 1)), std::exception);
}
