#include "sfda/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sfda::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXf>;

// PyTorch default: kaiming_uniform(a=sqrt(5)) on weights, U(+-1/sqrt(fan_in)) on bias.
void uniform_init(std::vector<float>& v, int fan_in, std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& w : v) w = dist(rng);
}

void require_rank(const Tensor& x, int rank, const char* who) {
  if (x.rank() != rank) {
    throw std::invalid_argument(std::string(who) + ": expected rank " + std::to_string(rank) +
                                " input, got " + shape_string(x.shape));
  }
}

}  // namespace

Tensor::Tensor(std::vector<int> dims, float fill)
    : shape(std::move(dims)), data(shape_numel(shape), fill) {}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
               bool bias, std::mt19937_64& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_("weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias_("bias", bias ? static_cast<std::size_t>(out_channels) : 0) {
  const int fan_in = in_channels * kernel * kernel;
  uniform_init(weight_.value, fan_in, rng);
  if (has_bias_) uniform_init(bias_.value, fan_in, rng);
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "conv2d");
  if (x.dim(1) != in_channels_) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(in_channels_) +
                                " input channels, got " + shape_string(x.shape));
  }
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = out_size(h), wo = out_size(w);
  const int k = kernel_;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t ncols = static_cast<std::size_t>(n) * plane;
  const std::size_t krows = static_cast<std::size_t>(in_channels_) * k * k;
  in_shape_ = x.shape;
  cols_.assign(krows * ncols, 0.0f);

  for (int c = 0; c < in_channels_; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = cols_.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ncols;
        for (int b = 0; b < n; ++b) {
          const float* src = x.ptr() + (static_cast<std::size_t>(b) * in_channels_ + c) * h * w;
          float* dst = row + b * plane;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ + ki - padding_;
            if (ih < 0 || ih >= h) continue;
            const float* srow = src + static_cast<std::size_t>(ih) * w;
            float* drow = dst + static_cast<std::size_t>(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride_ + kj - padding_;
              if (iw >= 0 && iw < w) drow[ow] = srow[iw];
            }
          }
        }
      }
    }
  }

  RowMat out_mat(out_channels_, static_cast<Eigen::Index>(ncols));
  out_mat.noalias() = CMapMat(weight_.value.data(), out_channels_, static_cast<Eigen::Index>(krows)) *
                      CMapMat(cols_.data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
  Tensor y({n, out_channels_, ho, wo});
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < out_channels_; ++o) {
      const float bo = has_bias_ ? bias_.value[o] : 0.0f;
      const float* src = out_mat.data() + static_cast<std::size_t>(o) * ncols + b * plane;
      float* dst = y.ptr() + (static_cast<std::size_t>(b) * out_channels_ + o) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bo;
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const int n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const int ho = out_size(h), wo = out_size(w);
  const int k = kernel_;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t ncols = static_cast<std::size_t>(n) * plane;
  const std::size_t krows = static_cast<std::size_t>(in_channels_) * k * k;

  RowMat g(out_channels_, static_cast<Eigen::Index>(ncols));
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < out_channels_; ++o) {
      const float* src = grad_out.ptr() + (static_cast<std::size_t>(b) * out_channels_ + o) * plane;
      std::copy(src, src + plane, g.data() + static_cast<std::size_t>(o) * ncols + b * plane);
    }
  }
  CMapMat cols(cols_.data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
  if (weight_.requires_grad) {
    MapMat(weight_.grad.data(), out_channels_, static_cast<Eigen::Index>(krows)).noalias() +=
        g * cols.transpose();
  }
  if (has_bias_ && bias_.requires_grad) {
    for (int o = 0; o < out_channels_; ++o) {
      double acc = 0.0;
      const float* row = g.data() + static_cast<std::size_t>(o) * ncols;
      for (std::size_t k = 0; k < ncols; ++k) acc += row[k];
      bias_.grad[static_cast<std::size_t>(o)] += static_cast<float>(acc);
    }
  }
  RowMat dcols(static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
  dcols.noalias() =
      CMapMat(weight_.value.data(), out_channels_, static_cast<Eigen::Index>(krows)).transpose() * g;

  Tensor dx(in_shape_);
  for (int c = 0; c < in_channels_; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = dcols.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ncols;
        for (int b = 0; b < n; ++b) {
          float* dst = dx.ptr() + (static_cast<std::size_t>(b) * in_channels_ + c) * h * w;
          const float* src = row + b * plane;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ + ki - padding_;
            if (ih < 0 || ih >= h) continue;
            float* drow = dst + static_cast<std::size_t>(ih) * w;
            const float* srow = src + static_cast<std::size_t>(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride_ + kj - padding_;
              if (iw >= 0 && iw < w) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

std::string Conv2d::describe() const {
  std::ostringstream os;
  os << "conv2d(" << in_channels_ << "->" << out_channels_ << ", k=" << kernel_
     << ", s=" << stride_ << ", p=" << padding_ << ")";
  return os.str();
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng)
    : in_(in_features),
      out_(out_features),
      weight_("weight", static_cast<std::size_t>(in_features) * out_features),
      bias_("bias", static_cast<std::size_t>(out_features)) {
  uniform_init(weight_.value, in_features, rng);
  uniform_init(bias_.value, in_features, rng);
}

Tensor Linear::forward(const Tensor& x, Mode) {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_) {
    throw std::invalid_argument("linear: expected " + std::to_string(in_) + " features, got " +
                                shape_string(x.shape));
  }
  const int n = x.dim(0);
  input_ = x;
  Tensor y({n, out_});
  MapMat ym(y.ptr(), n, out_);
  ym.noalias() = CMapMat(x.ptr(), n, in_) * CMapMat(weight_.value.data(), out_, in_).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int n = input_.dim(0);
  CMapMat g(grad_out.ptr(), n, out_);
  if (weight_.requires_grad) {
    MapMat(weight_.grad.data(), out_, in_).noalias() += g.transpose() * CMapMat(input_.ptr(), n, in_);
  }
  if (bias_.requires_grad) {
    // Fixed-order sum: Eigen reductions vary with buffer alignment.
    for (int o = 0; o < out_; ++o) {
      double acc = 0.0;
      for (int b = 0; b < n; ++b) acc += grad_out.data[static_cast<std::size_t>(b) * out_ + o];
      bias_.grad[static_cast<std::size_t>(o)] += static_cast<float>(acc);
    }
  }
  Tensor dx({n, in_});
  MapMat(dx.ptr(), n, in_).noalias() = g * CMapMat(weight_.value.data(), out_, in_);
  return dx;
}

void Linear::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

std::string Linear::describe() const {
  return "linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, Mode) {
  Tensor y = x;
  shape_ = x.shape;
  active_.resize(x.numel());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const bool on = y.data[i] > 0.0f;
    active_[i] = on;
    if (!on) y.data[i] = 0.0f;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.numel(); ++i) {
    if (!active_[i]) dx.data[i] = 0.0f;
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "maxpool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h + 2 * padding_ - kernel_) / stride_ + 1;
  const int wo = (w + 2 * padding_ - kernel_) / stride_ + 1;
  in_shape_ = x.shape;
  Tensor y({n, c, ho, wo});
  argmax_.assign(y.numel(), -1);
  std::size_t out_idx = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow, ++out_idx) {
        float best = -std::numeric_limits<float>::infinity();
        std::int64_t best_idx = -1;
        for (int ki = 0; ki < kernel_; ++ki) {
          const int ih = oh * stride_ + ki - padding_;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < kernel_; ++kj) {
            const int iw = ow * stride_ + kj - padding_;
            if (iw < 0 || iw >= w) continue;
            const std::size_t idx = base + static_cast<std::size_t>(ih) * w + iw;
            if (x.data[idx] > best) {
              best = x.data[idx];
              best_idx = static_cast<std::int64_t>(idx);
            }
          }
        }
        y.data[out_idx] = best;
        argmax_[out_idx] = best_idx;
      }
    }
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (std::size_t i = 0; i < grad_out.numel(); ++i) {
    if (argmax_[i] >= 0) dx.data[static_cast<std::size_t>(argmax_[i])] += grad_out.data[i];
  }
  return dx;
}

std::string MaxPool2d::describe() const {
  return "maxpool2d(k=" + std::to_string(kernel_) + ", s=" + std::to_string(stride_) + ")";
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, Mode) {
  in_shape_ = x.shape;
  Tensor y;
  y.shape = {x.dim(0), static_cast<int>(x.numel() / static_cast<std::size_t>(x.dim(0)))};
  y.data = x.data;
  return y;
}

Tensor Flatten::backward(const Tensor& grad_out) {
  Tensor dx;
  dx.shape = in_shape_;
  dx.data = grad_out.data;
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_("gamma", static_cast<std::size_t>(channels)),
      beta_("beta", static_cast<std::size_t>(channels)),
      running_mean_(static_cast<std::size_t>(channels), 0.0f),
      running_var_(static_cast<std::size_t>(channels), 1.0f) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  require_rank(x, 4, "batchnorm2d");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  mode_ = mode;
  shape_ = x.shape;
  xhat_.resize(x.numel());
  inv_std_.assign(static_cast<std::size_t>(c), 0.0f);
  Tensor y(x.shape);
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean = s / count;
      for (int b = 0; b < n; ++b) {
        const float* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s2 += (p[i] - mean) * (p[i] - mean);
      }
      var = s2 / count;
      const double unbiased = count > 1 ? s2 / (count - 1) : var;
      running_mean_[ch] = static_cast<float>((1 - momentum_) * running_mean_[ch] + momentum_ * mean);
      running_var_[ch] = static_cast<float>((1 - momentum_) * running_var_[ch] + momentum_ * unbiased);
    } else {
      mean = running_mean_[ch];
      var = running_var_[ch];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[ch] = inv;
    const float gm = gamma_.value[ch], bt = beta_.value[ch];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (x.data[off + i] - static_cast<float>(mean)) * inv;
        xhat_[off + i] = xh;
        y.data[off + i] = gm * xh + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const int n = shape_[0], c = shape_[1];
  const std::size_t plane = static_cast<std::size_t>(shape_[2]) * shape_[3];
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  Tensor dx(shape_);
  for (int ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out.data[off + i];
        sum_gx += grad_out.data[off + i] * xhat_[off + i];
      }
    }
    if (gamma_.requires_grad) gamma_.grad[ch] += static_cast<float>(sum_gx);
    if (beta_.requires_grad) beta_.grad[ch] += static_cast<float>(sum_g);
    const float scale = gamma_.value[ch] * inv_std_[ch];
    const float mean_g = static_cast<float>(sum_g / count);
    const float mean_gx = static_cast<float>(sum_gx / count);
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode_ == Mode::kTrain) {
          dx.data[off + i] = scale * (grad_out.data[off + i] - mean_g - xhat_[off + i] * mean_gx);
        } else {
          dx.data[off + i] = scale * grad_out.data[off + i];
        }
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<std::vector<float>*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

std::string BatchNorm2d::describe() const {
  return "batchnorm2d(" + std::to_string(channels_) + ")";
}

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "global_avg_pool");
  in_shape_ = x.shape;
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.ptr() + static_cast<std::size_t>(p) * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    y.data[p] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  const float inv = 1.0f / static_cast<float>(plane);
  for (std::size_t p = 0; p < grad_out.numel(); ++p) {
    float* dst = dx.ptr() + p * plane;
    std::fill(dst, dst + plane, grad_out.data[p] * inv);
  }
  return dx;
}

// ---------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& layer : layers_) layer->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<std::vector<float>*>& out) {
  for (auto& layer : layers_) layer->collect_buffers(out);
}

std::string Sequential::describe() const {
  std::string s = "sequential[";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) s += ", ";
    s += layers_[i]->describe();
  }
  return s + "]";
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  collect_parameters(out);
  return out;
}

void Sequential::zero_grad() {
  for (Parameter* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

void Sequential::set_requires_grad(bool on) {
  for (Parameter* p : parameters()) p->requires_grad = on;
}

// ---------------------------------------------------------------- BasicBlock

BasicBlock::BasicBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng) {
  main_.add<Conv2d>(in_channels, out_channels, 3, stride, 1, false, rng);
  main_.add<BatchNorm2d>(out_channels);
  main_.add<ReLU>();
  main_.add<Conv2d>(out_channels, out_channels, 3, 1, 1, false, rng);
  main_.add<BatchNorm2d>(out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.add<Conv2d>(in_channels, out_channels, 1, stride, 0, false, rng);
    shortcut_.add<BatchNorm2d>(out_channels);
  }
}

Tensor BasicBlock::forward(const Tensor& x, Mode mode) {
  Tensor y = main_.forward(x, mode);
  const Tensor skip = shortcut_.size() ? shortcut_.forward(x, mode) : x;
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += skip.data[i];
  return out_relu_.forward(y, mode);
}

Tensor BasicBlock::backward(const Tensor& grad_out) {
  const Tensor g = out_relu_.backward(grad_out);
  Tensor dx = main_.backward(g);
  const Tensor dskip = shortcut_.size() ? shortcut_.backward(g) : g;
  for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += dskip.data[i];
  return dx;
}

void BasicBlock::collect_parameters(std::vector<Parameter*>& out) {
  main_.collect_parameters(out);
  shortcut_.collect_parameters(out);
}

void BasicBlock::collect_buffers(std::vector<std::vector<float>*>& out) {
  main_.collect_buffers(out);
  shortcut_.collect_buffers(out);
}

std::string BasicBlock::describe() const {
  return "basic_block{" + main_.describe() + (shortcut_.size() ? " + " + shortcut_.describe() : "") + "}";
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps,
           double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr_ / bc1);
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float sqrt_bc2 = static_cast<float>(std::sqrt(bc2));
  const float eps = static_cast<float>(eps_);
  const float wd = static_cast<float>(weight_decay_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.requires_grad) {
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float g = p.grad[i] + wd * p.value[i];
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        p.value[i] -= step * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + eps);
      }
    }
    std::fill(p.grad.begin(), p.grad.end(), 0.0f);
  }
}

// ---------------------------------------------------------------- losses / state

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Tensor* grad_logits) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: label count does not match batch");
  }
  if (grad_logits) *grad_logits = Tensor({n, c});
  double total = 0.0;
  std::vector<double> prob(static_cast<std::size_t>(c));
  for (int i = 0; i < n; ++i) {
    const float* z = logits.ptr() + static_cast<std::size_t>(i) * c;
    const double zmax = *std::max_element(z, z + c);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += (prob[j] = std::exp(z[j] - zmax));
    const int y = labels[i];
    if (y < 0 || y >= c) throw std::out_of_range("softmax_cross_entropy: label out of range");
    total += -(z[y] - zmax - std::log(denom));
    if (grad_logits) {
      float* g = grad_logits->ptr() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        g[j] = static_cast<float>((prob[j] / denom - (j == y ? 1.0 : 0.0)) / n);
      }
    }
  }
  return total / n;
}

std::vector<float> pack_state(Layer& net) {
  std::vector<Parameter*> params;
  std::vector<std::vector<float>*> buffers;
  net.collect_parameters(params);
  net.collect_buffers(buffers);
  std::vector<float> blob;
  for (Parameter* p : params) blob.insert(blob.end(), p->value.begin(), p->value.end());
  for (auto* b : buffers) blob.insert(blob.end(), b->begin(), b->end());
  return blob;
}

void unpack_state(Layer& net, std::span<const float> blob) {
  std::vector<Parameter*> params;
  std::vector<std::vector<float>*> buffers;
  net.collect_parameters(params);
  net.collect_buffers(buffers);
  std::size_t expected = 0;
  for (Parameter* p : params) expected += p->value.size();
  for (auto* b : buffers) expected += b->size();
  if (expected != blob.size()) {
    throw std::runtime_error("state blob holds " + std::to_string(blob.size()) +
                             " floats, network expects " + std::to_string(expected));
  }
  std::size_t off = 0;
  for (Parameter* p : params) {
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.begin());
    off += p->value.size();
  }
  for (auto* b : buffers) {
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(off), b->size(), b->begin());
    off += b->size();
  }
}

}  // namespace sfda::nn
