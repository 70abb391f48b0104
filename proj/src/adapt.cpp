#include "sfda/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sfda/rng.hpp"

namespace sfda {

using nlohmann::json;

void AdaptConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("adapt: temperature must be > 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adapt: learning rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("adapt: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("adapt: batch size must be >= 1");
}

json AdaptConfig::to_json() const {
  return {{"temperature", temperature}, {"learning_rate", learning_rate}, {"epochs", epochs},
          {"batch_size", batch_size},   {"seed", seed},                   {"optimizer", "adam"}};
}

AdaptConfig AdaptConfig::from_json(const json& j) {
  AdaptConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

// Disables weight-gradient accumulation on phi for the lifetime of the scope.
class NoWeightGrad {
 public:
  explicit NoWeightGrad(Classifier& phi) : params_(phi.net().parameters()) {
    for (auto* p : params_) {
      saved_.push_back(p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~NoWeightGrad() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = saved_[i];
  }
  NoWeightGrad(const NoWeightGrad&) = delete;
  NoWeightGrad& operator=(const NoWeightGrad&) = delete;

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<bool> saved_;
};

std::span<const float> row(const nn::Tensor& t, std::size_t i) {
  const auto c = static_cast<std::size_t>(t.dim(1));
  return {t.ptr() + i * c, c};
}

// d MSP(z / s) / dz for one logit row, written into `out`.
double msp_and_gradient(std::span<const float> z, double s, float* out, double scale) {
  const auto p = softmax(z, s);
  const auto k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  for (std::size_t j = 0; j < p.size(); ++j) {
    out[j] = static_cast<float>(scale * p[k] * ((j == k ? 1.0 : 0.0) - p[j]) / s);
  }
  return p[k];
}

}  // namespace

double msp_gap_loss(const TransformParams& p_hat, const Image& x, Classifier& phi, double temperature) {
  phi.check_input(x);
  const Image y = apply_backward_transform(x, p_hat);
  // Separate single-image passes keep both terms on one arithmetic path.
  const double transformed = msp(row(phi.logits(std::span<const Image>(&y, 1)), 0), temperature);
  const double base = msp(row(phi.logits(std::span<const Image>(&x, 1)), 0), temperature);
  return -(transformed - base);
}

LossAndGradient msp_gap_loss_and_gradient(const TransformParams& p_hat, const Image& x, Classifier& phi,
                                          double temperature) {
  phi.check_input(x);
  NoWeightGrad guard(phi);
  const double base = msp(row(phi.logits(std::span<const Image>(&x, 1)), 0), temperature);
  BackwardTransform<float> g;
  const Image y = g.forward(x, p_hat);
  const nn::Tensor z = phi.logits(std::span<const Image>(&y, 1));
  nn::Tensor dz({1, phi.num_classes()});
  const double transformed = msp_and_gradient(row(z, 0), temperature, dz.ptr(), -1.0);
  const nn::Tensor dy = phi.input_gradient(dz);
  LossAndGradient out;
  out.loss = -(transformed - base);
  out.gradient = g.param_gradient(image_from_batch(dy, 0));
  return out;
}

AdaptResult train_transform_net(TransformNet net, std::span<const Image> target_images, Classifier& phi,
                                const AdaptConfig& cfg) {
  cfg.validate();
  if (target_images.empty()) throw std::invalid_argument("train_transform_net: empty target set");
  for (const Image& img : target_images) phi.check_input(img);
  const InputShape& ts = net.input_shape();
  if (ts != phi.input_shape()) throw std::invalid_argument("transform net and classifier disagree on input shape");

  NoWeightGrad guard(phi);
  const std::size_t n = target_images.size();
  const double s = cfg.temperature;

  std::vector<double> base_msp(n);
  for (std::size_t start = 0; start < n; start += 256) {
    const std::size_t len = std::min<std::size_t>(256, n - start);
    const nn::Tensor z = phi.logits(target_images.subspan(start, len));
    for (std::size_t i = 0; i < len; ++i) base_msp[start + i] = msp(row(z, i), s);
  }

  AdaptResult result{std::move(net), {}};
  TransformNet& tnet = result.net;
  nn::Adam adam(tnet.net().parameters(), cfg.learning_rate);
  tnet.net().zero_grad();
  const ParamSpace& space = tnet.space();
  std::vector<std::size_t> order(n);
  std::vector<Image> batch, transformed;
  std::vector<BackwardTransform<float>> tapes;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto gen = rng::stream(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), gen);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min(n - start, static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t k = 0; k < len; ++k) batch.push_back(target_images[order[start + k]]);
      const nn::Tensor raw = tnet.raw_outputs(to_batch(batch), nn::Mode::kTrain);

      transformed.clear();
      tapes.assign(len, {});
      std::vector<std::array<bool, 3>> inside(len);
      for (std::size_t k = 0; k < len; ++k) {
        const std::array<double, 3> r = tnet.unclamped_params(std::span<const float>(raw.data).subspan(3 * k, 3));
        const TransformParams p = clamp_params(r, space);
        for (std::size_t a = 0; a < 3; ++a) {
          const auto& b = space.bounds(kAllAxes[a]);
          inside[k][a] = r[a] >= b.low && r[a] <= b.high;
        }
        transformed.push_back(tapes[k].forward(batch[k], p));
      }

      const nn::Tensor z = phi.logits(to_batch(transformed));
      nn::Tensor dz({static_cast<int>(len), phi.num_classes()});
      const double scale = -1.0 / static_cast<double>(len);
      for (std::size_t k = 0; k < len; ++k) {
        const double m = msp_and_gradient(row(z, k), s, dz.ptr() + k * static_cast<std::size_t>(phi.num_classes()), scale);
        loss_sum += -(m - base_msp[order[start + k]]);
      }
      const nn::Tensor dy = phi.input_gradient(dz);

      nn::Tensor draw({static_cast<int>(len), 3});
      for (std::size_t k = 0; k < len; ++k) {
        const auto g = tapes[k].param_gradient(image_from_batch(dy, static_cast<int>(k))).to_array();
        for (std::size_t a = 0; a < 3; ++a) {
          draw.data[3 * k + a] = inside[k][a] ? static_cast<float>(g[a] * tnet.output_scale()[a]) : 0.0f;
        }
      }
      tnet.backward(draw);
      adam.step();
    }
    result.loss_history.push_back(loss_sum / static_cast<double>(n));
    if (cfg.log) {
      std::ostringstream os;
      os << "adapt epoch " << epoch << " mean loss " << result.loss_history.back();
      cfg.log(os.str());
    }
  }
  tnet.metadata()["adapt"] = cfg.to_json();
  tnet.metadata()["adapt_images"] = n;
  return result;
}

ClassifiedImages transform_and_classify(TransformNet& net, std::span<const Image> images, Classifier& phi,
                                        int batch_size) {
  ClassifiedImages out;
  if (images.empty()) return out;
  for (const Image& img : images) phi.check_input(img);
  out.params = net.predict(images, batch_size);
  out.predictions.reserve(images.size());
  std::vector<Image> transformed;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), images.size() - start);
    transformed.clear();
    for (std::size_t k = 0; k < len; ++k) {
      transformed.push_back(apply_backward_transform(images[start + k], out.params[start + k], net.space()));
    }
    const nn::Tensor z = phi.logits(transformed);
    for (std::size_t k = 0; k < len; ++k) out.predictions.push_back(argmax(row(z, k)));
  }
  return out;
}

GridSearchResult grid_search_msp_oracle(const Image& x, Classifier& phi, Axis axis, int resolution,
                                        double temperature, double low, double high) {
  if (resolution < 1) throw std::invalid_argument("grid search: resolution must be >= 1");
  if (!(low <= high)) throw std::invalid_argument("grid search: low must not exceed high");
  phi.check_input(x);
  const double identity = forward_domain(axis).identity;
  GridSearchResult r;
  if (resolution == 1) {
    r.grid = {identity};
  } else {
    for (int k = 0; k < resolution; ++k) {
      r.grid.push_back(k == resolution - 1 ? high : low + (high - low) * k / (resolution - 1));
    }
    if (identity >= low && identity <= high && std::ranges::find(r.grid, identity) == r.grid.end()) {
      r.grid.insert(std::ranges::upper_bound(r.grid, identity), identity);
    }
  }
  std::vector<Image> candidates;
  candidates.reserve(r.grid.size());
  for (double v : r.grid) {
    TransformParams p;
    p[axis] = v;
    candidates.push_back(apply_rotation(apply_brightness(apply_contrast(x, p.contrast), p.brightness), p.rotation_deg));
  }
  r.best_msp = -1.0;
  for (std::size_t start = 0; start < candidates.size(); start += 256) {
    const std::size_t len = std::min<std::size_t>(256, candidates.size() - start);
    const nn::Tensor z = phi.logits(std::span<const Image>(candidates).subspan(start, len));
    for (std::size_t k = 0; k < len; ++k) {
      const double m = msp(row(z, k), temperature);
      r.msps.push_back(m);
      if (m > r.best_msp) {
        r.best_msp = m;
        r.best_param = r.grid[start + k];
      }
    }
  }
  return r;
}

GridSearchResult grid_search_msp_oracle(const Image& x, Classifier& phi, Axis axis, int resolution,
                                        double temperature, const ParamSpace& space) {
  const auto& b = space.bounds(axis);
  return grid_search_msp_oracle(x, phi, axis, resolution, temperature, b.low, b.high);
}

}  // namespace sfda
