#pragma once

// Source-free adaptation: a transformation network predicts per-image
// backward-transform parameters and is trained to raise the frozen source
// classifier's temperature-scaled maximum softmax probability (MSP) on the
// transformed image relative to the untouched image.
//
//   loss(p; x) = -( MSP(phi(g_p(x)) / s) - MSP(phi(x) / s) )
//
// The second term does not depend on p; it makes the loss exactly zero at
// the identity transform.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfda/models.hpp"
#include "sfda/transforms.hpp"

namespace sfda {

struct AdaptConfig {
  double temperature = 10.0;
  double learning_rate = 5e-5;
  int epochs = 30;
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> log;

  void validate() const;
  nlohmann::json to_json() const;
  static AdaptConfig from_json(const nlohmann::json& j);
};

double msp_gap_loss(const TransformParams& p_hat, const Image& x, Classifier& phi, double temperature);

struct LossAndGradient {
  double loss = 0.0;
  // d(loss)/d(rotation, brightness, contrast)
  TransformParams gradient{0.0, 0.0, 0.0};
};

// Loss and its analytic parameter gradient, backpropagated through the
// frozen classifier and the backward transform.
LossAndGradient msp_gap_loss_and_gradient(const TransformParams& p_hat, const Image& x, Classifier& phi,
                                          double temperature);

struct AdaptResult {
  TransformNet net;
  std::vector<double> loss_history;  // mean loss per epoch
};

// Trains `net` on unlabeled target images. phi is run in inference mode and
// its weights are never modified.
AdaptResult train_transform_net(TransformNet net, std::span<const Image> target_images, Classifier& phi,
                                const AdaptConfig& cfg);

struct ClassifiedImages {
  std::vector<int> predictions;
  std::vector<TransformParams> params;
};

ClassifiedImages transform_and_classify(TransformNet& net, std::span<const Image> images, Classifier& phi,
                                        int batch_size = 256);

struct GridSearchResult {
  double best_param = 0.0;
  double best_msp = 0.0;
  std::vector<double> grid;
  std::vector<double> msps;
};

// Uniform grid of `resolution` points over [low, high] on one axis, with the
// axis identity always included; the other axes stay at identity. A
// resolution of 1 evaluates the identity alone. Ties resolve to the smallest
// parameter.
GridSearchResult grid_search_msp_oracle(const Image& x, Classifier& phi, Axis axis, int resolution,
                                        double temperature, double low, double high);
GridSearchResult grid_search_msp_oracle(const Image& x, Classifier& phi, Axis axis, int resolution,
                                        double temperature, const ParamSpace& space = ParamSpace::standard());

}  // namespace sfda
