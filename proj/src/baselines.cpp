#include "sfda/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "sfda/rng.hpp"

namespace sfda {

void LabelBudget::validate() const {
  if (n < 5) throw std::invalid_argument("label budget must be >= 5, got " + std::to_string(n));
}

std::string scheme_name(FinetuneScheme scheme) {
  return scheme == FinetuneScheme::kLastLayer ? "ft-last" : "ft-full";
}

FinetuneScheme parse_scheme(const std::string& name) {
  if (name == "ft-last" || name == "last-layer") return FinetuneScheme::kLastLayer;
  if (name == "ft-full" || name == "full") return FinetuneScheme::kFull;
  throw std::invalid_argument("unknown fine-tuning scheme '" + name + "'");
}

ShiftSpec oracle_training_spec(const ShiftSpec& spec) {
  ShiftSpec s = spec;
  s.seed = rng::derive(spec.seed, "oracle-train");
  return s;
}

OracleResult train_oracle(DatasetId dataset, const LabeledDataset& source_train, const ShiftSpec& spec,
                          const TrainConfig& cfg, std::uint64_t init_seed) {
  const ShiftSpec train_spec = oracle_training_spec(spec);
  const LabeledDataset shifted = apply_shift(source_train, train_spec);
  Classifier model = build_source_classifier(dataset, init_seed);
  TrainReport report = train_source_classifier(model, shifted, cfg);
  model.metadata()["role"] = "oracle";
  model.metadata()["shift"] = spec.to_json();
  return {std::move(model), std::move(report)};
}

FinetuneResult finetune(const Classifier& source, const LabeledDataset& labeled_target, LabelBudget budget,
                        FinetuneScheme scheme, std::uint64_t seed, TrainConfig cfg) {
  budget.validate();
  if (budget.n > labeled_target.size()) {
    throw std::invalid_argument("label budget " + std::to_string(budget.n) + " exceeds the pool of " +
                                std::to_string(labeled_target.size()) + " labeled examples");
  }
  std::vector<std::size_t> order(labeled_target.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto gen = rng::stream(seed, "label-budget");
  std::shuffle(order.begin(), order.end(), gen);
  const std::span<const std::size_t> picked(order.data(), budget.n);
  const LabeledDataset val = labeled_target.subset(picked.first(budget.validation_count()), "ft/val");
  const LabeledDataset train = labeled_target.subset(picked.subspan(budget.validation_count()), "ft/train");

  Classifier model = source;
  model.net().set_requires_grad(scheme == FinetuneScheme::kFull);
  if (scheme == FinetuneScheme::kLastLayer) {
    model.final_layer().weight().requires_grad = true;
    model.final_layer().bias().requires_grad = true;
  }
  cfg.seed = rng::derive(seed, "finetune");
  cfg.augment = false;
  cfg.eval_mode_forward = scheme == FinetuneScheme::kLastLayer;
  TrainReport report = fit_classifier(model, train, val, cfg);
  model.net().set_requires_grad(true);
  model.metadata()["role"] = "finetune";
  model.metadata()["scheme"] = scheme_name(scheme);
  model.metadata()["n_labels"] = budget.n;
  model.metadata()["finetune_seed"] = seed;
  return {std::move(model), std::move(report)};
}

}  // namespace sfda
