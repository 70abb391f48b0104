#pragma once

#include <cstdint>
#include <string>

#include "sfda/models.hpp"
#include "sfda/shiftgen.hpp"

namespace sfda {

// n labeled target examples; one-fifth (rounded down) are held out for
// validation.
struct LabelBudget {
  std::size_t n = 0;

  std::size_t validation_count() const { return n / 5; }
  std::size_t train_count() const { return n - validation_count(); }
  void validate() const;
};

enum class FinetuneScheme { kLastLayer, kFull };

std::string scheme_name(FinetuneScheme scheme);
FinetuneScheme parse_scheme(const std::string& name);

struct OracleResult {
  Classifier model;
  TrainReport report;
};

// Shifts the source training set with fresh parameter draws (the spec's seed
// re-derived for the training split) and trains a classifier of the source
// architecture on it with the source recipe.
OracleResult train_oracle(DatasetId dataset, const LabeledDataset& source_train, const ShiftSpec& spec,
                          const TrainConfig& cfg, std::uint64_t init_seed = 0);

ShiftSpec oracle_training_spec(const ShiftSpec& spec);

struct FinetuneResult {
  Classifier model;
  TrainReport report;
};

// Draws budget.n examples (seeded, without replacement) from labeled_target,
// holds out one-fifth for validation and trains either the final linear
// layer alone or the whole network, starting from the source weights.
FinetuneResult finetune(const Classifier& source, const LabeledDataset& labeled_target, LabelBudget budget,
                        FinetuneScheme scheme, std::uint64_t seed, TrainConfig cfg);

}  // namespace sfda
