#include <gtest/gtest.h>

#include "sfda/baselines.hpp"
#include "test_support.hpp"

using namespace sfda;
using sfda::testing::band_dataset;

namespace {

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 5;
  cfg.batch_size = 16;
  return cfg;
}

}  // namespace

TEST(LabelBudget, HoldsOutOneFifth) {
  EXPECT_EQ(LabelBudget{5}.train_count(), 4u);
  EXPECT_EQ(LabelBudget{5}.validation_count(), 1u);
  EXPECT_EQ(LabelBudget{100}.validation_count(), 20u);
  EXPECT_EQ(LabelBudget{7000}.train_count(), 5600u);
  EXPECT_EQ(LabelBudget{9}.validation_count(), 1u);
  EXPECT_THROW(LabelBudget{4}.validate(), std::invalid_argument);
}

TEST(Scheme, NamesRoundTrip) {
  for (auto s : {FinetuneScheme::kLastLayer, FinetuneScheme::kFull}) EXPECT_EQ(parse_scheme(scheme_name(s)), s);
  EXPECT_THROW(parse_scheme("partial"), std::invalid_argument);
}

TEST(Finetune, LastLayerLeavesBodyBitIdentical) {
  const Classifier source = build_source_classifier(DatasetId::kMnist, 3);
  const LabeledDataset target = band_dataset(200, 4);
  const FinetuneResult r = finetune(source, target, {100}, FinetuneScheme::kLastLayer, 7, quick_config());
  Classifier before = source;
  Classifier after = r.model;
  const auto p0 = before.net().parameters();
  const auto p1 = after.net().parameters();
  ASSERT_EQ(p0.size(), p1.size());
  for (std::size_t i = 0; i + 2 < p0.size(); ++i) EXPECT_EQ(p0[i]->value, p1[i]->value) << p0[i]->name;
  EXPECT_NE(before.final_layer().weight().value, after.final_layer().weight().value);
  EXPECT_EQ(r.report.train_size, 80u);
  EXPECT_EQ(r.report.val_size, 20u);
}

TEST(Finetune, FullUpdatesEveryLayerAndKeepsSourceUntouched) {
  const Classifier source = build_source_classifier(DatasetId::kMnist, 3);
  Classifier copy = source;
  const std::vector<float> snapshot = copy.state();
  const LabeledDataset target = band_dataset(200, 4);
  const FinetuneResult r = finetune(source, target, {50}, FinetuneScheme::kFull, 7, quick_config());
  Classifier after = r.model;
  Classifier before = source;
  EXPECT_EQ(before.state(), snapshot);
  const auto p0 = before.net().parameters();
  const auto p1 = after.net().parameters();
  for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_NE(p0[i]->value, p1[i]->value) << p0[i]->name;
}

TEST(Finetune, BudgetLargerThanPoolThrows) {
  const Classifier source = build_source_classifier(DatasetId::kMnist);
  EXPECT_THROW(finetune(source, band_dataset(20, 1), {50}, FinetuneScheme::kFull, 1, quick_config()),
               std::invalid_argument);
}

TEST(Finetune, DeterministicForSeed) {
  const Classifier source = build_source_classifier(DatasetId::kMnist, 2);
  const LabeledDataset target = band_dataset(100, 5);
  FinetuneResult a = finetune(source, target, {40}, FinetuneScheme::kLastLayer, 11, quick_config());
  FinetuneResult b = finetune(source, target, {40}, FinetuneScheme::kLastLayer, 11, quick_config());
  EXPECT_EQ(a.model.state(), b.model.state());
}

TEST(Oracle, UsesSourceArchitectureAndFreshDraws) {
  const LabeledDataset train = band_dataset(100, 6);
  const ShiftSpec spec = ShiftSpec::single(Axis::kBrightness, 0.7, 0.05, 9);
  OracleResult r = train_oracle(DatasetId::kMnist, train, spec, quick_config(), 1);
  EXPECT_EQ(r.model.arch(), Arch::kMnistCnn);
  const Classifier source = build_source_classifier(DatasetId::kMnist);
  EXPECT_EQ(r.model.input_shape(), source.input_shape());
  EXPECT_EQ(r.model.num_classes(), source.num_classes());
  EXPECT_NE(oracle_training_spec(spec).seed, spec.seed);
  EXPECT_EQ(oracle_training_spec(spec).stages, spec.stages);
  EXPECT_GT(r.report.best_val_accuracy, 0.5);
}
