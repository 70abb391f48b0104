#pragma once

// Evaluation protocol: each target domain is split 70/30 into an adaptation
// pool and an evaluation pool; methods are scored on k seeded subsamples of
// the evaluation pool, one ResultRecord per subsample.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfda/adapt.hpp"
#include "sfda/baselines.hpp"
#include "sfda/models.hpp"
#include "sfda/shiftgen.hpp"

namespace sfda {

// ------------------------------------------------------------------ records

struct ResultRecord {
  std::string experiment_id;
  std::string dataset;
  std::string axes;
  std::optional<double> mu_1, sigma_1, mu_2, sigma_2;
  std::string method;
  std::size_t n_labels = 0;
  int subsample_idx = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;

  friend bool operator==(const ResultRecord&, const ResultRecord&) = default;
};

// experiment_id,dataset,axes,mu_1,sigma_1,mu_2,sigma_2,method,n_labels,subsample_idx,seed,accuracy
std::string results_csv_header();
std::string to_csv_row(const ResultRecord& r);
ResultRecord parse_csv_row(const std::string& line);
void write_results_csv(const std::filesystem::path& path, std::span<const ResultRecord> records);
std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path);

// Append-only CSV sink; each record is written and flushed under a lock.
class RecordSink {
 public:
  explicit RecordSink(std::filesystem::path path);
  void append(std::span<const ResultRecord> records);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

// ------------------------------------------------------------------ protocol

struct TargetSplit {
  LabeledDataset adapt_pool;
  LabeledDataset eval_pool;
  std::vector<std::size_t> adapt_indices, eval_indices;

  // The adaptation pool without labels: the only view the adapter receives.
  std::vector<Image> adapt_images() const { return adapt_pool.images; }
};

TargetSplit split_target(const LabeledDataset& dataset, std::uint64_t seed, double eval_fraction = 0.3);

struct SubsampleSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over subsamples
  std::vector<double> accuracies;
};

SubsampleSummary evaluate_with_subsampling(std::span<const int> predictions, std::span<const int> labels, int k,
                                           double fraction, std::uint64_t seed);

// ------------------------------------------------------------------ sweeps

enum class SweepKind { kSeverity, kRange, kFinetune, kMultiAxis };
enum class Method { kSource, kAdapted, kOracle, kFtLast, kFtFull };

std::string sweep_kind_name(SweepKind kind);
SweepKind parse_sweep_kind(const std::string& name);
std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  std::string experiment_id = "sweep";
  DatasetId dataset = DatasetId::kMnist;
  SweepKind kind = SweepKind::kSeverity;
  // Single-axis sweeps use axes[0]. Multi-axis sweeps list the outermost
  // transform first: {brightness, contrast} means B(C(D)).
  std::vector<Axis> axes = {Axis::kRotation};
  std::vector<double> mu_grid;
  std::vector<double> sigma_grid;
  double anchor_mu = 0.5;           // multi-axis: mean of the axis held fixed
  std::vector<std::size_t> n_grid;  // fine-tuning label budgets
  std::vector<Method> methods = {Method::kSource, Method::kAdapted, Method::kOracle};
  double eval_fraction = 0.3;
  int subsamples = 10;
  double subsample_fraction = 0.8;
  std::vector<std::uint64_t> seeds = {0};
  bool adapt_on_full_target = false;
  AdaptConfig adapt;
  TrainConfig train;
  std::size_t train_limit = 0;   // 0 = full training set (oracles)
  std::size_t target_limit = 0;  // 0 = full test set (target domains)

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string hash() const;

  static ExperimentConfig defaults(DatasetId dataset, SweepKind kind, Axis axis);
};

struct GridPoint {
  std::string experiment_id;
  std::vector<ShiftStage> stages;  // application order
  ResultRecord columns() const;    // axis / mu / sigma columns filled
  std::string label() const;
};

std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg);

// Number of records a sweep over a target set of `target_size` images must
// produce (label budgets are clipped to the adaptation pool).
std::size_t expected_record_count(const ExperimentConfig& cfg, std::size_t target_size);

struct SweepResources {
  Classifier source;
  LabeledDataset source_train;  // needed for oracles
  LabeledDataset target_base;   // clean test set the target domains derive from
  // Directory for trained oracle / transform-net checkpoints; empty disables
  // on-disk caching.
  std::filesystem::path cache_dir;
  int jobs = 1;
  RecordSink* sink = nullptr;
  std::function<void(const std::string&)> log;
};

std::vector<ResultRecord> run_sweep(const ExperimentConfig& cfg, SweepResources& res);
std::vector<ResultRecord> run_severity_sweep(const ExperimentConfig& cfg, SweepResources& res);
std::vector<ResultRecord> run_range_sweep(const ExperimentConfig& cfg, SweepResources& res);
std::vector<ResultRecord> run_finetune_comparison(const ExperimentConfig& cfg, SweepResources& res);
std::vector<ResultRecord> run_multiaxis_sweep(const ExperimentConfig& cfg, SweepResources& res);

// Short digest of a classifier's weights, used in cache keys.
std::string model_fingerprint(Classifier& model);

// Mean accuracy over all records matching the filter.
double mean_accuracy(std::span<const ResultRecord> records,
                     const std::function<bool(const ResultRecord&)>& filter);

}  // namespace sfda
