// sfda: command-line front end for training, shift generation, adaptation,
// baselines, evaluation and experiment sweeps.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfda/adapt.hpp"
#include "sfda/baselines.hpp"
#include "sfda/dataset.hpp"
#include "sfda/experiments.hpp"
#include "sfda/io.hpp"
#include "sfda/models.hpp"
#include "sfda/plots.hpp"
#include "sfda/rng.hpp"
#include "sfda/shiftgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sfda;

namespace {

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

struct CommonOptions {
  std::string data_root;
  fs::path root() const {
    return resolve_data_root(data_root.empty() ? std::nullopt : std::optional<fs::path>(data_root));
  }
};

struct ShiftOptions {
  std::vector<std::string> axes;
  std::vector<double> mus;
  std::vector<double> sigmas;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd, bool required) {
    auto* a = cmd->add_option("--axis", axes, "Shift axis (rotation|brightness|contrast); repeat for composition, "
                                              "applied in the order given");
    if (required) a->required();
    cmd->add_option("--mu", mus, "Mean of the per-image parameter, one per --axis");
    cmd->add_option("--sigma", sigmas, "Standard deviation, one per --axis");
    cmd->add_option("--shift-seed", seed, "Seed for parameter draws");
  }

  ShiftSpec spec() const {
    if (mus.size() != axes.size() || sigmas.size() != axes.size()) {
      throw std::invalid_argument("each --axis needs exactly one --mu and one --sigma");
    }
    ShiftSpec s;
    s.seed = seed;
    for (std::size_t i = 0; i < axes.size(); ++i) s.stages.push_back({parse_axis(axes[i]), mus[i], sigmas[i]});
    for (const auto& w : s.validate()) log_line("warning: " + w);
    return s;
  }
};

void write_run_config(const fs::path& out, const std::string& command, json params) {
  fs::create_directories(out);
  params["command"] = command;
  io::write_json(out / "config.json", params);
}

// Target images come either from a directory written by make-shift or from
// an on-the-fly shift of the clean test split.
struct TargetOptions {
  std::string dir;
  std::string dataset = "mnist";
  std::size_t limit = 0;
  ShiftOptions shift;

  void add(CLI::App* cmd) {
    cmd->add_option("--target", dir, "Shifted dataset directory written by make-shift");
    cmd->add_option("--dataset", dataset, "Dataset for on-the-fly targets (mnist|cifar10)");
    cmd->add_option("--limit", limit, "Use only the first N test images for on-the-fly targets");
    shift.add(cmd, false);
  }

  LabeledDataset load(const CommonOptions& common, json& record) const {
    if (!dir.empty()) {
      record["target"] = dir;
      return read_shifted_dataset(dir).dataset;
    }
    if (shift.axes.empty()) throw std::invalid_argument("give --target or at least one --axis");
    const ShiftSpec spec = shift.spec();
    record["target_shift"] = spec.to_json();
    record["dataset"] = dataset;
    return apply_shift(load_dataset(parse_dataset_id(dataset), common.root(), Split::kTest, limit), spec);
  }
};

std::string rstrip_zeros(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

json summary_json(const SubsampleSummary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"accuracies", s.accuracies}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free domain adaptation with learned input transformations"};
  app.require_subcommand(1);
  CommonOptions common;
  app.add_option("--data-root", common.data_root, "Dataset cache directory (default: $SFDA_DATA_ROOT or ~/.cache/sfda)");

  // ---------------------------------------------------------------- train-source
  auto* train = app.add_subcommand("train-source", "Train the source classifier");
  std::string ts_dataset = "mnist", ts_out;
  std::uint64_t ts_seed = 0;
  std::size_t ts_limit = 0;
  int ts_epochs = 50;
  train->add_option("--dataset", ts_dataset, "mnist|cifar10");
  train->add_option("--out", ts_out, "Checkpoint directory")->required();
  train->add_option("--seed", ts_seed, "Initialization and shuffling seed");
  train->add_option("--limit", ts_limit, "Use only the first N training images");
  train->add_option("--max-epochs", ts_epochs, "Early-stopping cap");
  train->callback([&] {
    const DatasetId id = parse_dataset_id(ts_dataset);
    TrainConfig cfg = TrainConfig::for_dataset(id, ts_seed);
    cfg.max_epochs = ts_epochs;
    cfg.log = log_line;
    json record = {{"dataset", ts_dataset}, {"seed", ts_seed}, {"limit", ts_limit}, {"train", cfg.to_json()}};
    write_run_config(ts_out, "train-source", record);
    const LabeledDataset data = load_dataset(id, common.root(), Split::kTrain, ts_limit);
    Classifier model = build_source_classifier(id, ts_seed);
    const TrainReport report = train_source_classifier(model, data, cfg);
    model.save(ts_out);
    io::write_json(fs::path(ts_out) / "training_report.json", report.to_json());
    std::cout << "best validation accuracy " << report.best_val_accuracy << " at epoch " << report.best_epoch
              << '\n';
  });

  // ---------------------------------------------------------------- make-shift
  auto* make_shift = app.add_subcommand("make-shift", "Generate a shifted target domain");
  std::string ms_dataset = "mnist", ms_split = "test", ms_out;
  std::size_t ms_limit = 0;
  ShiftOptions ms_shift;
  make_shift->add_option("--dataset", ms_dataset, "mnist|cifar10");
  make_shift->add_option("--split", ms_split, "train|test");
  make_shift->add_option("--limit", ms_limit, "Use only the first N images");
  make_shift->add_option("--out", ms_out, "Output directory")->required();
  ms_shift.add(make_shift, true);
  make_shift->add_option("--seed", ms_shift.seed, "Alias of --shift-seed");
  make_shift->callback([&] {
    const ShiftSpec spec = ms_shift.spec();
    const Split split = ms_split == "train" ? Split::kTrain
                        : ms_split == "test"
                            ? Split::kTest
                            : throw std::invalid_argument("--split must be train or test");
    const LabeledDataset base = load_dataset(parse_dataset_id(ms_dataset), common.root(), split, ms_limit);
    const ShiftManifest m = write_shifted_dataset(base, spec, ms_out);
    write_run_config(ms_out, "make-shift",
                     {{"dataset", ms_dataset}, {"split", ms_split}, {"limit", ms_limit}, {"shift", spec.to_json()}});
    std::cout << "wrote " << m.count << " images (" << spec.label() << ") to " << ms_out << '\n';
  });

  // ---------------------------------------------------------------- adapt
  auto* adapt = app.add_subcommand("adapt", "Train a transformation network on unlabeled target images");
  std::string ad_source, ad_out;
  TargetOptions ad_target;
  AdaptConfig ad_cfg;
  bool ad_full = false;
  std::uint64_t ad_split_seed = 0;
  adapt->add_option("--source-model", ad_source, "Source classifier checkpoint")->required();
  adapt->add_option("--out", ad_out, "Output directory")->required();
  ad_target.add(adapt);
  adapt->add_option("--epochs", ad_cfg.epochs);
  adapt->add_option("--lr", ad_cfg.learning_rate);
  adapt->add_option("--batch-size", ad_cfg.batch_size);
  adapt->add_option("--temperature", ad_cfg.temperature);
  adapt->add_option("--seed", ad_cfg.seed);
  adapt->add_option("--split-seed", ad_split_seed, "Seed of the 70/30 adaptation/evaluation split");
  adapt->add_flag("--use-full-target", ad_full, "Adapt on every target image instead of the 70% pool");
  adapt->callback([&] {
    ad_cfg.validate();
    ad_cfg.log = log_line;
    json record = {{"source_model", ad_source}, {"adapt", ad_cfg.to_json()}, {"use_full_target", ad_full},
                   {"split_seed", ad_split_seed}};
    const LabeledDataset target = ad_target.load(common, record);
    write_run_config(ad_out, "adapt", record);
    Classifier phi = Classifier::load(ad_source);
    const TargetSplit split = split_target(target, ad_split_seed);
    const auto& images = ad_full ? target.images : split.adapt_pool.images;
    const DatasetId id = phi.arch() == Arch::kMnistCnn ? DatasetId::kMnist : DatasetId::kCifar10;
    AdaptResult result =
        train_transform_net(build_transform_net(id, ParamSpace::standard(), ad_cfg.seed), images, phi, ad_cfg);
    result.net.metadata()["loss_history"] = result.loss_history;
    result.net.save(ad_out);
    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
      csv += std::to_string(e + 1) + "," + rstrip_zeros(result.loss_history[e]) + "\n";
    }
    io::write_text_atomic(fs::path(ad_out) / "loss_history.csv", csv);
    const auto eval = transform_and_classify(result.net, split.eval_pool.images, phi);
    const auto before = phi.predict(split.eval_pool.images);
    auto acc = [&](const std::vector<int>& p) {
      std::size_t c = 0;
      for (std::size_t i = 0; i < p.size(); ++i) c += p[i] == split.eval_pool.labels[i];
      return static_cast<double>(c) / static_cast<double>(p.size());
    };
    std::cout << "eval-pool accuracy: source " << acc(before) << ", adapted " << acc(eval.predictions) << '\n';
  });

  // ---------------------------------------------------------------- baseline
  auto* baseline = app.add_subcommand("baseline", "Train a supervised reference model");
  baseline->require_subcommand(1);
  auto* oracle = baseline->add_subcommand("oracle", "Train on a shifted copy of the source training set");
  std::string or_dataset = "mnist", or_out;
  ShiftOptions or_shift;
  std::size_t or_limit = 0;
  std::uint64_t or_seed = 0;
  oracle->add_option("--dataset", or_dataset);
  oracle->add_option("--out", or_out)->required();
  oracle->add_option("--limit", or_limit, "Use only the first N training images");
  oracle->add_option("--seed", or_seed, "Initialization and shuffling seed");
  or_shift.add(oracle, true);
  oracle->callback([&] {
    const DatasetId id = parse_dataset_id(or_dataset);
    const ShiftSpec spec = or_shift.spec();
    TrainConfig cfg = TrainConfig::for_dataset(id, or_seed);
    cfg.log = log_line;
    write_run_config(or_out, "baseline oracle",
                     {{"dataset", or_dataset}, {"shift", spec.to_json()}, {"train", cfg.to_json()}, {"limit", or_limit}});
    const LabeledDataset train_set = load_dataset(id, common.root(), Split::kTrain, or_limit);
    OracleResult r = train_oracle(id, train_set, spec, cfg, or_seed);
    r.model.save(or_out);
    io::write_json(fs::path(or_out) / "training_report.json", r.report.to_json());
    std::cout << "oracle validation accuracy " << r.report.best_val_accuracy << '\n';
  });

  std::string ft_source, ft_out;
  TargetOptions ft_target;
  std::size_t ft_n = 0;
  std::uint64_t ft_seed = 0, ft_split_seed = 0;
  auto add_ft = [&](const char* name, FinetuneScheme scheme) {
    auto* cmd = baseline->add_subcommand(name, scheme == FinetuneScheme::kLastLayer
                                                   ? "Fine-tune the final linear layer on labeled target data"
                                                   : "Fine-tune every layer on labeled target data");
    cmd->add_option("--source-model", ft_source)->required();
    cmd->add_option("--out", ft_out)->required();
    cmd->add_option("--n", ft_n, "Label budget")->required();
    cmd->add_option("--seed", ft_seed);
    cmd->add_option("--split-seed", ft_split_seed, "Seed of the 70/30 adaptation/evaluation split");
    ft_target.add(cmd);
    cmd->callback([&, scheme] {
      json record = {{"source_model", ft_source}, {"n", ft_n}, {"seed", ft_seed}, {"split_seed", ft_split_seed},
                     {"scheme", scheme_name(scheme)}};
      const LabeledDataset target = ft_target.load(common, record);
      write_run_config(ft_out, "baseline " + scheme_name(scheme), record);
      const Classifier source = Classifier::load(ft_source);
      const TargetSplit split = split_target(target, ft_split_seed);
      TrainConfig cfg;
      cfg.log = log_line;
      FinetuneResult r = finetune(source, split.adapt_pool, LabelBudget{ft_n}, scheme, ft_seed, cfg);
      r.model.save(ft_out);
      io::write_json(fs::path(ft_out) / "training_report.json", r.report.to_json());
      std::cout << "eval-pool accuracy " << r.model.accuracy(split.eval_pool) << '\n';
    });
  };
  add_ft("ft-last", FinetuneScheme::kLastLayer);
  add_ft("ft-full", FinetuneScheme::kFull);

  // ---------------------------------------------------------------- eval
  auto* eval = app.add_subcommand("eval", "Score a classifier (optionally behind a transform net) on a target");
  std::string ev_model, ev_tnet, ev_out;
  TargetOptions ev_target;
  bool ev_eval_pool = false;
  std::uint64_t ev_split_seed = 0, ev_sub_seed = 0;
  int ev_k = 10;
  double ev_frac = 0.8;
  eval->add_option("--model", ev_model, "Classifier checkpoint")->required();
  eval->add_option("--tnet", ev_tnet, "Transform-net checkpoint applied before the classifier");
  eval->add_option("--out", ev_out, "Directory for metrics.json");
  eval->add_flag("--eval-pool", ev_eval_pool, "Score only the 30% evaluation pool");
  eval->add_option("--split-seed", ev_split_seed);
  eval->add_option("--subsamples", ev_k);
  eval->add_option("--subsample-fraction", ev_frac);
  eval->add_option("--subsample-seed", ev_sub_seed);
  ev_target.add(eval);
  eval->callback([&] {
    json record = {{"model", ev_model}, {"tnet", ev_tnet}, {"eval_pool", ev_eval_pool}, {"split_seed", ev_split_seed},
                   {"subsamples", ev_k}, {"subsample_fraction", ev_frac}, {"subsample_seed", ev_sub_seed}};
    LabeledDataset target = ev_target.load(common, record);
    if (ev_eval_pool) target = split_target(target, ev_split_seed).eval_pool;
    Classifier model = Classifier::load(ev_model);
    std::vector<int> preds;
    if (ev_tnet.empty()) {
      preds = model.predict(target.images);
    } else {
      TransformNet net = TransformNet::load(ev_tnet);
      preds = transform_and_classify(net, target.images, model).predictions;
    }
    const SubsampleSummary s = evaluate_with_subsampling(preds, target.labels, ev_k, ev_frac, ev_sub_seed);
    if (!ev_out.empty()) {
      write_run_config(ev_out, "eval", record);
      io::write_json(fs::path(ev_out) / "metrics.json", summary_json(s));
    }
    std::cout << "accuracy " << s.mean << " +/- " << s.std << " (" << ev_k << " subsamples)\n";
  });

  // ---------------------------------------------------------------- sweep
  auto* sweep = app.add_subcommand("sweep", "Run an experiment sweep and write results.csv and plots");
  std::string sw_kind, sw_config, sw_dataset = "mnist", sw_axis, sw_source, sw_out, sw_cache;
  std::vector<double> sw_mu, sw_sigma;
  std::vector<std::size_t> sw_n;
  std::vector<std::string> sw_methods;
  std::vector<std::uint64_t> sw_seeds;
  std::optional<std::size_t> sw_train_limit, sw_target_limit;
  std::optional<int> sw_adapt_epochs, sw_subsamples;
  int sw_jobs = 1;
  sweep->add_option("kind", sw_kind, "severity|range|finetune|multiaxis")->required();
  sweep->add_option("--config", sw_config, "JSON experiment config (flags override it)");
  sweep->add_option("--dataset", sw_dataset);
  sweep->add_option("--axis", sw_axis, "Shift axis for single-axis sweeps");
  sweep->add_option("--source-model", sw_source, "Source checkpoint (trained on demand when absent)");
  sweep->add_option("--out", sw_out, "Output directory")->required();
  sweep->add_option("--cache-dir", sw_cache, "Directory for cached oracle / adapted checkpoints");
  sweep->add_option("--mu-grid", sw_mu);
  sweep->add_option("--sigma-grid", sw_sigma);
  sweep->add_option("--n-grid", sw_n);
  sweep->add_option("--methods", sw_methods);
  sweep->add_option("--seeds", sw_seeds);
  sweep->add_option("--train-limit", sw_train_limit);
  sweep->add_option("--target-limit", sw_target_limit);
  sweep->add_option("--adapt-epochs", sw_adapt_epochs);
  sweep->add_option("--subsamples", sw_subsamples);
  sweep->add_option("--jobs", sw_jobs, "Grid points evaluated in parallel");
  sweep->callback([&] {
    const SweepKind kind = parse_sweep_kind(sw_kind);
    ExperimentConfig cfg;
    if (!sw_config.empty()) {
      json j = io::read_json(sw_config);
      j["kind"] = sw_kind;
      if (!j.contains("dataset")) j["dataset"] = sw_dataset;
      cfg = ExperimentConfig::from_json(j);
    } else {
      const DatasetId id = parse_dataset_id(sw_dataset);
      const Axis axis = !sw_axis.empty() ? parse_axis(sw_axis)
                        : id == DatasetId::kMnist ? Axis::kRotation
                                                  : Axis::kBrightness;
      cfg = ExperimentConfig::defaults(id, kind, axis);
    }
    if (!sw_mu.empty()) cfg.mu_grid = sw_mu;
    if (!sw_sigma.empty()) cfg.sigma_grid = sw_sigma;
    if (!sw_n.empty()) cfg.n_grid = sw_n;
    if (!sw_methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : sw_methods) cfg.methods.push_back(parse_method(m));
    }
    if (!sw_seeds.empty()) cfg.seeds = sw_seeds;
    if (sw_train_limit) cfg.train_limit = *sw_train_limit;
    if (sw_target_limit) cfg.target_limit = *sw_target_limit;
    if (sw_adapt_epochs) cfg.adapt.epochs = *sw_adapt_epochs;
    if (sw_subsamples) cfg.subsamples = *sw_subsamples;
    cfg.validate();

    const fs::path out(sw_out);
    json record = cfg.to_json();
    record["config_hash"] = cfg.hash();
    record["source_model"] = sw_source;
    write_run_config(out, "sweep " + sw_kind, record);

    const fs::path root = common.root();
    SweepResources res{build_source_classifier(cfg.dataset), {}, {}, sw_cache, sw_jobs, nullptr, log_line};
    const bool needs_train = std::find(cfg.methods.begin(), cfg.methods.end(), Method::kOracle) != cfg.methods.end();
    if (needs_train || sw_source.empty() || !fs::exists(fs::path(sw_source) / "meta.json")) {
      res.source_train = load_dataset(cfg.dataset, root, Split::kTrain, cfg.train_limit);
    }
    if (!sw_source.empty() && fs::exists(fs::path(sw_source) / "meta.json")) {
      res.source = Classifier::load(sw_source);
    } else {
      log_line("training source classifier");
      TrainConfig t = cfg.train;
      t.log = log_line;
      train_source_classifier(res.source, res.source_train, t);
      res.source.save(sw_source.empty() ? out / "source_model" : fs::path(sw_source));
    }
    res.target_base = load_dataset(cfg.dataset, root, Split::kTest, cfg.target_limit);

    fs::remove(out / "results.partial.csv");
    RecordSink sink(out / "results.partial.csv");
    res.sink = &sink;
    const auto t0 = std::chrono::steady_clock::now();
    const auto records = run_sweep(cfg, res);
    write_results_csv(out / "results.csv", records);
    emit_plots(records, out / "plots");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "wrote " << records.size() << " records to " << (out / "results.csv").string() << " in " << secs
              << " s\n";
  });

  // ---------------------------------------------------------------- plot
  auto* plot = app.add_subcommand("plot", "Render plots from a results.csv");
  std::string pl_results, pl_out;
  plot->add_option("--results", pl_results, "results.csv")->required();
  plot->add_option("--out", pl_out, "Output directory")->required();
  plot->callback([&] {
    write_run_config(pl_out, "plot", {{"results", pl_results}});
    const auto records = read_results_csv(pl_results);
    const auto written = emit_plots(records, pl_out);
    for (const auto& p : written) std::cout << p.string() << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "sfda: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
