#include "sfda/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sfda/io.hpp"
#include "sfda/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sfda {

// ------------------------------------------------------------------ CSV

namespace {

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("cannot format number");
  return std::string(buf, end);
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw std::runtime_error("unterminated quote in CSV row: " + line);
  return fields;
}

template <typename T>
T parse_field(const std::string& s, const char* name) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error(std::string("bad value for ") + name + ": '" + s + "'");
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, const char* name) {
  if (s.empty()) return std::nullopt;
  return parse_field<double>(s, name);
}

std::string optional_field(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace

std::string results_csv_header() {
  return "experiment_id,dataset,axes,mu_1,sigma_1,mu_2,sigma_2,method,n_labels,subsample_idx,seed,accuracy";
}

std::string to_csv_row(const ResultRecord& r) {
  std::ostringstream os;
  os << quote(r.experiment_id) << ',' << quote(r.dataset) << ',' << quote(r.axes) << ',' << optional_field(r.mu_1)
     << ',' << optional_field(r.sigma_1) << ',' << optional_field(r.mu_2) << ',' << optional_field(r.sigma_2) << ','
     << quote(r.method) << ',' << r.n_labels << ',' << r.subsample_idx << ',' << r.seed << ','
     << format_number(r.accuracy);
  return os.str();
}

ResultRecord parse_csv_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 12) {
    throw std::runtime_error("expected 12 CSV fields, got " + std::to_string(f.size()) + ": " + line);
  }
  ResultRecord r;
  r.experiment_id = f[0];
  r.dataset = f[1];
  r.axes = f[2];
  r.mu_1 = parse_optional(f[3], "mu_1");
  r.sigma_1 = parse_optional(f[4], "sigma_1");
  r.mu_2 = parse_optional(f[5], "mu_2");
  r.sigma_2 = parse_optional(f[6], "sigma_2");
  r.method = f[7];
  r.n_labels = parse_field<std::size_t>(f[8], "n_labels");
  r.subsample_idx = parse_field<int>(f[9], "subsample_idx");
  r.seed = parse_field<std::uint64_t>(f[10], "seed");
  r.accuracy = parse_field<double>(f[11], "accuracy");
  return r;
}

void write_results_csv(const fs::path& path, std::span<const ResultRecord> records) {
  std::string text = results_csv_header() + "\n";
  for (const auto& r : records) text += to_csv_row(r) + "\n";
  io::write_text_atomic(path, text);
}

std::vector<ResultRecord> read_results_csv(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != split_csv(results_csv_header())) {
    throw std::runtime_error(path.string() + ": missing or unexpected results header");
  }
  std::vector<ResultRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_csv_row(line));
  }
  return out;
}

RecordSink::RecordSink(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  if (!fs::exists(path_) || fs::file_size(path_) == 0) {
    std::ofstream out(path_, std::ios::app);
    out << results_csv_header() << '\n';
    if (!out) throw std::runtime_error("cannot write " + path_.string());
  }
}

void RecordSink::append(std::span<const ResultRecord> records) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  for (const auto& r : records) {
    out << to_csv_row(r) << '\n';
    out.flush();
  }
  if (!out) throw std::runtime_error("cannot append to " + path_.string());
}

// ------------------------------------------------------------------ protocol

TargetSplit split_target(const LabeledDataset& dataset, std::uint64_t seed, double eval_fraction) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw std::invalid_argument("eval fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n)));
  if (n_eval == 0 || n_eval == n) {
    throw std::invalid_argument("target domain of " + std::to_string(n) + " images is too small to split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto gen = rng::stream(seed, "target-split");
  std::shuffle(order.begin(), order.end(), gen);

  TargetSplit split;
  split.eval_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
  split.adapt_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());
  std::sort(split.eval_indices.begin(), split.eval_indices.end());
  std::sort(split.adapt_indices.begin(), split.adapt_indices.end());
  split.adapt_pool = dataset.subset(split.adapt_indices, dataset.name + "/adapt");
  split.eval_pool = dataset.subset(split.eval_indices, dataset.name + "/eval");
  return split;
}

SubsampleSummary evaluate_with_subsampling(std::span<const int> predictions, std::span<const int> labels, int k,
                                           double fraction, std::uint64_t seed) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("predictions (" + std::to_string(predictions.size()) + ") and labels (" +
                                std::to_string(labels.size()) + ") are misaligned");
  }
  if (k < 1) throw std::invalid_argument("need at least one subsample");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subsample fraction must lie in (0, 1]");
  const std::size_t n = labels.size();
  const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (m == 0) throw std::invalid_argument("subsample would be empty");

  SubsampleSummary s;
  std::vector<std::size_t> order(n);
  for (int i = 0; i < k; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto gen = rng::stream(seed, static_cast<std::uint64_t>(i));
    std::shuffle(order.begin(), order.end(), gen);
    std::size_t correct = 0;
    for (std::size_t j = 0; j < m; ++j) correct += predictions[order[j]] == labels[order[j]];
    s.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(m));
  }
  s.mean = std::accumulate(s.accuracies.begin(), s.accuracies.end(), 0.0) / k;
  double var = 0.0;
  for (double a : s.accuracies) var += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(var / k);
  return s;
}

// ------------------------------------------------------------------ names

std::string sweep_kind_name(SweepKind kind) {
  switch (kind) {
    case SweepKind::kSeverity: return "severity";
    case SweepKind::kRange: return "range";
    case SweepKind::kFinetune: return "finetune";
    case SweepKind::kMultiAxis: return "multiaxis";
  }
  return "?";
}

SweepKind parse_sweep_kind(const std::string& name) {
  for (auto k : {SweepKind::kSeverity, SweepKind::kRange, SweepKind::kFinetune, SweepKind::kMultiAxis}) {
    if (sweep_kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown sweep kind '" + name + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kSource: return "source";
    case Method::kAdapted: return "adapted";
    case Method::kOracle: return "oracle";
    case Method::kFtLast: return "ft-last";
    case Method::kFtFull: return "ft-full";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kSource, Method::kAdapted, Method::kOracle, Method::kFtLast, Method::kFtFull}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

// ------------------------------------------------------------------ config

void ExperimentConfig::validate() const {
  if (experiment_id.empty()) throw std::invalid_argument("experiment_id must not be empty");
  if (axes.empty()) throw std::invalid_argument("at least one axis is required");
  if (kind == SweepKind::kMultiAxis && (axes.size() != 2 || axes[0] == axes[1])) {
    throw std::invalid_argument("multi-axis sweeps need two distinct axes");
  }
  if (kind != SweepKind::kMultiAxis && axes.size() != 1) {
    throw std::invalid_argument(sweep_kind_name(kind) + " sweeps take exactly one axis");
  }
  if (mu_grid.empty() || sigma_grid.empty()) throw std::invalid_argument("mu and sigma grids must not be empty");
  if (methods.empty()) throw std::invalid_argument("no methods selected");
  const bool has_ft = std::any_of(methods.begin(), methods.end(),
                                  [](Method m) { return m == Method::kFtLast || m == Method::kFtFull; });
  if (has_ft && n_grid.empty()) throw std::invalid_argument("fine-tuning methods need a label-budget grid");
  for (auto n : n_grid) LabelBudget{n}.validate();
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw std::invalid_argument("eval_fraction must lie in (0, 1)");
  if (subsamples < 1) throw std::invalid_argument("subsamples must be >= 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw std::invalid_argument("subsample_fraction must lie in (0, 1]");
  }
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  adapt.validate();
  for (const auto& p : expand_grid(*this)) ShiftSpec{p.stages, 0}.validate();
}

json ExperimentConfig::to_json() const {
  json ax = json::array();
  for (auto a : axes) ax.push_back(axis_name(a));
  json ms = json::array();
  for (auto m : methods) ms.push_back(method_name(m));
  return {{"experiment_id", experiment_id},
          {"dataset", dataset_name(dataset)},
          {"kind", sweep_kind_name(kind)},
          {"axes", ax},
          {"mu_grid", mu_grid},
          {"sigma_grid", sigma_grid},
          {"anchor_mu", anchor_mu},
          {"n_grid", n_grid},
          {"methods", ms},
          {"eval_fraction", eval_fraction},
          {"subsamples", subsamples},
          {"subsample_fraction", subsample_fraction},
          {"seeds", seeds},
          {"adapt_on_full_target", adapt_on_full_target},
          {"adapt", adapt.to_json()},
          {"train", train.to_json()},
          {"train_limit", train_limit},
          {"target_limit", target_limit}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.dataset = parse_dataset_id(j.at("dataset").get<std::string>());
  c.kind = parse_sweep_kind(j.at("kind").get<std::string>());
  Axis first = c.dataset == DatasetId::kMnist ? Axis::kRotation : Axis::kBrightness;
  if (j.contains("axes") && !j.at("axes").empty()) first = parse_axis(j.at("axes").at(0).get<std::string>());
  c = defaults(c.dataset, c.kind, first);
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  if (j.contains("axes")) {
    c.axes.clear();
    for (const auto& a : j.at("axes")) c.axes.push_back(parse_axis(a.get<std::string>()));
  }
  c.mu_grid = j.value("mu_grid", c.mu_grid);
  c.sigma_grid = j.value("sigma_grid", c.sigma_grid);
  c.anchor_mu = j.value("anchor_mu", c.anchor_mu);
  c.n_grid = j.value("n_grid", c.n_grid);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
  c.subsamples = j.value("subsamples", c.subsamples);
  c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
  c.seeds = j.value("seeds", c.seeds);
  c.adapt_on_full_target = j.value("adapt_on_full_target", c.adapt_on_full_target);
  if (j.contains("adapt")) c.adapt = AdaptConfig::from_json(j.at("adapt"));
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  c.train_limit = j.value("train_limit", c.train_limit);
  c.target_limit = j.value("target_limit", c.target_limit);
  return c;
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()}).substr(0, 16);
}

ExperimentConfig ExperimentConfig::defaults(DatasetId dataset, SweepKind kind, Axis axis) {
  ExperimentConfig c;
  c.dataset = dataset;
  c.kind = kind;
  c.train = TrainConfig::for_dataset(dataset, 0);
  const bool rot = axis == Axis::kRotation;
  c.axes = {axis};
  c.experiment_id = dataset_name(dataset) + "-" + sweep_kind_name(kind) + "-" + axis_name(axis);
  switch (kind) {
    case SweepKind::kSeverity:
      c.mu_grid = rot ? std::vector<double>{-60, -45, -30, -15, 0, 15, 30, 45, 60}
                      : std::vector<double>{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
      c.sigma_grid = {rot ? 2.0 : 0.05};
      break;
    case SweepKind::kRange:
      c.mu_grid = {rot ? 30.0 : 0.5};
      c.sigma_grid = rot ? std::vector<double>{2, 5, 10, 15, 20, 25}
                         : std::vector<double>{0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
      break;
    case SweepKind::kFinetune:
      c.mu_grid = rot ? std::vector<double>{30, 60} : std::vector<double>{0.25, 0.5, 1.5, 1.75};
      c.sigma_grid = {rot ? 2.0 : 0.05};
      c.n_grid = {100, 500, 1000, 2000, 4000, 7000};
      c.methods = {Method::kSource, Method::kAdapted, Method::kFtLast, Method::kFtFull};
      break;
    case SweepKind::kMultiAxis:
      c.axes = {Axis::kBrightness, Axis::kContrast};
      c.experiment_id = dataset_name(dataset) + "-multiaxis";
      c.mu_grid = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
      c.sigma_grid = {0.05};
      c.anchor_mu = 0.5;
      break;
  }
  return c;
}

// ------------------------------------------------------------------ grid

std::string GridPoint::label() const { return ShiftSpec{stages, 0}.label(); }

ResultRecord GridPoint::columns() const {
  ResultRecord r;
  r.experiment_id = experiment_id;
  std::string axes;
  // Columns list the outermost transform first; stages are in application
  // order.
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& st = stages[stages.size() - 1 - k];
    if (k) axes += "+";
    axes += axis_name(st.axis);
    (k == 0 ? r.mu_1 : r.mu_2) = st.mu;
    (k == 0 ? r.sigma_1 : r.sigma_2) = st.sigma;
  }
  r.axes = axes;
  return r;
}

std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg) {
  std::vector<GridPoint> points;
  if (cfg.kind == SweepKind::kMultiAxis) {
    const Axis outer = cfg.axes.at(0), inner = cfg.axes.at(1);
    for (double sigma : cfg.sigma_grid) {
      for (double mu : cfg.mu_grid) {
        points.push_back({cfg.experiment_id + "/vary-" + axis_name(outer),
                          {{inner, cfg.anchor_mu, sigma}, {outer, mu, sigma}}});
      }
      for (double mu : cfg.mu_grid) {
        points.push_back({cfg.experiment_id + "/vary-" + axis_name(inner),
                          {{inner, mu, sigma}, {outer, cfg.anchor_mu, sigma}}});
      }
    }
    return points;
  }
  for (double mu : cfg.mu_grid) {
    for (double sigma : cfg.sigma_grid) {
      GridPoint p{cfg.experiment_id, {{cfg.axes.at(0), mu, sigma}}};
      if (cfg.kind == SweepKind::kFinetune) p.experiment_id += "/" + p.label();
      points.push_back(std::move(p));
    }
  }
  return points;
}

namespace {

std::vector<std::size_t> effective_budgets(const ExperimentConfig& cfg, std::size_t pool) {
  std::vector<std::size_t> out;
  for (auto n : cfg.n_grid) {
    const std::size_t clipped = std::min(n, pool);
    if (std::find(out.begin(), out.end(), clipped) == out.end()) out.push_back(clipped);
  }
  return out;
}

std::size_t adapt_pool_size(const ExperimentConfig& cfg, std::size_t target_size) {
  return target_size - static_cast<std::size_t>(std::llround(cfg.eval_fraction * static_cast<double>(target_size)));
}

bool is_finetune(Method m) { return m == Method::kFtLast || m == Method::kFtFull; }

}  // namespace

std::size_t expected_record_count(const ExperimentConfig& cfg, std::size_t target_size) {
  const std::size_t budgets = effective_budgets(cfg, adapt_pool_size(cfg, target_size)).size();
  std::size_t per_point = 0;
  for (auto m : cfg.methods) per_point += is_finetune(m) ? budgets : 1;
  return expand_grid(cfg).size() * cfg.seeds.size() * per_point * static_cast<std::size_t>(cfg.subsamples);
}

// ------------------------------------------------------------------ running

std::string model_fingerprint(Classifier& model) {
  const auto blob = model.state();
  return sha256_hex({reinterpret_cast<const unsigned char*>(blob.data()), blob.size() * sizeof(float)}).substr(0, 16);
}

double mean_accuracy(std::span<const ResultRecord> records, const std::function<bool(const ResultRecord&)>& filter) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (filter(r)) {
      sum += r.accuracy;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("no records match the filter");
  return sum / static_cast<double>(n);
}

namespace {

std::string key_digest(const json& key) {
  const std::string text = key.dump();
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()}).substr(0, 20);
}

// Saves through a temporary sibling directory so concurrent runs never see a
// half-written checkpoint.
template <typename Model>
void save_cached(Model& model, const fs::path& dir) {
  fs::create_directories(dir.parent_path());
  std::ostringstream tag;
  tag << std::this_thread::get_id();
  const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".tmp-" + tag.str());
  fs::remove_all(tmp);
  model.save(tmp);
  std::error_code ec;
  fs::rename(tmp, dir, ec);
  if (ec) fs::remove_all(tmp);
}

struct PointJob {
  GridPoint point;  // first grid point with this label
  std::uint64_t seed = 0;
  // method -> (n_labels -> subsample accuracies)
  std::map<std::pair<Method, std::size_t>, std::vector<double>> accuracies;
};

class SweepRunner {
 public:
  SweepRunner(const ExperimentConfig& cfg, SweepResources& res)
      : cfg_(cfg), res_(res), source_fp_(model_fingerprint(res.source)) {}

  void run(PointJob& job, Classifier& source) {
    const ShiftSpec spec{job.point.stages, rng::derive(job.seed, job.point.label())};
    log("[" + job.point.label() + " seed " + std::to_string(job.seed) + "] generating target domain");
    const LabeledDataset target = apply_shift(res_.target_base, spec);
    const TargetSplit split = split_target(target, rng::derive(job.seed, "eval-split"), cfg_.eval_fraction);
    const std::uint64_t sub_seed = rng::derive(job.seed, "subsample");
    auto score = [&](Method m, std::size_t n, const std::vector<int>& preds) {
      job.accuracies[{m, n}] = evaluate_with_subsampling(preds, split.eval_pool.labels, cfg_.subsamples,
                                                         cfg_.subsample_fraction, sub_seed)
                                   .accuracies;
    };

    for (Method m : cfg_.methods) {
      switch (m) {
        case Method::kSource:
          score(m, 0, source.predict(split.eval_pool.images));
          break;
        case Method::kAdapted: {
          TransformNet net = adapted_net(job, spec, target, split, source);
          score(m, 0, transform_and_classify(net, split.eval_pool.images, source).predictions);
          break;
        }
        case Method::kOracle: {
          Classifier oracle = oracle_model(job, spec);
          score(m, 0, oracle.predict(split.eval_pool.images));
          break;
        }
        case Method::kFtLast:
        case Method::kFtFull:
          for (auto n : effective_budgets(cfg_, split.adapt_pool.size())) {
            Classifier tuned = finetuned_model(job, m, n, split, source);
            score(m, n, tuned.predict(split.eval_pool.images));
          }
          break;
      }
    }
  }

 private:
  void log(const std::string& msg) {
    if (res_.log) {
      std::lock_guard lock(log_mu_);
      res_.log(msg);
    }
  }

  fs::path cache_path(const std::string& kind, const json& key) const {
    if (res_.cache_dir.empty()) return {};
    return res_.cache_dir / kind / key_digest(key);
  }

  TransformNet adapted_net(const PointJob& job, const ShiftSpec& spec, const LabeledDataset& target,
                           const TargetSplit& split, Classifier& source) {
    AdaptConfig a = cfg_.adapt;
    a.seed = rng::derive(job.seed, "adapt");
    const json key = {{"source", source_fp_},
                      {"dataset", dataset_name(cfg_.dataset)},
                      {"shift", spec.to_json()},
                      {"target", res_.target_base.size()},
                      {"eval_fraction", cfg_.eval_fraction},
                      {"full_target", cfg_.adapt_on_full_target},
                      {"adapt", a.to_json()},
                      {"output_scale", kDefaultOutputScale}};
    const fs::path dir = cache_path("tnet", key);
    if (!dir.empty() && fs::exists(dir / "meta.json")) {
      log("[" + job.point.label() + "] cached transform net " + dir.string());
      return TransformNet::load(dir);
    }
    log("[" + job.point.label() + "] training transform net");
    const std::string tag = job.point.label();
    a.log = [this, tag](const std::string& msg) { log("[" + tag + "] " + msg); };
    TransformNet init = build_transform_net(cfg_.dataset, ParamSpace::standard(), rng::derive(job.seed, "tnet-init"));
    const auto& images = cfg_.adapt_on_full_target ? target.images : split.adapt_pool.images;
    AdaptResult result = train_transform_net(std::move(init), images, source, a);
    result.net.metadata()["loss_history"] = result.loss_history;
    result.net.metadata()["shift"] = spec.to_json();
    if (!dir.empty()) save_cached(result.net, dir);
    return std::move(result.net);
  }

  Classifier oracle_model(const PointJob& job, const ShiftSpec& spec) {
    TrainConfig t = cfg_.train;
    t.seed = rng::derive(job.seed, "oracle");
    const std::uint64_t init_seed = rng::derive(job.seed, "oracle-init");
    const json key = {{"dataset", dataset_name(cfg_.dataset)},
                      {"shift", spec.to_json()},
                      {"train_size", res_.source_train.size()},
                      {"train", t.to_json()},
                      {"init_seed", init_seed}};
    const fs::path dir = cache_path("oracle", key);
    if (!dir.empty() && fs::exists(dir / "meta.json")) {
      log("[" + job.point.label() + "] cached oracle " + dir.string());
      return Classifier::load(dir);
    }
    log("[" + job.point.label() + "] training oracle");
    const std::string tag = job.point.label();
    t.log = [this, tag](const std::string& msg) { log("[" + tag + " oracle] " + msg); };
    OracleResult result = train_oracle(cfg_.dataset, res_.source_train, spec, t, init_seed);
    if (!dir.empty()) save_cached(result.model, dir);
    return std::move(result.model);
  }

  Classifier finetuned_model(const PointJob& job, Method m, std::size_t n, const TargetSplit& split,
                             Classifier& source) {
    const FinetuneScheme scheme = m == Method::kFtLast ? FinetuneScheme::kLastLayer : FinetuneScheme::kFull;
    const std::uint64_t seed = rng::derive(job.seed, "ft-" + std::to_string(n));
    TrainConfig t = cfg_.train;
    const json key = {{"source", source_fp_},
                      {"dataset", dataset_name(cfg_.dataset)},
                      {"shift", ShiftSpec{job.point.stages, rng::derive(job.seed, job.point.label())}.to_json()},
                      {"target", res_.target_base.size()},
                      {"eval_fraction", cfg_.eval_fraction},
                      {"scheme", scheme_name(scheme)},
                      {"n", n},
                      {"seed", seed},
                      {"train", t.to_json()}};
    const fs::path dir = cache_path("finetune", key);
    if (!dir.empty() && fs::exists(dir / "meta.json")) return Classifier::load(dir);
    log("[" + job.point.label() + "] " + scheme_name(scheme) + " n=" + std::to_string(n));
    FinetuneResult result = finetune(source, split.adapt_pool, LabelBudget{n}, scheme, seed, t);
    if (!dir.empty()) save_cached(result.model, dir);
    return std::move(result.model);
  }

  const ExperimentConfig& cfg_;
  SweepResources& res_;
  std::string source_fp_;
  std::mutex log_mu_;
};

}  // namespace

std::vector<ResultRecord> run_sweep(const ExperimentConfig& cfg, SweepResources& res) {
  cfg.validate();
  if (res.target_base.empty()) throw std::invalid_argument("no target images supplied");
  const bool needs_train = std::find(cfg.methods.begin(), cfg.methods.end(), Method::kOracle) != cfg.methods.end();
  if (needs_train && res.source_train.empty()) throw std::invalid_argument("oracle runs need the source training set");
  res.source.check_input(res.target_base.images.front());

  // One job per distinct (shift label, seed); grid points sharing a label
  // (the multi-axis corner) reuse its results.
  const auto points = expand_grid(cfg);
  std::vector<PointJob> jobs;
  std::map<std::pair<std::string, std::uint64_t>, std::size_t> job_of;
  std::vector<std::vector<std::size_t>> point_jobs(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (auto seed : cfg.seeds) {
      const auto key = std::make_pair(points[p].label(), seed);
      auto it = job_of.find(key);
      if (it == job_of.end()) {
        it = job_of.emplace(key, jobs.size()).first;
        jobs.push_back({points[p], seed, {}});
      }
      point_jobs[p].push_back(it->second);
    }
  }

  SweepRunner runner(cfg, res);
  auto records_for = [&](const GridPoint& point, const PointJob& job) {
    std::vector<ResultRecord> out;
    ResultRecord base = point.columns();
    base.dataset = dataset_name(cfg.dataset);
    base.seed = job.seed;
    for (Method m : cfg.methods) {
      for (const auto& [key, accs] : job.accuracies) {
        if (key.first != m) continue;
        for (std::size_t i = 0; i < accs.size(); ++i) {
          ResultRecord r = base;
          r.method = method_name(m);
          r.n_labels = key.second;
          r.subsample_idx = static_cast<int>(i);
          r.accuracy = accs[i];
          out.push_back(std::move(r));
        }
      }
    }
    return out;
  };
  auto emit = [&](std::size_t j) {
    if (!res.sink) return;
    for (std::size_t p = 0; p < points.size(); ++p) {
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        if (point_jobs[p][s] == j) res.sink->append(records_for(points[p], jobs[j]));
      }
    }
  };

  const int workers = std::max(1, std::min<int>(res.jobs, static_cast<int>(jobs.size())));
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      runner.run(jobs[j], res.source);
      emit(j);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    // Inference caches activations, so every worker owns a copy.
    std::vector<Classifier> sources(static_cast<std::size_t>(workers), res.source);
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        Classifier& source = sources[static_cast<std::size_t>(w)];
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
          try {
            runner.run(jobs[j], source);
            emit(j);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = jobs.size();
          }
        }
      });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<ResultRecord> records;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      auto part = records_for(points[p], jobs[point_jobs[p][s]]);
      records.insert(records.end(), part.begin(), part.end());
    }
  }
  return records;
}

namespace {

void require_kind(const ExperimentConfig& cfg, SweepKind kind) {
  if (cfg.kind != kind) {
    throw std::invalid_argument("config describes a " + sweep_kind_name(cfg.kind) + " sweep, expected " +
                                sweep_kind_name(kind));
  }
}

}  // namespace

std::vector<ResultRecord> run_severity_sweep(const ExperimentConfig& cfg, SweepResources& res) {
  require_kind(cfg, SweepKind::kSeverity);
  return run_sweep(cfg, res);
}

std::vector<ResultRecord> run_range_sweep(const ExperimentConfig& cfg, SweepResources& res) {
  require_kind(cfg, SweepKind::kRange);
  return run_sweep(cfg, res);
}

std::vector<ResultRecord> run_finetune_comparison(const ExperimentConfig& cfg, SweepResources& res) {
  require_kind(cfg, SweepKind::kFinetune);
  return run_sweep(cfg, res);
}

std::vector<ResultRecord> run_multiaxis_sweep(const ExperimentConfig& cfg, SweepResources& res) {
  require_kind(cfg, SweepKind::kMultiAxis);
  return run_sweep(cfg, res);
}

}  // namespace sfda
