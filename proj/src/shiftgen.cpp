#include "sfda/shiftgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "sfda/io.hpp"
#include "sfda/rng.hpp"

namespace sfda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

ShiftSpec ShiftSpec::single(Axis axis, double mu, double sigma, std::uint64_t seed) {
  return ShiftSpec{{ShiftStage{axis, mu, sigma}}, seed};
}

std::vector<std::string> ShiftSpec::validate() const {
  std::vector<std::string> warnings;
  for (const auto& st : stages) {
    if (!std::isfinite(st.mu) || !std::isfinite(st.sigma)) {
      throw ParameterDomainError("shift stage " + axis_name(st.axis) + ": mu and sigma must be finite");
    }
    if (st.sigma < 0.0) {
      throw ParameterDomainError("shift stage " + axis_name(st.axis) + ": sigma must be >= 0, got " +
                                 fmt_num(st.sigma));
    }
    const AxisBounds dom = forward_domain(st.axis);
    if (st.mu < dom.low || st.mu > dom.high) {
      throw ParameterDomainError("shift stage " + axis_name(st.axis) + ": mu " + fmt_num(st.mu) +
                                 " outside the forward domain");
    }
    if (st.mu - 3 * st.sigma < dom.low || st.mu + 3 * st.sigma > dom.high) {
      warnings.push_back("shift stage " + axis_name(st.axis) + "(" + fmt_num(st.mu) + ", " +
                         fmt_num(st.sigma) +
                         "): 3-sigma interval leaves the forward domain; draws are truncated");
    }
  }
  return warnings;
}

bool ShiftSpec::is_identity() const {
  return std::ranges::all_of(stages, [](const ShiftStage& st) {
    return st.sigma == 0.0 && st.mu == forward_domain(st.axis).identity;
  });
}

std::string ShiftSpec::label() const {
  if (stages.empty()) return "none";
  std::string s;
  for (const auto& st : stages) {
    if (!s.empty()) s += "+";
    s += axis_name(st.axis) + "(" + fmt_num(st.mu) + "," + fmt_num(st.sigma) + ")";
  }
  return s;
}

json ShiftSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["stages"] = json::array();
  for (const auto& st : stages) {
    j["stages"].push_back({{"axis", axis_name(st.axis)}, {"mu", st.mu}, {"sigma", st.sigma}});
  }
  return j;
}

ShiftSpec ShiftSpec::from_json(const json& j) {
  ShiftSpec spec;
  spec.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& st : j.at("stages")) {
    spec.stages.push_back(
        {parse_axis(st.at("axis").get<std::string>()), st.at("mu").get<double>(), st.at("sigma").get<double>()});
  }
  return spec;
}

std::vector<std::vector<double>> sample_shift_params(const ShiftSpec& spec, std::size_t n) {
  if (n == 0) throw std::invalid_argument("sample_shift_params: n must be >= 1");
  spec.validate();
  std::vector<std::vector<double>> out(spec.stages.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto gen = rng::stream(spec.seed, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
      const auto& st = spec.stages[s];
      const AxisBounds dom = forward_domain(st.axis);
      const double draw = st.sigma > 0.0 ? st.mu + st.sigma * normal(gen) : st.mu;
      out[s][i] = std::clamp(draw, dom.low, dom.high);
    }
  }
  return out;
}

LabeledDataset apply_shift(const LabeledDataset& dataset, const ShiftSpec& spec) {
  for (const auto& w : spec.validate()) std::cerr << "warning: " << w << '\n';
  LabeledDataset out;
  out.name = dataset.name + "/" + spec.label();
  out.num_classes = dataset.num_classes;
  out.labels = dataset.labels;
  if (dataset.empty()) return out;
  const auto params = sample_shift_params(spec, dataset.size());
  out.images.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Image img = dataset.images[i];
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
      img = apply_axis(img, spec.stages[s].axis, params[s][i]);
    }
    out.images.push_back(std::move(img));
  }
  return out;
}

json ShiftManifest::to_json() const {
  return {{"source", source_name}, {"spec", spec.to_json()},   {"count", count},
          {"num_classes", num_classes}, {"shape", {channels, height, width}}, {"image_format", "pfm"}};
}

ShiftManifest ShiftManifest::from_json(const json& j) {
  ShiftManifest m;
  m.source_name = j.at("source").get<std::string>();
  m.spec = ShiftSpec::from_json(j.at("spec"));
  m.count = j.at("count").get<std::size_t>();
  m.num_classes = j.at("num_classes").get<int>();
  const auto& shape = j.at("shape");
  m.channels = shape.at(0).get<int>();
  m.height = shape.at(1).get<int>();
  m.width = shape.at(2).get<int>();
  return m;
}

namespace {

std::string item_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.pfm", i);
  return buf;
}

}  // namespace

ShiftManifest write_shifted_dataset(const LabeledDataset& dataset, const ShiftSpec& spec,
                                    const fs::path& dir) {
  dataset.validate();
  if (dataset.empty()) throw std::invalid_argument("write_shifted_dataset: empty dataset");
  const LabeledDataset shifted = apply_shift(dataset, spec);
  const auto params = sample_shift_params(spec, dataset.size());
  try {
    fs::create_directories(dir / "images");
    std::ostringstream labels;
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      io::write_pfm(dir / "images" / item_filename(i), shifted.images[i]);
      labels << shifted.labels[i] << '\n';
    }
    io::write_text_atomic(dir / "labels.txt", labels.str());

    std::ostringstream csv;
    csv.precision(17);
    csv << "index";
    for (const auto& st : spec.stages) csv << ',' << axis_name(st.axis);
    csv << '\n';
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      csv << i;
      for (const auto& stage_params : params) csv << ',' << stage_params[i];
      csv << '\n';
    }
    io::write_text_atomic(dir / "params.csv", csv.str());

    ShiftManifest m;
    m.source_name = dataset.name;
    m.spec = spec;
    m.count = shifted.size();
    m.num_classes = dataset.num_classes;
    const Image& first = shifted.images.front();
    m.channels = first.channels;
    m.height = first.height;
    m.width = first.width;
    io::write_json(dir / "manifest.json", m.to_json());
    return m;
  } catch (const fs::filesystem_error& e) {
    throw std::runtime_error("writing shifted dataset to " + dir.string() + ": " + e.what());
  }
}

ShiftedDataset read_shifted_dataset(const fs::path& dir) {
  ShiftedDataset out;
  out.manifest = ShiftManifest::from_json(io::read_json(dir / "manifest.json"));
  const auto& m = out.manifest;
  out.dataset.name = m.source_name + "/" + m.spec.label();
  out.dataset.num_classes = m.num_classes;

  std::istringstream labels(io::read_text(dir / "labels.txt"));
  int label;
  while (labels >> label) out.dataset.labels.push_back(label);
  if (out.dataset.labels.size() != m.count) {
    throw std::runtime_error(dir.string() + ": labels.txt holds " +
                             std::to_string(out.dataset.labels.size()) + " entries, manifest says " +
                             std::to_string(m.count));
  }
  out.dataset.images.reserve(m.count);
  for (std::size_t i = 0; i < m.count; ++i) {
    out.dataset.images.push_back(io::read_pfm(dir / "images" / item_filename(i)));
  }
  out.dataset.validate();

  std::istringstream csv(io::read_text(dir / "params.csv"));
  std::string line;
  std::getline(csv, line);
  out.params.assign(m.spec.stages.size(), {});
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    for (auto& stage_params : out.params) {
      std::getline(row, cell, ',');
      stage_params.push_back(std::stod(cell));
    }
  }
  return out;
}

}  // namespace sfda
