#pragma once

// Target-domain generation: every image receives its own forward-transform
// parameters drawn from N(mu, sigma) per stage, truncated into the axis's
// forward domain.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfda/dataset.hpp"
#include "sfda/transforms.hpp"

namespace sfda {

struct ShiftStage {
  Axis axis = Axis::kBrightness;
  double mu = 1.0;
  double sigma = 0.0;

  friend bool operator==(const ShiftStage&, const ShiftStage&) = default;
};

struct ShiftSpec {
  std::vector<ShiftStage> stages;
  std::uint64_t seed = 0;

  static ShiftSpec single(Axis axis, double mu, double sigma, std::uint64_t seed = 0);

  // Throws ParameterDomainError on negative sigma or a mean outside the
  // forward domain; returns warnings for stages whose 3-sigma interval leaves
  // the domain.
  std::vector<std::string> validate() const;
  bool is_identity() const;
  // Compact label such as "rotation(30,2)+brightness(0.5,0.05)".
  std::string label() const;

  nlohmann::json to_json() const;
  static ShiftSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ShiftSpec&, const ShiftSpec&) = default;
};

// result[stage][item]; item i always draws from substream (seed, i).
std::vector<std::vector<double>> sample_shift_params(const ShiftSpec& spec, std::size_t n);

LabeledDataset apply_shift(const LabeledDataset& dataset, const ShiftSpec& spec);

struct ShiftManifest {
  std::string source_name;
  ShiftSpec spec;
  std::size_t count = 0;
  int num_classes = 10;
  int channels = 0, height = 0, width = 0;

  nlohmann::json to_json() const;
  static ShiftManifest from_json(const nlohmann::json& j);
};

struct ShiftedDataset {
  LabeledDataset dataset;
  ShiftManifest manifest;
  std::vector<std::vector<double>> params;  // [stage][item]
};

// Layout: manifest.json, labels.txt (one class index per line),
// params.csv (sampled forward parameters), images/NNNNNN.pfm.
ShiftManifest write_shifted_dataset(const LabeledDataset& dataset, const ShiftSpec& spec,
                                    const std::filesystem::path& dir);
ShiftedDataset read_shifted_dataset(const std::filesystem::path& dir);

}  // namespace sfda
