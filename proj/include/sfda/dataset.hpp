#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfda/image.hpp"

namespace sfda {

struct LabeledDataset {
  std::string name;
  int num_classes = 10;
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  // Throws if images disagree in shape, labels are misaligned or out of range.
  void validate() const;
  LabeledDataset subset(std::span<const std::size_t> indices, std::string subset_name) const;
};

enum class DatasetId { kMnist, kCifar10 };

DatasetId parse_dataset_id(const std::string& name);
std::string dataset_name(DatasetId id);

enum class Split { kTrain, kTest };

// Resolves the data root: explicit override, then $SFDA_DATA_ROOT, then
// $XDG_CACHE_HOME/sfda, then ~/.cache/sfda.
std::filesystem::path resolve_data_root(const std::optional<std::filesystem::path>& override_root);

// Reads MNIST IDX files from <root>/mnist, verifying their SHA-256 digests.
// `limit` truncates to the first items (0 = all).
LabeledDataset load_mnist(const std::filesystem::path& root, Split split, std::size_t limit = 0);

// Reads the CIFAR-10 binary release from <root>/cifar-10-batches-bin.
LabeledDataset load_cifar10(const std::filesystem::path& root, Split split, std::size_t limit = 0);

LabeledDataset load_dataset(DatasetId id, const std::filesystem::path& root, Split split,
                            std::size_t limit = 0);

bool dataset_available(DatasetId id, const std::filesystem::path& root);

std::string sha256_hex(std::span<const unsigned char> bytes);

}  // namespace sfda
