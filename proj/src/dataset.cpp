#include "sfda/dataset.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sfda {

namespace fs = std::filesystem;

void LabeledDataset::validate() const {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("dataset '" + name + "': " + std::to_string(images.size()) +
                                " images but " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images.front())) {
      throw std::invalid_argument("dataset '" + name + "': image " + std::to_string(i) +
                                  " has shape " + shape_of(images[i]) + ", expected " +
                                  shape_of(images.front()));
    }
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("dataset '" + name + "': label " + std::to_string(labels[i]) +
                                  " at index " + std::to_string(i) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices,
                                      std::string subset_name) const {
  LabeledDataset out;
  out.name = std::move(subset_name);
  out.num_classes = num_classes;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

DatasetId parse_dataset_id(const std::string& name) {
  if (name == "mnist") return DatasetId::kMnist;
  if (name == "cifar10") return DatasetId::kCifar10;
  throw std::invalid_argument("unknown dataset '" + name + "' (expected mnist or cifar10)");
}

std::string dataset_name(DatasetId id) {
  return id == DatasetId::kMnist ? "mnist" : "cifar10";
}

fs::path resolve_data_root(const std::optional<fs::path>& override_root) {
  if (override_root) return *override_root;
  if (const char* env = std::getenv("SFDA_DATA_ROOT"); env && *env) return env;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return fs::path(xdg) / "sfda";
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "sfda";
  throw std::runtime_error("cannot resolve data root: pass --data-root or set SFDA_DATA_ROOT");
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

namespace {

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

// Uncompressed IDX digests of the canonical MNIST release.
const std::map<std::string, std::string> kMnistDigests = {
    {"train-images-idx3-ubyte", "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
    {"train-labels-idx1-ubyte", "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
    {"t10k-images-idx3-ubyte", "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"},
    {"t10k-labels-idx1-ubyte", "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"},
};

std::vector<unsigned char> read_verified(const fs::path& path) {
  auto bytes = read_file(path);
  const auto it = kMnistDigests.find(path.filename().string());
  if (it != kMnistDigests.end()) {
    const std::string digest = sha256_hex(bytes);
    if (digest != it->second) {
      throw std::runtime_error("checksum mismatch for " + path.string() + ": got " + digest);
    }
  }
  return bytes;
}

}  // namespace

LabeledDataset load_mnist(const fs::path& root, Split split, std::size_t limit) {
  const fs::path dir = root / "mnist";
  const std::string prefix = split == Split::kTrain ? "train" : "t10k";
  const auto images = read_verified(dir / (prefix + "-images-idx3-ubyte"));
  const auto labels = read_verified(dir / (prefix + "-labels-idx1-ubyte"));
  if (images.size() < 16 || read_be32(images, 0) != 2051) {
    throw std::runtime_error("bad IDX image header in " + dir.string());
  }
  if (labels.size() < 8 || read_be32(labels, 0) != 2049) {
    throw std::runtime_error("bad IDX label header in " + dir.string());
  }
  std::size_t count = read_be32(images, 4);
  const int rows = static_cast<int>(read_be32(images, 8));
  const int cols = static_cast<int>(read_be32(images, 12));
  if (read_be32(labels, 4) != count) throw std::runtime_error("MNIST image/label count mismatch");
  if (limit && limit < count) count = limit;

  LabeledDataset ds;
  ds.name = "mnist-" + prefix;
  ds.num_classes = 10;
  ds.images.reserve(count);
  ds.labels.reserve(count);
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  for (std::size_t n = 0; n < count; ++n) {
    Image img(1, rows, cols);
    const unsigned char* src = images.data() + 16 + n * plane;
    for (std::size_t k = 0; k < plane; ++k) img.data[k] = static_cast<float>(src[k]) / 255.0f;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(labels[8 + n]);
  }
  return ds;
}

LabeledDataset load_cifar10(const fs::path& root, Split split, std::size_t limit) {
  const fs::path dir = root / "cifar-10-batches-bin";
  std::vector<fs::path> files;
  if (split == Split::kTrain) {
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  LabeledDataset ds;
  ds.name = split == Split::kTrain ? "cifar10-train" : "cifar10-test";
  ds.num_classes = 10;
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    if (bytes.size() % kRecord != 0) throw std::runtime_error("truncated CIFAR-10 batch " + f.string());
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
      if (limit && ds.size() >= limit) return ds;
      Image img(3, 32, 32);
      for (std::size_t k = 0; k < 3 * 32 * 32; ++k) {
        img.data[k] = static_cast<float>(bytes[off + 1 + k]) / 255.0f;
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(bytes[off]);
    }
  }
  return ds;
}

LabeledDataset load_dataset(DatasetId id, const fs::path& root, Split split, std::size_t limit) {
  return id == DatasetId::kMnist ? load_mnist(root, split, limit) : load_cifar10(root, split, limit);
}

bool dataset_available(DatasetId id, const fs::path& root) {
  if (id == DatasetId::kMnist) {
    return fs::exists(root / "mnist" / "train-images-idx3-ubyte") &&
           fs::exists(root / "mnist" / "t10k-images-idx3-ubyte");
  }
  return fs::exists(root / "cifar-10-batches-bin" / "test_batch.bin");
}

}  // namespace sfda
