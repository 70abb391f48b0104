#include "sfda/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sfda::io {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "PFM writer assumes little-endian host");

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

}  // namespace

void write_pfm(const fs::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(img.width) * img.channels);
  // PFM stores rows bottom to top, channels interleaved.
  for (int i = img.height - 1; i >= 0; --i) {
    for (int j = 0; j < img.width; ++j) {
      for (int c = 0; c < img.channels; ++c) row[static_cast<std::size_t>(j) * img.channels + c] = img.at(c, i, j);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) fail(path, "write failed");
}

Image read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (magic != "Pf" && magic != "PF") fail(path, "not a PFM file");
  if (scale >= 0.0) fail(path, "big-endian PFM not supported");
  const int c = magic == "PF" ? 3 : 1;
  Image img(c, h, w);
  std::vector<float> row(static_cast<std::size_t>(w) * c);
  for (int i = h - 1; i >= 0; --i) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) fail(path, "truncated pixel data");
    for (int j = 0; j < w; ++j) {
      for (int ch = 0; ch < c; ++ch) img.at(ch, i, j) = row[static_cast<std::size_t>(j) * c + ch];
    }
  }
  return img;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(tmp, "cannot open for writing");
    out << text;
    if (!out) fail(tmp, "write failed");
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(path, std::string("invalid JSON: ") + e.what());
  }
}

void write_floats(const fs::path& path, std::span<const float> values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(tmp, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) fail(tmp, "write failed");
  }
  fs::rename(tmp, path);
}

std::vector<float> read_floats(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(path, "cannot open for reading");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) fail(path, "size is not a whole number of floats");
  std::vector<float> values(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) fail(path, "read failed");
  return values;
}

}  // namespace sfda::io
