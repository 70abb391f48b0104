#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfda/image.hpp"

namespace sfda::io {

// Portable float map: lossless float32, "Pf" for one channel, "PF" for RGB.
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

// Writes through a temporary sibling and renames, so readers never observe a
// partial file.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

void write_floats(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_floats(const std::filesystem::path& path);

}  // namespace sfda::io
