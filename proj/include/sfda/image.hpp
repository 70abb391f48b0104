#pragma once

#include <concepts>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfda {

// Thrown when a transform or sampler receives a parameter outside its domain.
class ParameterDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Channels x height x width image in pixel space [0, 1], stored CHW.
template <std::floating_point T>
struct BasicImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  BasicImage() = default;
  BasicImage(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {
    if (c != 1 && c != 3) throw std::invalid_argument("image must have 1 or 3 channels");
    if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const BasicImage& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  T& at(int c, int i, int j) {
    return data[(static_cast<std::size_t>(c) * height + i) * width + j];
  }
  const T& at(int c, int i, int j) const {
    return data[(static_cast<std::size_t>(c) * height + i) * width + j];
  }

  template <std::floating_point U>
  BasicImage<U> cast() const {
    BasicImage<U> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const BasicImage&, const BasicImage&) = default;
};

using Image = BasicImage<float>;

inline std::string shape_of(int c, int h, int w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <std::floating_point T>
std::string shape_of(const BasicImage<T>& x) {
  return shape_of(x.channels, x.height, x.width);
}

}  // namespace sfda
