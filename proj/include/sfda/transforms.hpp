#pragma once

// Differentiable parametric image transforms (brightness, contrast, rotation)
// and the composed backward transform r ∘ b ∘ c. All functions are pure and
// templated on the pixel scalar so gradient checks can run in double.
//
// Gradients are analytic. Pixel clamps pass the gradient only where the
// pre-clamp value lies inside [0, 1]; rotation differentiates the bilinear
// sampling grid and treats out-of-support neighbours as constant zero.

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "sfda/image.hpp"

namespace sfda {

enum class Axis { kRotation = 0, kBrightness = 1, kContrast = 2 };

inline constexpr std::array<Axis, 3> kAllAxes = {Axis::kRotation, Axis::kBrightness,
                                                 Axis::kContrast};

std::string axis_name(Axis axis);
Axis parse_axis(const std::string& name);

// Parameter triple of one backward transform, in (rotation, brightness,
// contrast) order when viewed as an array.
struct TransformParams {
  double rotation_deg = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;

  static TransformParams identity() { return {}; }
  static TransformParams from_array(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
  std::array<double, 3> to_array() const { return {rotation_deg, brightness, contrast}; }
  double& operator[](Axis a);
  double operator[](Axis a) const;

  friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

struct AxisBounds {
  double low;
  double high;
  double identity;
};

// Operational bounds of the backward-transform parameter space.
struct ParamSpace {
  AxisBounds rotation{-180.0, 180.0, 0.0};
  AxisBounds brightness{0.05, 4.0, 1.0};
  AxisBounds contrast{0.05, 4.0, 1.0};

  static ParamSpace standard() { return {}; }
  const AxisBounds& bounds(Axis a) const;
  bool contains(const TransformParams& p) const;
  void validate() const;
};

TransformParams clamp_params(const std::array<double, 3>& raw,
                             const ParamSpace& space = ParamSpace::standard());

// Forward-shift parameter domains: brightness and contrast on [0, inf),
// rotation on [-180, 180].
AxisBounds forward_domain(Axis axis);

namespace detail {

inline void require_nonnegative(double p, const char* who) {
  if (!(p >= 0.0)) {
    throw ParameterDomainError(std::string(who) + ": factor must be >= 0, got " +
                               std::to_string(p));
  }
}

inline void require_rotation(double deg) {
  if (!(deg >= -180.0 && deg <= 180.0)) {
    throw ParameterDomainError("rotation: angle must lie in [-180, 180], got " +
                               std::to_string(deg));
  }
}

template <typename T>
T clamp01(double v) {
  return static_cast<T>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
}

inline bool inside01(double v) { return v >= 0.0 && v <= 1.0; }

template <typename T>
void require_same_shape(const BasicImage<T>& a, const BasicImage<T>& b, const char* who) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_of(a) + " vs " +
                                shape_of(b));
  }
}

// cos/sin of an angle in degrees, exact at multiples of 90.
inline std::array<double, 2> cos_sin_deg(double deg) {
  const double q = deg / 90.0;
  if (q == std::floor(q)) {
    switch (((static_cast<long>(q) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  const double rad = deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

// Bilinear sample position in the source image for output pixel (i, j).
struct RotationGrid {
  double c, s, ci, cj;
  RotationGrid(double deg, int h, int w) {
    const auto cs = cos_sin_deg(deg);
    c = cs[0];
    s = cs[1];
    ci = (h - 1) / 2.0;
    cj = (w - 1) / 2.0;
  }
  // Returns (sample_x, sample_y) = (column, row).
  std::array<double, 2> source(int i, int j) const {
    const double u = j - cj, v = i - ci;
    return {cj + u * c - v * s, ci + u * s + v * c};
  }
  // d(source)/d(angle in degrees).
  std::array<double, 2> source_derivative(int i, int j) const {
    const double u = j - cj, v = i - ci;
    constexpr double k = std::numbers::pi / 180.0;
    return {k * (-u * s - v * c), k * (u * c - v * s)};
  }
};

struct Bilinear {
  int x0, y0;
  double fx, fy;
  explicit Bilinear(const std::array<double, 2>& p) {
    const double fx0 = std::floor(p[0]), fy0 = std::floor(p[1]);
    x0 = static_cast<int>(fx0);
    y0 = static_cast<int>(fy0);
    fx = p[0] - fx0;
    fy = p[1] - fy0;
  }
};

template <typename T>
double pixel_or_zero(const BasicImage<T>& x, int c, int i, int j) {
  if (i < 0 || j < 0 || i >= x.height || j >= x.width) return 0.0;
  return static_cast<double>(x.at(c, i, j));
}

}  // namespace detail

// Mean luminance: pixel mean for grayscale, mean of 0.299R + 0.587G + 0.114B
// for RGB.
template <std::floating_point T>
double mean_luminance(const BasicImage<T>& x) {
  const std::size_t plane = x.plane();
  double sum = 0.0;
  if (x.channels == 1) {
    for (T v : x.data) sum += v;
  } else {
    for (std::size_t k = 0; k < plane; ++k) {
      sum += 0.299 * x.data[k] + 0.587 * x.data[plane + k] + 0.114 * x.data[2 * plane + k];
    }
  }
  return sum / static_cast<double>(plane);
}

// ------------------------------------------------------------------ brightness

template <std::floating_point T>
BasicImage<T> apply_brightness(const BasicImage<T>& x, double p) {
  detail::require_nonnegative(p, "brightness");
  BasicImage<T> y = x;
  if (p == 1.0) return y;
  for (T& v : y.data) v = detail::clamp01<T>(p * static_cast<double>(v));
  return y;
}

template <std::floating_point T>
double brightness_param_grad(const BasicImage<T>& x, double p, const BasicImage<T>& grad_out) {
  detail::require_same_shape(x, grad_out, "brightness_param_grad");
  double g = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double v = x.data[k];
    if (detail::inside01(p * v)) g += grad_out.data[k] * v;
  }
  return g;
}

template <std::floating_point T>
BasicImage<T> brightness_input_grad(const BasicImage<T>& x, double p,
                                    const BasicImage<T>& grad_out) {
  detail::require_same_shape(x, grad_out, "brightness_input_grad");
  BasicImage<T> dx = grad_out;
  for (std::size_t k = 0; k < x.size(); ++k) {
    dx.data[k] = detail::inside01(p * x.data[k]) ? static_cast<T>(p * grad_out.data[k]) : T(0);
  }
  return dx;
}

// -------------------------------------------------------------------- contrast

template <std::floating_point T>
BasicImage<T> apply_contrast(const BasicImage<T>& x, double p) {
  detail::require_nonnegative(p, "contrast");
  BasicImage<T> y = x;
  if (p == 1.0) return y;
  const double m = mean_luminance(x);
  for (T& v : y.data) v = detail::clamp01<T>(m + p * (static_cast<double>(v) - m));
  return y;
}

// The luminance mean is held constant with respect to p.
template <std::floating_point T>
double contrast_param_grad(const BasicImage<T>& x, double p, const BasicImage<T>& grad_out) {
  detail::require_same_shape(x, grad_out, "contrast_param_grad");
  const double m = mean_luminance(x);
  double g = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = static_cast<double>(x.data[k]) - m;
    if (detail::inside01(m + p * d)) g += grad_out.data[k] * d;
  }
  return g;
}

// -------------------------------------------------------------------- rotation

// Counter-clockwise rotation about ((H-1)/2, (W-1)/2) by inverse mapping with
// bilinear interpolation; samples outside the image read as 0.
template <std::floating_point T>
BasicImage<T> apply_rotation(const BasicImage<T>& x, double deg) {
  detail::require_rotation(deg);
  if (deg == 0.0) return x;
  BasicImage<T> y(x.channels, x.height, x.width);
  const detail::RotationGrid grid(deg, x.height, x.width);
  for (int i = 0; i < x.height; ++i) {
    for (int j = 0; j < x.width; ++j) {
      const detail::Bilinear b(grid.source(i, j));
      const double w00 = (1 - b.fx) * (1 - b.fy), w01 = b.fx * (1 - b.fy);
      const double w10 = (1 - b.fx) * b.fy, w11 = b.fx * b.fy;
      for (int c = 0; c < x.channels; ++c) {
        double v = 0.0;
        if (w00 != 0.0) v += w00 * detail::pixel_or_zero(x, c, b.y0, b.x0);
        if (w01 != 0.0) v += w01 * detail::pixel_or_zero(x, c, b.y0, b.x0 + 1);
        if (w10 != 0.0) v += w10 * detail::pixel_or_zero(x, c, b.y0 + 1, b.x0);
        if (w11 != 0.0) v += w11 * detail::pixel_or_zero(x, c, b.y0 + 1, b.x0 + 1);
        y.at(c, i, j) = static_cast<T>(v);
      }
    }
  }
  return y;
}

template <std::floating_point T>
double rotation_param_grad(const BasicImage<T>& x, double deg, const BasicImage<T>& grad_out) {
  detail::require_same_shape(x, grad_out, "rotation_param_grad");
  const detail::RotationGrid grid(deg, x.height, x.width);
  double g = 0.0;
  for (int i = 0; i < x.height; ++i) {
    for (int j = 0; j < x.width; ++j) {
      const detail::Bilinear b(grid.source(i, j));
      const auto ds = grid.source_derivative(i, j);
      for (int c = 0; c < x.channels; ++c) {
        const double v00 = detail::pixel_or_zero(x, c, b.y0, b.x0);
        const double v01 = detail::pixel_or_zero(x, c, b.y0, b.x0 + 1);
        const double v10 = detail::pixel_or_zero(x, c, b.y0 + 1, b.x0);
        const double v11 = detail::pixel_or_zero(x, c, b.y0 + 1, b.x0 + 1);
        const double dx = (1 - b.fy) * (v01 - v00) + b.fy * (v11 - v10);
        const double dy = (1 - b.fx) * (v10 - v00) + b.fx * (v11 - v01);
        g += grad_out.at(c, i, j) * (dx * ds[0] + dy * ds[1]);
      }
    }
  }
  return g;
}

// Adjoint of the bilinear sampling: scatters the output gradient back onto
// the source pixels.
template <std::floating_point T>
BasicImage<T> rotation_input_grad(const BasicImage<T>& grad_out, double deg) {
  if (deg == 0.0) return grad_out;
  BasicImage<T> dx(grad_out.channels, grad_out.height, grad_out.width);
  const int h = grad_out.height, w = grad_out.width;
  const detail::RotationGrid grid(deg, h, w);
  auto scatter = [&](int c, int i, int j, double v) {
    if (i >= 0 && j >= 0 && i < h && j < w) dx.at(c, i, j) += static_cast<T>(v);
  };
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const detail::Bilinear b(grid.source(i, j));
      const double w00 = (1 - b.fx) * (1 - b.fy), w01 = b.fx * (1 - b.fy);
      const double w10 = (1 - b.fx) * b.fy, w11 = b.fx * b.fy;
      for (int c = 0; c < grad_out.channels; ++c) {
        const double g = grad_out.at(c, i, j);
        if (g == 0.0) continue;
        scatter(c, b.y0, b.x0, w00 * g);
        scatter(c, b.y0, b.x0 + 1, w01 * g);
        scatter(c, b.y0 + 1, b.x0, w10 * g);
        scatter(c, b.y0 + 1, b.x0 + 1, w11 * g);
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------ backward transform

// g_p = rotation ∘ brightness ∘ contrast. forward() records the intermediate
// images so that param_gradient() can backpropagate an output gradient to
// the three parameters.
template <std::floating_point T>
class BackwardTransform {
 public:
  BasicImage<T> forward(const BasicImage<T>& x, const TransformParams& p) {
    params_ = p;
    input_ = x;
    contrasted_ = apply_contrast(x, p.contrast);
    brightened_ = apply_brightness(contrasted_, p.brightness);
    return apply_rotation(brightened_, p.rotation_deg);
  }

  // d(<grad_out, output>)/d(params), as a (rotation, brightness, contrast)
  // triple.
  TransformParams param_gradient(const BasicImage<T>& grad_out) const {
    TransformParams g{0.0, 0.0, 0.0};
    g.rotation_deg = rotation_param_grad(brightened_, params_.rotation_deg, grad_out);
    const BasicImage<T> g_bright = rotation_input_grad(grad_out, params_.rotation_deg);
    g.brightness = brightness_param_grad(contrasted_, params_.brightness, g_bright);
    const BasicImage<T> g_contrast =
        brightness_input_grad(contrasted_, params_.brightness, g_bright);
    g.contrast = contrast_param_grad(input_, params_.contrast, g_contrast);
    return g;
  }

 private:
  TransformParams params_;
  BasicImage<T> input_, contrasted_, brightened_;
};

template <std::floating_point T>
BasicImage<T> apply_backward_transform(const BasicImage<T>& x, const TransformParams& p,
                                       const ParamSpace& space = ParamSpace::standard()) {
  if (!space.contains(p)) {
    throw ParameterDomainError("backward transform parameters (" +
                               std::to_string(p.rotation_deg) + ", " +
                               std::to_string(p.brightness) + ", " +
                               std::to_string(p.contrast) + ") outside the parameter space");
  }
  return apply_rotation(apply_brightness(apply_contrast(x, p.contrast), p.brightness),
                        p.rotation_deg);
}

// Applies a single forward transform along one axis.
template <std::floating_point T>
BasicImage<T> apply_axis(const BasicImage<T>& x, Axis axis, double p) {
  switch (axis) {
    case Axis::kRotation: return apply_rotation(x, p);
    case Axis::kBrightness: return apply_brightness(x, p);
    case Axis::kContrast: return apply_contrast(x, p);
  }
  throw std::logic_error("unknown axis");
}

}  // namespace sfda
