#include "sfda/transforms.hpp"

#include <algorithm>
#include <limits>

namespace sfda {

std::string axis_name(Axis axis) {
  switch (axis) {
    case Axis::kRotation: return "rotation";
    case Axis::kBrightness: return "brightness";
    case Axis::kContrast: return "contrast";
  }
  return "unknown";
}

Axis parse_axis(const std::string& name) {
  if (name == "rotation") return Axis::kRotation;
  if (name == "brightness") return Axis::kBrightness;
  if (name == "contrast") return Axis::kContrast;
  throw std::invalid_argument("unknown axis '" + name + "' (expected rotation, brightness or contrast)");
}

double& TransformParams::operator[](Axis a) {
  switch (a) {
    case Axis::kRotation: return rotation_deg;
    case Axis::kBrightness: return brightness;
    case Axis::kContrast: return contrast;
  }
  throw std::logic_error("unknown axis");
}

double TransformParams::operator[](Axis a) const {
  return const_cast<TransformParams&>(*this)[a];
}

const AxisBounds& ParamSpace::bounds(Axis a) const {
  switch (a) {
    case Axis::kRotation: return rotation;
    case Axis::kBrightness: return brightness;
    case Axis::kContrast: return contrast;
  }
  throw std::logic_error("unknown axis");
}

bool ParamSpace::contains(const TransformParams& p) const {
  return std::ranges::all_of(kAllAxes, [&](Axis a) {
    const auto& b = bounds(a);
    return p[a] >= b.low && p[a] <= b.high;
  });
}

void ParamSpace::validate() const {
  for (Axis a : kAllAxes) {
    const auto& b = bounds(a);
    if (!(b.low < b.identity && b.identity < b.high)) {
      throw std::invalid_argument("parameter space axis " + axis_name(a) +
                                  " must satisfy low < identity < high");
    }
  }
  if (rotation.low < -180.0 || rotation.high > 180.0) {
    throw std::invalid_argument("rotation bounds must lie within [-180, 180]");
  }
  if (brightness.low < 0.0 || contrast.low < 0.0) {
    throw std::invalid_argument("brightness and contrast bounds must be non-negative");
  }
}

TransformParams clamp_params(const std::array<double, 3>& raw, const ParamSpace& space) {
  TransformParams p = TransformParams::from_array(raw);
  for (Axis a : kAllAxes) {
    const auto& b = space.bounds(a);
    p[a] = std::clamp(p[a], b.low, b.high);
  }
  return p;
}

AxisBounds forward_domain(Axis axis) {
  switch (axis) {
    case Axis::kRotation: return {-180.0, 180.0, 0.0};
    case Axis::kBrightness:
    case Axis::kContrast: return {0.0, std::numeric_limits<double>::infinity(), 1.0};
  }
  throw std::logic_error("unknown axis");
}

}  // namespace sfda
