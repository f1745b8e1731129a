#include "ueg/image.hpp"

#include <algorithm>
#include <stdexcept>

namespace ueg {

ImageRGB::ImageRGB(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw std::invalid_argument("ImageRGB: dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

bool ImageRGB::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

Plane::Plane(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw std::invalid_argument("Plane: dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

}  // namespace ueg
