#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ueg {

/// H x W x 3 interleaved image with intensities in [0,1].
class ImageRGB {
public:
  ImageRGB() = default;
  ImageRGB(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// True when every element lies in [0,1].
  bool in_unit_range() const;

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Single-channel H x W map. Used for luminance, inverse luminance and SSIM maps.
class Plane {
public:
  Plane() = default;
  Plane(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Plane&, const Plane&) = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

using LuminanceMap = Plane;

}  // namespace ueg
