#include "ueg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ueg/errors.hpp"

namespace ueg {

ImageRGB load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("image not found: '" + path.string() + "'");
  }
  const Bitmap8 bmp = read_png(path);
  ImageRGB img(bmp.height, bmp.width);
  auto dst = img.data();
  if (bmp.channels == 3) {
    for (std::size_t i = 0; i < bmp.bytes.size(); ++i) {
      dst[i] = bmp.bytes[i] / 255.0;
    }
  } else {
    for (std::size_t i = 0; i < bmp.bytes.size(); ++i) {
      const double v = bmp.bytes[i] / 255.0;
      dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = v;
    }
  }
  return img;
}

std::uint8_t quantize_byte(double v) {
  const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

ImageRGB quantize(const ImageRGB& img) {
  ImageRGB out = img;
  for (double& v : out.data()) {
    v = quantize_byte(v) / 255.0;
  }
  return out;
}

void save_image(const ImageRGB& img, const std::filesystem::path& path) {
  Bitmap8 bmp{img.height(), img.width(), 3, {}};
  bmp.bytes.reserve(img.data().size());
  for (double v : img.data()) {
    bmp.bytes.push_back(quantize_byte(v));
  }
  write_png(bmp, path);
}

Plane load_plane(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("map not found: '" + path.string() + "'");
  }
  const Bitmap8 bmp = read_png(path);
  if (bmp.channels != 1) {
    throw IoError("'" + path.string() + "': expected a grayscale PNG");
  }
  Plane out(bmp.height, bmp.width);
  auto dst = out.data();
  for (std::size_t i = 0; i < bmp.bytes.size(); ++i) {
    dst[i] = bmp.bytes[i] / 255.0;
  }
  return out;
}

void save_plane(const Plane& plane, const std::filesystem::path& path) {
  Bitmap8 bmp{plane.height(), plane.width(), 1, {}};
  bmp.bytes.reserve(plane.pixels());
  for (double v : plane.data()) {
    bmp.bytes.push_back(quantize_byte(v));
  }
  write_png(bmp, path);
}

LuminanceMap rgb_to_luminance(const ImageRGB& img) {
  LuminanceMap lum(img.height(), img.width());
  const auto src = img.data();
  auto dst = lum.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double y = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] + 0.114 * src[3 * i + 2];
    dst[i] = std::clamp(y, 0.0, 1.0);
  }
  return lum;
}

LuminanceMap invert_luminance(const LuminanceMap& lum) {
  LuminanceMap out = lum;
  for (double& v : out.data()) {
    v = 1.0 - v;
  }
  return out;
}

namespace {

void check_factor(int factor, int height, int width) {
  if (factor < 1) {
    throw std::invalid_argument("downsample_nearest: factor must be >= 1");
  }
  if (factor > height || factor > width) {
    throw std::invalid_argument("downsample_nearest: factor " + std::to_string(factor) +
                                " exceeds image extent " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
}

}  // namespace

ImageRGB downsample_nearest(const ImageRGB& img, int factor) {
  check_factor(factor, img.height(), img.width());
  ImageRGB out(img.height() / factor, img.width() / factor);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = img.at(y * factor, x * factor, c);
      }
    }
  }
  return out;
}

Plane downsample_nearest(const Plane& plane, int factor) {
  check_factor(factor, plane.height(), plane.width());
  Plane out(plane.height() / factor, plane.width() / factor);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out.at(y, x) = plane.at(y * factor, x * factor);
    }
  }
  return out;
}

Plane upsample_nearest(const Plane& plane, int height, int width) {
  Plane out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(plane.height() - 1, static_cast<int>(static_cast<long>(y) * plane.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(plane.width() - 1, static_cast<int>(static_cast<long>(x) * plane.width() / width));
      out.at(y, x) = plane.at(sy, sx);
    }
  }
  return out;
}

int reflect_index(int i, int n) {
  if (n == 1) {
    return 0;
  }
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) {
    i += period;
  }
  return i < n ? i : period - i;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("gaussian kernel: sigma must be positive");
  }
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    total += taps[k + radius];
  }
  for (double& t : taps) {
    t /= total;
  }
  return taps;
}

namespace {

int blur_radius(double sigma) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("gaussian_blur: sigma must be positive, got " + std::to_string(sigma));
  }
  return static_cast<int>(std::ceil(3.0 * sigma));
}

// Separable pass over a strided set of channels.
void filter_channels(std::span<double> data, int height, int width, int channels,
                     const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(data.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int sx = reflect_index(x + k, width);
          acc += taps[k + radius] * data[(static_cast<std::size_t>(y) * width + sx) * channels + c];
        }
        tmp[(static_cast<std::size_t>(y) * width + x) * channels + c] = acc;
      }
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int sy = reflect_index(y + k, height);
          acc += taps[k + radius] * tmp[(static_cast<std::size_t>(sy) * width + x) * channels + c];
        }
        data[(static_cast<std::size_t>(y) * width + x) * channels + c] = acc;
      }
    }
  }
}

}  // namespace

ImageRGB gaussian_blur(const ImageRGB& img, double sigma) {
  const auto taps = gaussian_kernel(sigma, blur_radius(sigma));
  ImageRGB out = img;
  filter_channels(out.data(), out.height(), out.width(), 3, taps);
  for (double& v : out.data()) {
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Plane gaussian_blur(const Plane& plane, double sigma) {
  return gaussian_filter(plane, sigma, blur_radius(sigma));
}

Plane gaussian_filter(const Plane& plane, double sigma, int radius) {
  const auto taps = gaussian_kernel(sigma, radius);
  Plane out = plane;
  filter_channels(out.data(), out.height(), out.width(), 1, taps);
  return out;
}

ImageRGB apply_gamma(const ImageRGB& img, double gamma) {
  if (!(gamma > 0.0)) {
    throw std::invalid_argument("apply_gamma: gamma must be positive");
  }
  ImageRGB out = img;
  for (double& v : out.data()) {
    v = v <= 0.0 ? 0.0 : std::pow(v, gamma);
  }
  return out;
}

ImageRGB apply_color_matrix(const ImageRGB& img, const ColorMatrix& m) {
  ImageRGB out(img.height(), img.width());
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    for (int r = 0; r < 3; ++r) {
      const double v = m[r][0] * src[3 * i] + m[r][1] * src[3 * i + 1] + m[r][2] * src[3 * i + 2];
      dst[3 * i + r] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

ImageRGB flip_horizontal(const ImageRGB& img) {
  ImageRGB out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
      }
    }
  }
  return out;
}

}  // namespace ueg
