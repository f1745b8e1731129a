#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ueg/image.hpp"

namespace ueg {

using ColorMatrix = std::array<std::array<double, 3>, 3>;

/// Raw 8-bit raster as stored in a PNG file; channels is 1 or 3.
struct Bitmap8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

Bitmap8 read_png(const std::filesystem::path& path);
void write_png(const Bitmap8& bitmap, const std::filesystem::path& path);

/// Decodes an 8-bit RGB or grayscale PNG; values are byte/255.
ImageRGB load_image(const std::filesystem::path& path);
/// Encodes with round-half-away-from-zero quantization to 8 bits.
void save_image(const ImageRGB& img, const std::filesystem::path& path);

/// Single-channel 8-bit PNG helpers for maps (luminance, SSIM maps).
Plane load_plane(const std::filesystem::path& path);
void save_plane(const Plane& plane, const std::filesystem::path& path);

std::uint8_t quantize_byte(double v);
ImageRGB quantize(const ImageRGB& img);

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B.
LuminanceMap rgb_to_luminance(const ImageRGB& img);
LuminanceMap invert_luminance(const LuminanceMap& lum);

ImageRGB downsample_nearest(const ImageRGB& img, int factor);
Plane downsample_nearest(const Plane& plane, int factor);
/// Nearest-neighbour resize back to an arbitrary extent.
Plane upsample_nearest(const Plane& plane, int height, int width);

/// Maps an out-of-range index onto [0, n) by mirror reflection without edge repeat.
int reflect_index(int i, int n);
/// Normalized 1-D Gaussian taps of length 2*radius+1.
std::vector<double> gaussian_kernel(double sigma, int radius);

/// Separable Gaussian blur, radius ceil(3 sigma), reflect padding.
ImageRGB gaussian_blur(const ImageRGB& img, double sigma);
Plane gaussian_blur(const Plane& plane, double sigma);
/// Same as above with an explicit radius.
Plane gaussian_filter(const Plane& plane, double sigma, int radius);

ImageRGB apply_gamma(const ImageRGB& img, double gamma);
/// Replaces every pixel p with clamp(W p, 0, 1).
ImageRGB apply_color_matrix(const ImageRGB& img, const ColorMatrix& matrix);

ImageRGB flip_horizontal(const ImageRGB& img);

}  // namespace ueg
