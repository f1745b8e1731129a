#include <cmath>
#include <stdexcept>
#include <fstream>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "ueg/errors.hpp"
#include "ueg/imaging.hpp"
#include "ueg/rng.hpp"
#include "unit/test_util.hpp"

using namespace ueg;
using ueg::testing::random_image;
using ueg::testing::TempDir;

namespace {

ImageRGB pixel(double r, double g, double b) {
  ImageRGB img(1, 1);
  img.at(0, 0, 0) = r;
  img.at(0, 0, 1) = g;
  img.at(0, 0, 2) = b;
  return img;
}

void write_rgb_byte(const std::filesystem::path& p, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Bitmap8 bmp{1, 1, 3, {r, g, b}};
  write_png(bmp, p);
}

}  // namespace

TEST(LoadImage, ByteValuesDivideBy255) {
  TempDir dir("imaging");
  write_rgb_byte(dir / "w.png", 255, 255, 255);
  write_rgb_byte(dir / "k.png", 0, 0, 0);
  write_rgb_byte(dir / "c.png", 128, 64, 32);
  const auto w = load_image(dir / "w.png");
  const auto k = load_image(dir / "k.png");
  const auto c = load_image(dir / "c.png");
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_EQ(w.at(0, 0, ch), 1.0);
    EXPECT_EQ(k.at(0, 0, ch), 0.0);
  }
  EXPECT_EQ(c.at(0, 0, 0), 128.0 / 255.0);
  EXPECT_EQ(c.at(0, 0, 1), 64.0 / 255.0);
  EXPECT_EQ(c.at(0, 0, 2), 32.0 / 255.0);
}

TEST(LoadImage, GrayIsPromotedToRgb) {
  TempDir dir("imaging");
  write_png(Bitmap8{1, 2, 1, {10, 200}}, dir / "g.png");
  const auto img = load_image(dir / "g.png");
  ASSERT_EQ(img.width(), 2);
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_EQ(img.at(0, 0, ch), 10.0 / 255.0);
    EXPECT_EQ(img.at(0, 1, ch), 200.0 / 255.0);
  }
}

TEST(LoadImage, MissingFileAndGarbageAreIoErrors) {
  TempDir dir("imaging");
  EXPECT_THROW(load_image(dir / "nope.png"), IoError);
  {
    std::ofstream f(dir / "bad.png");
    f << "not a png";
  }
  EXPECT_THROW(load_image(dir / "bad.png"), IoError);
}

TEST(SaveImage, RoundTripEqualsQuantize) {
  TempDir dir("imaging");
  const auto img = random_image(7, 5, 3);
  save_image(img, dir / "r.png");
  EXPECT_EQ(load_image(dir / "r.png"), quantize(img));
  const auto q = quantize(img);
  save_image(q, dir / "q.png");
  EXPECT_EQ(load_image(dir / "q.png"), q);
}

TEST(SaveImage, HalfRoundsAwayFromZero) {
  EXPECT_EQ(quantize_byte(0.5), 128);
  EXPECT_EQ(quantize_byte(1.0), 255);
  EXPECT_EQ(quantize_byte(0.0), 0);
  EXPECT_EQ(quantize_byte(1.5 / 255.0), 2);
  TempDir dir("imaging");
  save_image(pixel(0.5, 1.0, 0.0), dir / "p.png");
  const auto back = load_image(dir / "p.png");
  EXPECT_EQ(back.at(0, 0, 0), 128.0 / 255.0);
  EXPECT_EQ(back.at(0, 0, 1), 1.0);
}

TEST(SaveImage, UnwritablePathThrows) {
  EXPECT_THROW(save_image(pixel(0, 0, 0), "/nonexistent_dir_ueg/x.png"), IoError);
}

TEST(Luminance, Examples) {
  EXPECT_NEAR(rgb_to_luminance(pixel(1, 1, 1)).at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(rgb_to_luminance(pixel(1, 0, 0)).at(0, 0), 0.299, 1e-12);
  EXPECT_NEAR(rgb_to_luminance(pixel(0.5, 0.5, 0.0)).at(0, 0), 0.443, 1e-12);
}

TEST(Luminance, GrayPixelMapsToItsValue) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.uniform();
    EXPECT_NEAR(rgb_to_luminance(pixel(v, v, v)).at(0, 0), v, 1e-7);
  }
}

TEST(Luminance, Invert) {
  Plane p(1, 3);
  p.at(0, 0) = 0.0;
  p.at(0, 1) = 1.0;
  p.at(0, 2) = 0.25;
  const auto q = invert_luminance(p);
  EXPECT_EQ(q.at(0, 0), 1.0);
  EXPECT_EQ(q.at(0, 1), 0.0);
  EXPECT_EQ(q.at(0, 2), 0.75);
}

TEST(Downsample, Examples) {
  const auto img = random_image(4, 4, 5);
  EXPECT_EQ(downsample_nearest(img, 1), img);
  const auto d = downsample_nearest(img, 2);
  ASSERT_EQ(d.height(), 2);
  ASSERT_EQ(d.width(), 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(d.at(y, x, c), img.at(2 * y, 2 * x, c));
  const auto small = random_image(3, 3, 6);
  const auto s = downsample_nearest(small, 2);
  ASSERT_EQ(s.height(), 1);
  ASSERT_EQ(s.width(), 1);
  EXPECT_EQ(s.at(0, 0, 1), small.at(0, 0, 1));
}

TEST(Downsample, FactorTooLargeOrZeroThrows) {
  const auto img = random_image(4, 6, 5);
  EXPECT_THROW(downsample_nearest(img, 5), std::invalid_argument);
  EXPECT_THROW(downsample_nearest(img, 0), std::invalid_argument);
}

TEST(Downsample, ComposesMultiplicatively) {
  const auto img = random_image(24, 36, 8);
  EXPECT_EQ(downsample_nearest(downsample_nearest(img, 2), 3), downsample_nearest(img, 6));
  EXPECT_EQ(downsample_nearest(downsample_nearest(img, 3), 2), downsample_nearest(img, 6));
}

TEST(Blur, ConstantImageUnchanged) {
  const ImageRGB img(9, 13, 0.37);
  const auto b = gaussian_blur(img, 1.7);
  for (double v : b.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Blur, HotPixelMatchesDenseConvolution) {
  const int n = 21, c = 10;
  const double sigma = 1.3;
  ImageRGB img(n, n, 0.0);
  img.at(c, c, 0) = 1.0;
  const auto b = gaussian_blur(img, sigma);
  const int r = static_cast<int>(std::ceil(3 * sigma));
  double norm = 0;
  for (int i = -r; i <= r; ++i) norm += std::exp(-i * i / (2 * sigma * sigma));
  double mass = 0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int dy = y - c, dx = x - c;
      double expect = 0;
      if (std::abs(dy) <= r && std::abs(dx) <= r) {
        expect = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) / (norm * norm);
      }
      EXPECT_NEAR(b.at(y, x, 0), expect, 1e-12);
      EXPECT_EQ(b.at(y, x, 1), 0.0);
      mass += b.at(y, x, 0);
    }
  }
  EXPECT_NEAR(mass, 1.0, 1e-6);
}

TEST(Blur, CommutesWithHorizontalFlip) {
  const auto img = random_image(10, 17, 9);
  const auto a = gaussian_blur(flip_horizontal(img), 1.1);
  const auto b = flip_horizontal(gaussian_blur(img, 1.1));
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-14);
}

TEST(Blur, ReflectPaddingMatchesOracle) {
  const auto img = random_image(6, 7, 10);
  const double sigma = 0.9;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  const auto b = gaussian_blur(img, sigma);
  double norm = 0;
  for (int i = -r; i <= r; ++i) norm += std::exp(-i * i / (2 * sigma * sigma));
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 7; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j)
          s += std::exp(-(i * i + j * j) / (2 * sigma * sigma)) / (norm * norm) *
               img.at(oracle::reflect(y + i, 6), oracle::reflect(x + j, 7), 2);
      EXPECT_NEAR(b.at(y, x, 2), s, 1e-12);
    }
  }
}

TEST(Blur, NonPositiveSigmaThrows) {
  const auto img = random_image(4, 4, 1);
  EXPECT_THROW(gaussian_blur(img, 0.0), std::invalid_argument);
  EXPECT_THROW(gaussian_blur(img, -1.0), std::invalid_argument);
}

TEST(Gamma, Examples) {
  const auto img = random_image(3, 4, 2);
  EXPECT_EQ(apply_gamma(img, 1.0), img);
  EXPECT_NEAR(apply_gamma(pixel(0.25, 0.25, 0.25), 0.5).at(0, 0, 0), 0.5, 1e-15);
  for (double g : {0.3, 1.0, 2.7}) EXPECT_EQ(apply_gamma(pixel(1, 1, 1), g).at(0, 0, 1), 1.0);
  EXPECT_EQ(apply_gamma(pixel(0, 0, 0), 0.4).at(0, 0, 0), 0.0);
}

TEST(Gamma, Monotone) {
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    if (a > b) std::swap(a, b);
    const double g = rng.uniform(0.2, 4.0);
    const auto out = apply_gamma(pixel(a, b, a), g);
    EXPECT_LE(out.at(0, 0, 0), out.at(0, 0, 1));
  }
}

TEST(ColorMatrix, Examples) {
  const ColorMatrix id{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const auto img = random_image(3, 3, 4);
  EXPECT_EQ(apply_color_matrix(img, id), img);
  const ColorMatrix two{{{2, 0, 0}, {0, 2, 0}, {0, 0, 2}}};
  const auto sat = apply_color_matrix(pixel(0.6, 0.6, 0.6), two);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(sat.at(0, 0, c), 1.0);
  const ColorMatrix swap{{{0, 0, 1}, {0, 1, 0}, {1, 0, 0}}};
  const auto s = apply_color_matrix(pixel(1, 0, 0), swap);
  EXPECT_EQ(s.at(0, 0, 0), 0.0);
  EXPECT_EQ(s.at(0, 0, 1), 0.0);
  EXPECT_EQ(s.at(0, 0, 2), 1.0);
}

TEST(Imaging, OutputsStayInUnitRange) {
  Rng rng(33);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(9, 11, 100 + t);
    ColorMatrix m;
    for (auto& row : m)
      for (double& v : row) v = rng.uniform(-1.5, 1.5);
    EXPECT_TRUE(apply_color_matrix(img, m).in_unit_range());
    EXPECT_TRUE(apply_gamma(img, rng.uniform(0.1, 5.0)).in_unit_range());
    EXPECT_TRUE(gaussian_blur(img, rng.uniform(0.3, 3.0)).in_unit_range());
    EXPECT_TRUE(downsample_nearest(img, 2).in_unit_range());
    const auto lum = rgb_to_luminance(img);
    for (double v : lum.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Imaging, PlanePngRoundTrip) {
  TempDir dir("imaging");
  Plane p(2, 2);
  p.at(0, 0) = 0.0;
  p.at(0, 1) = 0.5;
  p.at(1, 0) = 1.0;
  p.at(1, 1) = 0.2;
  save_plane(p, dir / "p.png");
  const auto q = load_plane(dir / "p.png");
  EXPECT_EQ(q.at(0, 1), 128.0 / 255.0);
  EXPECT_EQ(q.at(1, 0), 1.0);
  EXPECT_EQ(q.at(1, 1), 51.0 / 255.0);
}
