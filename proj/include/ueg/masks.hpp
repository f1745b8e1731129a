#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ueg/image.hpp"

namespace ueg {

/// 256-bin luminance histogram; bin b covers [b/256, (b+1)/256).
struct Histogram256 {
  std::array<std::uint64_t, 256> counts{};

  std::uint64_t total() const;
  int populated_bins() const;
};

/// Per-pixel {0,1} mask.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;
};

enum class ExposureLabel : std::uint8_t { Correct = 0, Under = 1, Over = 2 };

struct ExposureLabelMap {
  int height = 0;
  int width = 0;
  std::vector<ExposureLabel> data;

  ExposureLabel at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const ExposureLabelMap&, const ExposureLabelMap&) = default;
};

struct ThresholdStats {
  std::vector<double> per_image_thresholds;
  double mean_threshold = 0.0;
  std::size_t count = 0;
};

void to_json(nlohmann::json& j, const ThresholdStats& s);
void from_json(const nlohmann::json& j, ThresholdStats& s);

struct TwoThresholds {
  double t_low = 0.0;
  double t_high = 0.0;
  /// Set when fewer than three bins are populated and single Otsu was used.
  bool degenerate = false;
};

/// Denoise chain applied before labeling.
struct MaskConfig {
  int downsample = 2;
  /// Blur sigma on the downsampled luminance; 0 disables the blur.
  double blur_sigma = 1.0;
  /// "binary" uses the dataset-average threshold, "mixed" per-image multi-Otsu.
  std::string mode = "mixed";

  friend bool operator==(const MaskConfig&, const MaskConfig&) = default;
};

void to_json(nlohmann::json& j, const MaskConfig& c);
void from_json(const nlohmann::json& j, MaskConfig& c);
void validate(const MaskConfig& c);

int histogram_bin(double v);
Histogram256 histogram(const LuminanceMap& lum);

/// Integer cut index t* (class 0 = bins <= t*) maximizing between-class variance.
int otsu_cut(const Histogram256& hist);
/// Returns (t*+1)/256.
double otsu_threshold(const Histogram256& hist);

/// Cut pair (t1 < t2) maximizing three-class between-class variance.
std::pair<int, int> multi_otsu_cuts(const Histogram256& hist);
TwoThresholds multi_otsu_two_thresholds(const Histogram256& hist);

ThresholdStats dataset_average_threshold(std::span<const LuminanceMap> lums);

BinaryMask otsu_binarize(const LuminanceMap& lum);
BinaryMask adaptive_block_threshold(const LuminanceMap& lum, int block);

/// Luminance after the configured downsample/blur chain, resized back to full extent.
LuminanceMap denoise_luminance(const LuminanceMap& lum, const MaskConfig& cfg);

ExposureLabelMap make_exposure_labels(const LuminanceMap& lum, double t_low, double t_high,
                                      const MaskConfig& cfg = {});
/// Binary variant: UNDER below the dataset-average threshold, CORRECT elsewhere.
ExposureLabelMap make_under_labels(const LuminanceMap& lum, double threshold, const MaskConfig& cfg = {});

/// Attention supervision: channel-major 2 x H x W buffer (under, over) of {0,1}.
struct AttentionTarget {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int channel, int y, int x) const {
    return data[(static_cast<std::size_t>(channel) * height + y) * width + x];
  }
};

AttentionTarget label_to_target_map(const ExposureLabelMap& labels);

/// PNG encoding: 0 = CORRECT, 128 = UNDER, 255 = OVER.
void save_label_map(const ExposureLabelMap& labels, const std::filesystem::path& path);
ExposureLabelMap load_label_map(const std::filesystem::path& path);

}  // namespace ueg
