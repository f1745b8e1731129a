#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ueg/data.hpp"
#include "ueg/image.hpp"
#include "ueg/masks.hpp"
#include "ueg/model.hpp"

namespace ueg::metrics {

/// 10*log10(1/MSE) with unit peak; +infinity when the images are identical.
double psnr(const ImageRGB& y, const ImageRGB& yhat);
double ssim(const ImageRGB& y, const ImageRGB& yhat);
Plane ssim_map(const ImageRGB& y, const ImageRGB& yhat);
/// 8-bit grayscale; darker pixels mark lower SSIM.
void save_ssim_map(const Plane& map, const std::filesystem::path& path);

struct ExposureFractions {
  double under_in = 0.0;
  double under_out = 0.0;
  double over_in = 0.0;
  double over_out = 0.0;
};

/// Share of UNDER-labelled pixels still below t_low and of OVER-labelled pixels
/// still above t_high, measured on the input and on the output. A class with no
/// labelled pixels contributes 0.
ExposureFractions exposure_fraction_delta(const ImageRGB& input, const ImageRGB& output,
                                          const ExposureLabelMap& labels, double t_low, double t_high);

struct EvalRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  ExposureFractions fractions;
  double wall_ms = 0.0;
  std::string error;  // non-empty when the image failed
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  ExposureFractions fractions_mean;
  std::size_t evaluated = 0;
  std::size_t failed = 0;
  std::optional<double> wall_ms_mean;
  std::optional<double> peak_mem_mb;
};

/// JSON with "schema": 1. Infinite PSNR is written as the string "inf".
nlohmann::json to_json(const EvalReport& r);
std::string format_table(const EvalReport& r);

struct EvalOptions {
  /// When set, writes {id}_ssim.png per image.
  std::filesystem::path ssim_map_dir;
  /// When set, writes {id}_out.png per image.
  std::filesystem::path output_dir;
  /// Timing and memory fields vary between runs; off keeps the report reproducible.
  bool include_timing = true;
  int jobs = 1;
};

using Enhancer = std::function<ImageRGB(const ImageRGB& input, const ManifestEntry& entry)>;

EvalReport eval_dataset(const Enhancer& enhance, const DatasetManifest& manifest, const EvalOptions& opts = {});
EvalReport eval_dataset(const ModelState& state, const DatasetManifest& manifest, const EvalOptions& opts = {});

struct BenchRow {
  int height = 0;
  int width = 0;
  int repeats = 0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  int warmup = 0;
  double peak_rss_mb = 0.0;
};

/// Times forward passes on random inputs of each size after `warmup` untimed runs.
BenchReport bench_inference(const ModelState& state, const std::vector<std::pair<int, int>>& sizes, int repeats,
                            int warmup = 1, std::uint64_t seed = 0);
nlohmann::json to_json(const BenchReport& r);
std::string format_table(const BenchReport& r);
/// Returns an empty string when `j` is a valid bench report, else the first problem found.
std::string validate_bench_json(const nlohmann::json& j);
/// Returns an empty string when `j` is a valid eval report, else the first problem found.
std::string validate_eval_json(const nlohmann::json& j);

/// Process peak resident set size in megabytes (0 when unavailable).
double peak_rss_mb();

}  // namespace ueg::metrics
