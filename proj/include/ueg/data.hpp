#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ueg/image.hpp"
#include "ueg/masks.hpp"
#include "ueg/rng.hpp"

namespace ueg {

struct ManifestEntry {
  std::string id;
  std::filesystem::path input;
  std::filesystem::path target;
  std::filesystem::path mask;   // empty until precompute_masks
  std::filesystem::path illum;  // empty until precompute_illum
  /// Label thresholds used for this entry's mask.
  double t_low = 0.0;
  double t_high = 0.0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::optional<double> mean_threshold;
  std::string mask_mode;
  std::uint64_t seed = 0;
  /// Files present on only one side of the pairing.
  std::vector<std::string> unpaired;

  bool has_masks() const;
  bool has_illum() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
/// Relative paths resolve against the manifest's directory; every listed file must exist.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Pairs PNG files by identical filename. Unpaired names are recorded and skipped.
DatasetManifest scan_paired_dir(const std::filesystem::path& low_dir, const std::filesystem::path& high_dir);

struct SynthConfig {
  std::string mode = "grad";  // under | over | grad | mix
  std::pair<double, double> gain_range{0.25, 2.5};
  std::pair<double, double> gamma_range{0.5, 2.2};
  std::string grad_axis = "horizontal";  // horizontal | vertical
  int tiles = 4;
  std::uint64_t seed = 0;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void validate(const SynthConfig& c);

/// Exposure parameters: out = clamp((gain * v)^gamma).
struct ExposureParams {
  double gain = 1.0;
  double gamma = 1.0;
};

ExposureParams draw_under(const SynthConfig& cfg, Rng& rng);
ExposureParams draw_over(const SynthConfig& cfg, Rng& rng);
double expose(double v, const ExposureParams& p);

ImageRGB synth_degrade(const ImageRGB& clean, const SynthConfig& cfg);

struct Rect {
  int y0, x0, y1, x1;  // half-open
};
/// Guillotine partition of an h x w canvas into `tiles` rectangles.
std::vector<Rect> partition_rects(int height, int width, int tiles, Rng& rng);

/// Smooth, mid-tone clean test content (gradients, soft blobs, mild texture).
ImageRGB procedural_image(int height, int width, std::uint64_t seed);

/// Writes {root}/low and {root}/high from clean images and returns the scanned manifest.
DatasetManifest synthesize_dataset(const std::vector<std::pair<std::string, ImageRGB>>& clean,
                                   const std::filesystem::path& root, const SynthConfig& cfg);

/// Directory for precomputed artifacts of kind "masks" or "illum"; honors UEG_CACHE_DIR.
std::filesystem::path artifact_dir(const DatasetManifest& m, const std::string& kind);

DatasetManifest precompute_masks(const DatasetManifest& m, const MaskConfig& cfg, int jobs = 1);
DatasetManifest precompute_illum(const DatasetManifest& m, int jobs = 1);

struct PairedSample {
  ImageRGB input;
  ImageRGB target;
  AttentionTarget attn_target;
  LuminanceMap inv_lum;
  std::string id;
};

/// Loads every field of an entry; requires precomputed masks and illum maps.
PairedSample load_sample(const ManifestEntry& e);
PairedSample random_crop_pair(const PairedSample& s, int size, Rng& rng);

/// Deterministic shuffled index batches for one epoch; the last batch may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, std::uint64_t shuffle_seed,
                                                   std::uint64_t epoch);
std::vector<std::vector<std::size_t>> make_batches(const DatasetManifest& m, int batch_size,
                                                   std::uint64_t shuffle_seed, std::uint64_t epoch);

}  // namespace ueg
