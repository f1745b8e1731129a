#include "ueg/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/multiprecision/cpp_int.hpp>

#include "ueg/errors.hpp"
#include "ueg/imaging.hpp"
#include "ueg/json_util.hpp"

namespace ueg {

using boost::multiprecision::uint256_t;

std::uint64_t Histogram256::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

int Histogram256::populated_bins() const {
  return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](std::uint64_t c) { return c > 0; }));
}

void to_json(nlohmann::json& j, const ThresholdStats& s) {
  j = nlohmann::json{{"per_image", s.per_image_thresholds}, {"mean", s.mean_threshold}, {"count", s.count}};
}

void from_json(const nlohmann::json& j, ThresholdStats& s) {
  j.at("per_image").get_to(s.per_image_thresholds);
  j.at("mean").get_to(s.mean_threshold);
  j.at("count").get_to(s.count);
}

void to_json(nlohmann::json& j, const MaskConfig& c) {
  j = nlohmann::json{{"downsample", c.downsample}, {"blur_sigma", c.blur_sigma}, {"mode", c.mode}};
}

void from_json(const nlohmann::json& j, MaskConfig& c) {
  StrictObject o(j, "masks");
  o.get("downsample", c.downsample);
  o.get("blur_sigma", c.blur_sigma);
  o.get("mode", c.mode);
  o.finish();
}

void validate(const MaskConfig& c) {
  if (c.downsample < 1) {
    throw ConfigError("masks.downsample must be >= 1");
  }
  if (!(c.blur_sigma >= 0.0)) {
    throw ConfigError("masks.blur_sigma must be >= 0");
  }
  if (c.mode != "binary" && c.mode != "mixed") {
    throw ConfigError("masks.mode must be \"binary\" or \"mixed\", got \"" + c.mode + "\"");
  }
}

int histogram_bin(double v) {
  const double scaled = std::floor(256.0 * std::clamp(v, 0.0, 1.0));
  return std::min(static_cast<int>(scaled), 255);
}

Histogram256 histogram(const LuminanceMap& lum) {
  Histogram256 h;
  for (double v : lum.data()) {
    ++h.counts[histogram_bin(v)];
  }
  return h;
}

namespace {

// Between-class variance is N^-1 * sum_k S_k^2 / n_k - mu_T^2, so maximizing it
// amounts to maximizing sum_k S_k^2 / n_k. Candidates are kept as exact
// fractions so that ties are detected exactly.
struct Fraction {
  uint256_t num{0};
  uint256_t den{1};
};

bool greater(const Fraction& a, const Fraction& b) { return a.num * b.den > b.num * a.den; }

struct Prefix {
  std::array<std::uint64_t, 257> n{};
  std::array<std::uint64_t, 257> s{};

  explicit Prefix(const Histogram256& h) {
    for (int b = 0; b < 256; ++b) {
      n[b + 1] = n[b] + h.counts[b];
      s[b + 1] = s[b] + h.counts[b] * static_cast<std::uint64_t>(b);
    }
  }
  // Count and bin-index sum over bins [lo, hi].
  std::uint64_t count(int lo, int hi) const { return n[hi + 1] - n[lo]; }
  std::uint64_t sum(int lo, int hi) const { return s[hi + 1] - s[lo]; }
};

Fraction class_objective(std::span<const std::pair<std::uint64_t, std::uint64_t>> classes) {
  Fraction f;
  for (const auto& [n, s] : classes) {
    if (n == 0) {
      continue;
    }
    // f + s^2 / n
    const uint256_t s2 = uint256_t(s) * s;
    f.num = f.num * n + s2 * f.den;
    f.den *= n;
  }
  return f;
}

int single_populated_bin(const Histogram256& h) {
  for (int b = 0; b < 256; ++b) {
    if (h.counts[b] > 0) {
      return b;
    }
  }
  return -1;
}

void require_nonempty(const Histogram256& h, const char* what) {
  if (h.total() == 0) {
    throw std::invalid_argument(std::string(what) + ": histogram is empty");
  }
}

}  // namespace

int otsu_cut(const Histogram256& hist) {
  require_nonempty(hist, "otsu_threshold");
  if (hist.populated_bins() == 1) {
    return single_populated_bin(hist);
  }
  const Prefix p(hist);
  int best_cut = 0;
  Fraction best;
  bool have = false;
  for (int t = 0; t < 255; ++t) {
    const std::array<std::pair<std::uint64_t, std::uint64_t>, 2> classes{
        {{p.count(0, t), p.sum(0, t)}, {p.count(t + 1, 255), p.sum(t + 1, 255)}}};
    const Fraction f = class_objective(classes);
    if (!have || greater(f, best)) {
      best = f;
      best_cut = t;
      have = true;
    }
  }
  return best_cut;
}

double otsu_threshold(const Histogram256& hist) { return (otsu_cut(hist) + 1) / 256.0; }

std::pair<int, int> multi_otsu_cuts(const Histogram256& hist) {
  require_nonempty(hist, "multi_otsu_two_thresholds");
  const Prefix p(hist);
  std::pair<int, int> best_cuts{0, 1};
  Fraction best;
  bool have = false;
  for (int t1 = 0; t1 < 254; ++t1) {
    const std::uint64_t n0 = p.count(0, t1);
    const std::uint64_t s0 = p.sum(0, t1);
    for (int t2 = t1 + 1; t2 < 255; ++t2) {
      const std::array<std::pair<std::uint64_t, std::uint64_t>, 3> classes{
          {{n0, s0}, {p.count(t1 + 1, t2), p.sum(t1 + 1, t2)}, {p.count(t2 + 1, 255), p.sum(t2 + 1, 255)}}};
      const Fraction f = class_objective(classes);
      if (!have || greater(f, best)) {
        best = f;
        best_cuts = {t1, t2};
        have = true;
      }
    }
  }
  return best_cuts;
}

TwoThresholds multi_otsu_two_thresholds(const Histogram256& hist) {
  require_nonempty(hist, "multi_otsu_two_thresholds");
  if (hist.populated_bins() < 3) {
    const double t = otsu_threshold(hist);
    return {t, t, true};
  }
  const auto [t1, t2] = multi_otsu_cuts(hist);
  return {(t1 + 1) / 256.0, (t2 + 1) / 256.0, false};
}

ThresholdStats dataset_average_threshold(std::span<const LuminanceMap> lums) {
  if (lums.empty()) {
    throw std::invalid_argument("dataset_average_threshold: empty image sequence");
  }
  ThresholdStats stats;
  stats.per_image_thresholds.reserve(lums.size());
  for (const auto& lum : lums) {
    stats.per_image_thresholds.push_back(otsu_threshold(histogram(lum)));
  }
  stats.count = lums.size();
  stats.mean_threshold =
      std::accumulate(stats.per_image_thresholds.begin(), stats.per_image_thresholds.end(), 0.0) /
      static_cast<double>(stats.count);
  return stats;
}

BinaryMask otsu_binarize(const LuminanceMap& lum) {
  const int cut = otsu_cut(histogram(lum));
  BinaryMask mask{lum.height(), lum.width(), std::vector<std::uint8_t>(lum.pixels())};
  const auto src = lum.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mask.data[i] = histogram_bin(src[i]) > cut ? 1 : 0;
  }
  return mask;
}

BinaryMask adaptive_block_threshold(const LuminanceMap& lum, int block) {
  if (block < 8) {
    throw std::invalid_argument("adaptive_block_threshold: block must be >= 8, got " + std::to_string(block));
  }
  BinaryMask mask{lum.height(), lum.width(), std::vector<std::uint8_t>(lum.pixels())};
  for (int y0 = 0; y0 < lum.height(); y0 += block) {
    const int y1 = std::min(lum.height(), y0 + block);
    for (int x0 = 0; x0 < lum.width(); x0 += block) {
      const int x1 = std::min(lum.width(), x0 + block);
      Histogram256 h;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          ++h.counts[histogram_bin(lum.at(y, x))];
        }
      }
      const int cut = otsu_cut(h);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          mask.data[static_cast<std::size_t>(y) * lum.width() + x] = histogram_bin(lum.at(y, x)) > cut ? 1 : 0;
        }
      }
    }
  }
  return mask;
}

LuminanceMap denoise_luminance(const LuminanceMap& lum, const MaskConfig& cfg) {
  if (cfg.downsample < 1) {
    throw std::invalid_argument("mask config: downsample must be >= 1");
  }
  const int factor = std::min({cfg.downsample, lum.height(), lum.width()});
  LuminanceMap work = factor > 1 ? downsample_nearest(lum, factor) : lum;
  if (cfg.blur_sigma > 0.0) {
    work = gaussian_blur(work, cfg.blur_sigma);
  }
  if (factor > 1) {
    work = upsample_nearest(work, lum.height(), lum.width());
  }
  return work;
}

ExposureLabelMap make_exposure_labels(const LuminanceMap& lum, double t_low, double t_high,
                                      const MaskConfig& cfg) {
  if (!(t_low > 0.0 && t_low <= t_high && t_high < 1.0)) {
    throw std::invalid_argument("make_exposure_labels: thresholds must satisfy 0 < t_low <= t_high < 1");
  }
  const LuminanceMap smooth = denoise_luminance(lum, cfg);
  ExposureLabelMap labels{lum.height(), lum.width(), std::vector<ExposureLabel>(lum.pixels())};
  const auto src = smooth.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = src[i];
    labels.data[i] = v < t_low ? ExposureLabel::Under : (v > t_high ? ExposureLabel::Over : ExposureLabel::Correct);
  }
  return labels;
}

ExposureLabelMap make_under_labels(const LuminanceMap& lum, double threshold, const MaskConfig& cfg) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("make_under_labels: threshold must lie in (0,1]");
  }
  const LuminanceMap smooth = denoise_luminance(lum, cfg);
  ExposureLabelMap labels{lum.height(), lum.width(), std::vector<ExposureLabel>(lum.pixels())};
  const auto src = smooth.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    labels.data[i] = src[i] < threshold ? ExposureLabel::Under : ExposureLabel::Correct;
  }
  return labels;
}

AttentionTarget label_to_target_map(const ExposureLabelMap& labels) {
  AttentionTarget t{labels.height, labels.width, std::vector<double>(2 * labels.data.size(), 0.0)};
  const std::size_t plane = labels.data.size();
  for (std::size_t i = 0; i < plane; ++i) {
    if (labels.data[i] == ExposureLabel::Under) {
      t.data[i] = 1.0;
    } else if (labels.data[i] == ExposureLabel::Over) {
      t.data[plane + i] = 1.0;
    }
  }
  return t;
}

void save_label_map(const ExposureLabelMap& labels, const std::filesystem::path& path) {
  Bitmap8 bmp{labels.height, labels.width, 1, std::vector<std::uint8_t>(labels.data.size())};
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    switch (labels.data[i]) {
      case ExposureLabel::Correct: bmp.bytes[i] = 0; break;
      case ExposureLabel::Under: bmp.bytes[i] = 128; break;
      case ExposureLabel::Over: bmp.bytes[i] = 255; break;
    }
  }
  write_png(bmp, path);
}

ExposureLabelMap load_label_map(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("mask not found: '" + path.string() + "'");
  }
  const Bitmap8 bmp = read_png(path);
  if (bmp.channels != 1) {
    throw IoError("'" + path.string() + "': exposure masks must be grayscale");
  }
  ExposureLabelMap labels{bmp.height, bmp.width, std::vector<ExposureLabel>(bmp.bytes.size())};
  for (std::size_t i = 0; i < bmp.bytes.size(); ++i) {
    switch (bmp.bytes[i]) {
      case 0: labels.data[i] = ExposureLabel::Correct; break;
      case 128: labels.data[i] = ExposureLabel::Under; break;
      case 255: labels.data[i] = ExposureLabel::Over; break;
      default:
        throw IoError("'" + path.string() + "': invalid label byte " + std::to_string(bmp.bytes[i]));
    }
  }
  return labels;
}

}  // namespace ueg
