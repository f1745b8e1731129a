#include "ueg/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <sys/resource.h>

#include "ueg/errors.hpp"
#include "ueg/imaging.hpp"
#include "ueg/losses.hpp"
#include "ueg/parallel.hpp"
#include "ueg/rng.hpp"

namespace ueg::metrics {

namespace {

void require_same_extent(const ImageRGB& a, const ImageRGB& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument(std::string(what) + ": image extents differ (" + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                std::to_string(b.width()) + ")");
  }
}

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  return v;
}

}  // namespace

double psnr(const ImageRGB& y, const ImageRGB& yhat) {
  require_same_extent(y, yhat, "psnr");
  const auto a = y.data();
  const auto b = yhat.data();
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sq += (a[i] - b[i]) * (a[i] - b[i]);
  }
  const double mse = sq / static_cast<double>(a.size());
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageRGB& y, const ImageRGB& yhat) { return losses::ssim(y, yhat); }

Plane ssim_map(const ImageRGB& y, const ImageRGB& yhat) { return losses::ssim_map(y, yhat); }

void save_ssim_map(const Plane& map, const std::filesystem::path& path) {
  Plane clamped = map;
  for (double& v : clamped.data()) {
    v = std::clamp(v, 0.0, 1.0);
  }
  save_plane(clamped, path);
}

ExposureFractions exposure_fraction_delta(const ImageRGB& input, const ImageRGB& output,
                                          const ExposureLabelMap& labels, double t_low, double t_high) {
  require_same_extent(input, output, "exposure_fraction_delta");
  if (labels.height != input.height() || labels.width != input.width()) {
    throw std::invalid_argument("exposure_fraction_delta: label map does not match the image extent");
  }
  const LuminanceMap lin = rgb_to_luminance(input);
  const LuminanceMap lout = rgb_to_luminance(output);
  std::size_t n_under = 0, n_over = 0;
  std::size_t under_in = 0, under_out = 0, over_in = 0, over_out = 0;
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    if (labels.data[i] == ExposureLabel::Under) {
      ++n_under;
      under_in += lin.data()[i] < t_low;
      under_out += lout.data()[i] < t_low;
    } else if (labels.data[i] == ExposureLabel::Over) {
      ++n_over;
      over_in += lin.data()[i] > t_high;
      over_out += lout.data()[i] > t_high;
    }
  }
  auto frac = [](std::size_t k, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(k) / n; };
  return {frac(under_in, n_under), frac(under_out, n_under), frac(over_in, n_over), frac(over_out, n_over)};
}

// ---------------------------------------------------------------------------
// Dataset evaluation

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"id", row.id}};
    if (!row.error.empty()) {
      j["error"] = row.error;
    } else {
      j["psnr_db"] = number_or_inf(row.psnr_db);
      j["ssim"] = row.ssim;
      j["under_frac_in"] = row.fractions.under_in;
      j["under_frac_out"] = row.fractions.under_out;
      j["over_frac_in"] = row.fractions.over_in;
      j["over_frac_out"] = row.fractions.over_out;
      if (r.wall_ms_mean) {
        j["wall_ms"] = row.wall_ms;
      }
    }
    rows.push_back(std::move(j));
  }
  return nlohmann::json{
      {"schema", 1},
      {"psnr_peak", 1.0},
      {"note", "PSNR on unit-range intensities; timing covers the forward pass only"},
      {"per_image", std::move(rows)},
      {"aggregate",
       {{"psnr_db", number_or_inf(r.psnr_mean)},
        {"ssim", r.ssim_mean},
        {"under_frac_in", r.fractions_mean.under_in},
        {"under_frac_out", r.fractions_mean.under_out},
        {"over_frac_in", r.fractions_mean.over_in},
        {"over_frac_out", r.fractions_mean.over_out},
        {"evaluated", r.evaluated},
        {"failed", r.failed}}},
      {"wall_ms_mean", r.wall_ms_mean ? nlohmann::json(*r.wall_ms_mean) : nlohmann::json()},
      {"peak_mem_mb", r.peak_mem_mb ? nlohmann::json(*r.peak_mem_mb) : nlohmann::json()}};
}

std::string format_table(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(24) << "id" << std::right << std::setw(10) << "PSNR" << std::setw(9) << "SSIM"
      << std::setw(10) << "under_in" << std::setw(10) << "under_out" << std::setw(9) << "over_in" << std::setw(10)
      << "over_out" << '\n';
  auto line = [&](const std::string& id, double p, double s, const ExposureFractions& f) {
    out << std::left << std::setw(24) << id << std::right << std::setw(10) << p << std::setw(9) << s << std::setw(10)
        << f.under_in << std::setw(10) << f.under_out << std::setw(9) << f.over_in << std::setw(10) << f.over_out
        << '\n';
  };
  for (const auto& row : r.rows) {
    if (!row.error.empty()) {
      out << std::left << std::setw(24) << row.id << " FAILED: " << row.error << '\n';
    } else {
      line(row.id, row.psnr_db, row.ssim, row.fractions);
    }
  }
  line("mean", r.psnr_mean, r.ssim_mean, r.fractions_mean);
  return out.str();
}

EvalReport eval_dataset(const Enhancer& enhance, const DatasetManifest& manifest, const EvalOptions& opts) {
  EvalReport report;
  report.rows.resize(manifest.entries.size());
  if (!opts.ssim_map_dir.empty()) {
    std::filesystem::create_directories(opts.ssim_map_dir);
  }
  if (!opts.output_dir.empty()) {
    std::filesystem::create_directories(opts.output_dir);
  }
  parallel_for(manifest.entries.size(), opts.jobs, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    EvalRow& row = report.rows[i];
    row.id = e.id;
    try {
      const ImageRGB input = load_image(e.input);
      const ImageRGB target = load_image(e.target);
      const auto t0 = std::chrono::steady_clock::now();
      const ImageRGB out = enhance(input, e);
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      row.psnr_db = psnr(target, out);
      const Plane map = ssim_map(target, out);
      row.ssim = std::accumulate(map.data().begin(), map.data().end(), 0.0) / static_cast<double>(map.pixels());
      ExposureLabelMap labels;
      double t_low = e.t_low;
      double t_high = e.t_high;
      if (!e.mask.empty()) {
        labels = load_label_map(e.mask);
      } else {
        const TwoThresholds t = multi_otsu_two_thresholds(histogram(rgb_to_luminance(input)));
        t_high = std::min(t.t_high, 255.0 / 256.0);
        t_low = std::min(t.t_low, t_high);
        labels = make_exposure_labels(rgb_to_luminance(input), t_low, t_high);
      }
      row.fractions = exposure_fraction_delta(input, out, labels, t_low, t_high);
      if (!opts.ssim_map_dir.empty()) {
        save_ssim_map(map, opts.ssim_map_dir / (e.id + "_ssim.png"));
      }
      if (!opts.output_dir.empty()) {
        save_image(out, opts.output_dir / (e.id + "_out.png"));
      }
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
  });

  double wall = 0.0;
  for (const auto& row : report.rows) {
    if (!row.error.empty()) {
      ++report.failed;
      continue;
    }
    ++report.evaluated;
    report.psnr_mean += row.psnr_db;
    report.ssim_mean += row.ssim;
    report.fractions_mean.under_in += row.fractions.under_in;
    report.fractions_mean.under_out += row.fractions.under_out;
    report.fractions_mean.over_in += row.fractions.over_in;
    report.fractions_mean.over_out += row.fractions.over_out;
    wall += row.wall_ms;
  }
  if (report.evaluated > 0) {
    const double n = static_cast<double>(report.evaluated);
    report.psnr_mean /= n;
    report.ssim_mean /= n;
    report.fractions_mean.under_in /= n;
    report.fractions_mean.under_out /= n;
    report.fractions_mean.over_in /= n;
    report.fractions_mean.over_out /= n;
    if (opts.include_timing) {
      report.wall_ms_mean = wall / n;
    }
  }
  if (opts.include_timing) {
    report.peak_mem_mb = peak_rss_mb();
  }
  return report;
}

EvalReport eval_dataset(const ModelState& state, const DatasetManifest& manifest, const EvalOptions& opts) {
  return eval_dataset([&](const ImageRGB& input, const ManifestEntry&) { return forward(input, state).image; },
                      manifest, opts);
}

// ---------------------------------------------------------------------------
// Benchmark

double peak_rss_mb() {
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) != 0) {
    return 0.0;
  }
  return static_cast<double>(usage.ru_maxrss) / 1024.0;  // ru_maxrss is in KiB on Linux
}

BenchReport bench_inference(const ModelState& state, const std::vector<std::pair<int, int>>& sizes, int repeats,
                            int warmup, std::uint64_t seed) {
  if (repeats < 1 || warmup < 0) {
    throw std::invalid_argument("bench_inference: repeats must be >= 1 and warmup >= 0");
  }
  BenchReport report;
  report.warmup = warmup;
  Rng rng(seed);
  for (const auto& [h, w] : sizes) {
    ImageRGB img(h, w);
    for (double& v : img.data()) {
      v = rng.uniform();
    }
    for (int i = 0; i < warmup; ++i) {
      (void)forward(img, state);
    }
    std::vector<double> times;
    for (int i = 0; i < repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)forward(img, state);
      times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    const double median = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
    // Nearest-rank percentile.
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    report.rows.push_back({h, w, repeats, median, times[std::max<std::size_t>(rank, 1) - 1], times.front()});
  }
  report.peak_rss_mb = peak_rss_mb();
  return report;
}

nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"height", row.height},
                    {"width", row.width},
                    {"repeats", row.repeats},
                    {"median_ms", row.median_ms},
                    {"p95_ms", row.p95_ms},
                    {"min_ms", row.min_ms}});
  }
  return nlohmann::json{{"schema", 1},
                        {"label", "informative - hardware dependent"},
                        {"warmup", r.warmup},
                        {"rows", std::move(rows)},
                        {"peak_rss_mb", r.peak_rss_mb},
                        {"memory_method", "process peak resident set size (getrusage); not comparable to GPU memory"},
                        {"reference",
                         {{"inference_ms", 95.0},
                          {"peak_memory_mb", 1134.0},
                          {"binding", false},
                          {"note", "published figures for a GPU setup; shown for context only"}}}};
}

std::string format_table(const BenchReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "size        repeats   median_ms     p95_ms     min_ms\n";
  for (const auto& row : r.rows) {
    std::ostringstream size;
    size << row.height << "x" << row.width;
    out << std::left << std::setw(12) << size.str() << std::right << std::setw(7) << row.repeats << std::setw(12)
        << row.median_ms << std::setw(11) << row.p95_ms << std::setw(11) << row.min_ms << '\n';
  }
  out << "peak RSS: " << r.peak_rss_mb << " MB (informative - hardware dependent)\n";
  out << "reference: 95 ms inference, 1134 MB peak memory (published, non-binding)\n";
  return out.str();
}

namespace {

bool is_number(const nlohmann::json& j) { return j.is_number(); }

}  // namespace

std::string validate_bench_json(const nlohmann::json& j) {
  if (!j.is_object()) return "report is not an object";
  if (!j.contains("schema") || j["schema"] != 1) return "schema must be 1";
  if (!j.contains("rows") || !j["rows"].is_array() || j["rows"].empty()) return "rows must be a non-empty array";
  for (const auto& row : j["rows"]) {
    for (const char* key : {"height", "width", "repeats"}) {
      if (!row.contains(key) || !row[key].is_number_integer() || row[key].get<long>() < 1) {
        return std::string("row field '") + key + "' must be a positive integer";
      }
    }
    for (const char* key : {"median_ms", "p95_ms", "min_ms"}) {
      if (!row.contains(key) || !is_number(row[key]) || !(row[key].get<double>() > 0.0)) {
        return std::string("row field '") + key + "' must be a positive number";
      }
    }
    if (row["p95_ms"].get<double>() < row["median_ms"].get<double>()) return "p95_ms below median_ms";
  }
  if (!j.contains("peak_rss_mb") || !is_number(j["peak_rss_mb"])) return "peak_rss_mb must be a number";
  if (!j.contains("reference") || !j["reference"].is_object()) return "reference block missing";
  const auto& ref = j["reference"];
  if (ref.value("inference_ms", 0.0) != 95.0 || ref.value("peak_memory_mb", 0.0) != 1134.0) {
    return "reference figures must be 95 ms and 1134 MB";
  }
  if (ref.value("binding", true)) return "reference must be marked non-binding";
  return {};
}

std::string validate_eval_json(const nlohmann::json& j) {
  if (!j.is_object()) return "report is not an object";
  if (!j.contains("schema") || j["schema"] != 1) return "schema must be 1";
  if (!j.contains("per_image") || !j["per_image"].is_array()) return "per_image must be an array";
  if (!j.contains("aggregate") || !j["aggregate"].is_object()) return "aggregate must be an object";
  auto metric_ok = [](const nlohmann::json& v) { return v.is_number() || v == "inf"; };
  for (const auto& row : j["per_image"]) {
    if (!row.contains("id") || !row["id"].is_string()) return "per_image rows need a string id";
    if (row.contains("error")) continue;
    if (!row.contains("psnr_db") || !metric_ok(row["psnr_db"])) return "psnr_db must be a number or \"inf\"";
    for (const char* key : {"ssim", "under_frac_in", "under_frac_out", "over_frac_in", "over_frac_out"}) {
      if (!row.contains(key) || !row[key].is_number()) return std::string("per_image field '") + key + "' missing";
    }
  }
  const auto& agg = j["aggregate"];
  if (!agg.contains("psnr_db") || !metric_ok(agg["psnr_db"])) return "aggregate psnr_db invalid";
  if (!agg.contains("ssim") || !agg["ssim"].is_number()) return "aggregate ssim invalid";
  return {};
}

}  // namespace ueg::metrics
