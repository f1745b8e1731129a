#include "ueg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "ueg/errors.hpp"
#include "ueg/imaging.hpp"
#include "ueg/json_util.hpp"
#include "ueg/parallel.hpp"

namespace fs = std::filesystem;

namespace ueg {

// ---------------------------------------------------------------------------
// Manifest

bool DatasetManifest::has_masks() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return !e.mask.empty(); });
}

bool DatasetManifest::has_illum() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return !e.illum.empty(); });
}

namespace {

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (p.empty()) {
    return "";
  }
  const fs::path rel = p.lexically_relative(base);
  return (rel.empty() || *rel.begin() == "..") ? p.generic_string() : rel.generic_string();
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"id", e.id},
                       {"input", relative_to(e.input, m.root)},
                       {"target", relative_to(e.target, m.root)},
                       {"mask", relative_to(e.mask, m.root)},
                       {"illum", relative_to(e.illum, m.root)},
                       {"t_low", e.t_low},
                       {"t_high", e.t_high}});
  }
  j = nlohmann::json{{"root", m.root.generic_string()},
                     {"seed", m.seed},
                     {"mask_mode", m.mask_mode},
                     {"mean_threshold", m.mean_threshold ? nlohmann::json(*m.mean_threshold) : nlohmann::json()},
                     {"entries", std::move(entries)}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m = DatasetManifest{};
  m.root = j.at("root").get<std::string>();
  m.seed = j.value("seed", std::uint64_t{0});
  m.mask_mode = j.value("mask_mode", std::string{});
  if (j.contains("mean_threshold") && !j.at("mean_threshold").is_null()) {
    m.mean_threshold = j.at("mean_threshold").get<double>();
  }
  auto resolve = [&](const nlohmann::json& e, const char* key) -> fs::path {
    const std::string s = e.value(key, std::string{});
    if (s.empty()) {
      return {};
    }
    const fs::path p(s);
    return p.is_absolute() ? p : m.root / p;
  };
  for (const auto& e : j.at("entries")) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.input = resolve(e, "input");
    entry.target = resolve(e, "target");
    entry.mask = resolve(e, "mask");
    entry.illum = resolve(e, "illum");
    entry.t_low = e.value("t_low", 0.0);
    entry.t_high = e.value("t_high", 0.0);
    m.entries.push_back(std::move(entry));
  }
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write manifest '" + path.string() + "'");
  }
  out << nlohmann::json(m).dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("manifest not found: '" + path.string() + "'");
  }
  DatasetManifest m;
  try {
    m = nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "' is malformed: " + e.what());
  }
  if (m.root.is_relative()) {
    m.root = path.parent_path() / m.root;
    for (auto& e : m.entries) {
      for (fs::path* p : {&e.input, &e.target, &e.mask, &e.illum}) {
        if (!p->empty() && p->is_relative()) {
          *p = path.parent_path() / *p;
        }
      }
    }
  }
  for (const auto& e : m.entries) {
    for (const fs::path* p : {&e.input, &e.target, &e.mask, &e.illum}) {
      if (!p->empty() && !fs::exists(*p)) {
        throw DataError("manifest '" + path.string() + "': entry '" + e.id + "' lists missing file '" +
                        p->string() + "'");
      }
    }
  }
  return m;
}

DatasetManifest scan_paired_dir(const fs::path& low_dir, const fs::path& high_dir) {
  for (const auto& d : {low_dir, high_dir}) {
    if (!fs::is_directory(d)) {
      throw IoError("directory not found: '" + d.string() + "'");
    }
  }
  auto pngs = [](const fs::path& dir) {
    std::set<std::string> names;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.is_regular_file() && f.path().extension() == ".png") {
        names.insert(f.path().filename().string());
      }
    }
    return names;
  };
  const auto low = pngs(low_dir);
  const auto high = pngs(high_dir);
  DatasetManifest m;
  m.root = low_dir.parent_path();
  for (const auto& name : low) {
    if (high.count(name)) {
      m.entries.push_back({fs::path(name).stem().string(), low_dir / name, high_dir / name, {}, {}, 0.0, 0.0});
    } else {
      m.unpaired.push_back((low_dir / name).string());
    }
  }
  for (const auto& name : high) {
    if (!low.count(name)) {
      m.unpaired.push_back((high_dir / name).string());
    }
  }
  if (m.entries.empty()) {
    throw DataError("no paired images found between '" + low_dir.string() + "' and '" + high_dir.string() + "'");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic degradation

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"mode", c.mode},
                     {"gain_range", {c.gain_range.first, c.gain_range.second}},
                     {"gamma_range", {c.gamma_range.first, c.gamma_range.second}},
                     {"grad_axis", c.grad_axis},
                     {"tiles", c.tiles},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  StrictObject o(j, "data.synth");
  o.get("mode", c.mode);
  o.get("gain_range", c.gain_range);
  o.get("gamma_range", c.gamma_range);
  o.get("grad_axis", c.grad_axis);
  o.get("tiles", c.tiles);
  o.get("seed", c.seed);
  o.finish();
}

void validate(const SynthConfig& c) {
  if (c.mode != "under" && c.mode != "over" && c.mode != "grad" && c.mode != "mix") {
    throw ConfigError("synth mode must be one of under|over|grad|mix, got '" + c.mode + "'");
  }
  auto check = [](const std::pair<double, double>& r, const char* name) {
    if (!(r.first > 0.0) || !(r.first <= r.second) || !(r.first <= 1.0) || !(r.second >= 1.0)) {
      throw ConfigError(std::string("synth ") + name + " must satisfy 0 < lo <= 1 <= hi");
    }
  };
  check(c.gain_range, "gain_range");
  check(c.gamma_range, "gamma_range");
  if (c.grad_axis != "horizontal" && c.grad_axis != "vertical") {
    throw ConfigError("synth grad_axis must be horizontal or vertical, got '" + c.grad_axis + "'");
  }
  if (c.mode == "mix" && c.tiles < 2) {
    throw ConfigError("synth tiles must be >= 2 in mix mode, got " + std::to_string(c.tiles));
  }
}

ExposureParams draw_under(const SynthConfig& cfg, Rng& rng) {
  ExposureParams p;
  p.gain = rng.uniform(cfg.gain_range.first, std::min(1.0, cfg.gain_range.second));
  p.gamma = rng.uniform(std::max(1.0, cfg.gamma_range.first), cfg.gamma_range.second);
  return p;
}

ExposureParams draw_over(const SynthConfig& cfg, Rng& rng) {
  ExposureParams p;
  p.gain = rng.uniform(std::max(1.0, cfg.gain_range.first), cfg.gain_range.second);
  p.gamma = rng.uniform(cfg.gamma_range.first, std::min(1.0, cfg.gamma_range.second));
  return p;
}

double expose(double v, const ExposureParams& p) {
  const double g = std::clamp(p.gain * v, 0.0, 1.0);
  return g <= 0.0 ? 0.0 : std::clamp(std::pow(g, p.gamma), 0.0, 1.0);
}

std::vector<Rect> partition_rects(int height, int width, int tiles, Rng& rng) {
  std::vector<Rect> rects{{0, 0, height, width}};
  while (static_cast<int>(rects.size()) < tiles) {
    // Split the largest rectangle that can still be cut along its longer side.
    int best = -1;
    long best_area = 0;
    for (std::size_t i = 0; i < rects.size(); ++i) {
      const auto& r = rects[i];
      const long area = static_cast<long>(r.y1 - r.y0) * (r.x1 - r.x0);
      if (std::max(r.y1 - r.y0, r.x1 - r.x0) >= 2 && area > best_area) {
        best = static_cast<int>(i);
        best_area = area;
      }
    }
    if (best < 0) {
      throw std::invalid_argument("partition_rects: canvas too small for " + std::to_string(tiles) + " tiles");
    }
    const Rect r = rects[best];
    Rect a = r;
    Rect b = r;
    if (r.x1 - r.x0 >= r.y1 - r.y0) {
      const int span = r.x1 - r.x0;
      const int cut = r.x0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(span - 1)));
      a.x1 = cut;
      b.x0 = cut;
    } else {
      const int span = r.y1 - r.y0;
      const int cut = r.y0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(span - 1)));
      a.y1 = cut;
      b.y0 = cut;
    }
    rects[best] = a;
    rects.push_back(b);
  }
  return rects;
}

ImageRGB synth_degrade(const ImageRGB& clean, const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  ImageRGB out(clean.height(), clean.width());
  auto apply_pixel = [&](int y, int x, const ExposureParams& p) {
    for (int c = 0; c < 3; ++c) {
      out.at(y, x, c) = expose(clean.at(y, x, c), p);
    }
  };
  if (cfg.mode == "under" || cfg.mode == "over") {
    const ExposureParams p = cfg.mode == "under" ? draw_under(cfg, rng) : draw_over(cfg, rng);
    for (int y = 0; y < clean.height(); ++y) {
      for (int x = 0; x < clean.width(); ++x) {
        apply_pixel(y, x, p);
      }
    }
  } else if (cfg.mode == "grad") {
    const ExposureParams lo = draw_under(cfg, rng);
    const ExposureParams hi = draw_over(cfg, rng);
    const bool horizontal = cfg.grad_axis == "horizontal";
    const int n = horizontal ? clean.width() : clean.height();
    for (int y = 0; y < clean.height(); ++y) {
      for (int x = 0; x < clean.width(); ++x) {
        const double t = n > 1 ? static_cast<double>(horizontal ? x : y) / (n - 1) : 0.0;
        apply_pixel(y, x, {lo.gain + t * (hi.gain - lo.gain), lo.gamma + t * (hi.gamma - lo.gamma)});
      }
    }
  } else {
    const auto rects = partition_rects(clean.height(), clean.width(), cfg.tiles, rng);
    for (std::size_t i = 0; i < rects.size(); ++i) {
      // The first two tiles are under then over so both regimes always appear.
      const bool under = i == 0 || (i > 1 && rng.below(2) == 0);
      const ExposureParams p = under ? draw_under(cfg, rng) : draw_over(cfg, rng);
      for (int y = rects[i].y0; y < rects[i].y1; ++y) {
        for (int x = rects[i].x0; x < rects[i].x1; ++x) {
          apply_pixel(y, x, p);
        }
      }
    }
  }
  return out;
}

ImageRGB procedural_image(int height, int width, std::uint64_t seed) {
  if (height < 1 || width < 1) {
    throw std::invalid_argument("procedural_image: extent must be positive");
  }
  Rng rng(seed);
  std::array<double, 3> c0, c1;
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.25, 0.75);
    c1[c] = rng.uniform(0.25, 0.75);
  }
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);

  struct Blob {
    double cy, cx, r;
    std::array<double, 3> color;
  };
  std::vector<Blob> blobs(3 + rng.below(4));
  for (auto& b : blobs) {
    b.cy = rng.uniform();
    b.cx = rng.uniform();
    b.r = rng.uniform(0.08, 0.3);
    for (double& v : b.color) {
      v = rng.uniform(0.1, 0.9);
    }
  }
  const double freq = rng.uniform(4.0, 12.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  ImageRGB img(height, width);
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double t = std::clamp(0.5 + 0.7 * ((u - 0.5) * dx + (v - 0.5) * dy), 0.0, 1.0);
      std::array<double, 3> px;
      for (int c = 0; c < 3; ++c) {
        px[c] = c0[c] + t * (c1[c] - c0[c]);
      }
      for (const auto& b : blobs) {
        const double d2 = ((u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy)) / (b.r * b.r);
        const double w = std::exp(-2.0 * d2);
        for (int c = 0; c < 3; ++c) {
          px[c] += w * (b.color[c] - px[c]);
        }
      }
      const double texture = 0.05 * std::sin(2.0 * std::numbers::pi * freq * (u + 0.6 * v) + phase);
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = std::clamp(px[c] + texture, 0.05, 0.95);
      }
    }
  }
  return img;
}

DatasetManifest synthesize_dataset(const std::vector<std::pair<std::string, ImageRGB>>& clean, const fs::path& root,
                                   const SynthConfig& cfg) {
  validate(cfg);
  if (clean.empty()) {
    throw DataError("synthesize_dataset: no clean images");
  }
  fs::create_directories(root / "low");
  fs::create_directories(root / "high");
  for (std::size_t i = 0; i < clean.size(); ++i) {
    SynthConfig per = cfg;
    per.seed = mix_seed(cfg.seed, i);
    const ImageRGB target = quantize(clean[i].second);
    save_image(synth_degrade(target, per), root / "low" / (clean[i].first + ".png"));
    save_image(target, root / "high" / (clean[i].first + ".png"));
  }
  DatasetManifest m = scan_paired_dir(root / "low", root / "high");
  m.seed = cfg.seed;
  return m;
}

// ---------------------------------------------------------------------------
// Precomputation

fs::path artifact_dir(const DatasetManifest& m, const std::string& kind) {
  if (const char* cache = std::getenv("UEG_CACHE_DIR"); cache && *cache) {
    const fs::path root_name = fs::weakly_canonical(m.root).filename();
    return fs::path(cache) / root_name / kind;
  }
  return m.root / kind;
}

namespace {

void raise_aggregated(const std::vector<std::exception_ptr>& errors, const DatasetManifest& m, const char* stage) {
  std::ostringstream msg;
  int failures = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) {
      continue;
    }
    ++failures;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      msg << "\n  " << m.entries[i].id << ": " << e.what();
    }
  }
  if (failures > 0) {
    throw IoError(std::string(stage) + ": " + std::to_string(failures) + " entr" + (failures == 1 ? "y" : "ies") +
                  " failed" + msg.str());
  }
}

}  // namespace

DatasetManifest precompute_masks(const DatasetManifest& m, const MaskConfig& cfg, int jobs) {
  validate(cfg);
  const std::size_t n = m.entries.size();
  std::vector<LuminanceMap> lums(n);
  raise_aggregated(parallel_for(n, jobs, [&](std::size_t i) { lums[i] = rgb_to_luminance(load_image(m.entries[i].input)); }),
                   m, "precompute_masks");

  DatasetManifest out = m;
  out.mask_mode = cfg.mode;
  const ThresholdStats stats = dataset_average_threshold(lums);
  out.mean_threshold = stats.mean_threshold;
  const fs::path dir = artifact_dir(m, "masks");
  fs::create_directories(dir);
  raise_aggregated(parallel_for(n, jobs,
                                [&](std::size_t i) {
                                  auto& e = out.entries[i];
                                  ExposureLabelMap labels;
                                  if (cfg.mode == "binary") {
                                    e.t_low = std::min(stats.mean_threshold, 1.0);
                                    e.t_high = 1.0;
                                    labels = make_under_labels(lums[i], e.t_low, cfg);
                                  } else {
                                    const TwoThresholds t = multi_otsu_two_thresholds(histogram(lums[i]));
                                    // A single populated top bin yields 1.0, which admits no OVER class.
                                    e.t_high = std::min(t.t_high, 255.0 / 256.0);
                                    e.t_low = std::min(t.t_low, e.t_high);
                                    labels = make_exposure_labels(lums[i], e.t_low, e.t_high, cfg);
                                  }
                                  e.mask = dir / (e.id + ".png");
                                  save_label_map(labels, e.mask);
                                }),
                   m, "precompute_masks");
  return out;
}

DatasetManifest precompute_illum(const DatasetManifest& m, int jobs) {
  DatasetManifest out = m;
  const fs::path dir = artifact_dir(m, "illum");
  fs::create_directories(dir);
  raise_aggregated(parallel_for(out.entries.size(), jobs,
                                [&](std::size_t i) {
                                  auto& e = out.entries[i];
                                  e.illum = dir / (e.id + ".png");
                                  save_plane(invert_luminance(rgb_to_luminance(load_image(e.input))), e.illum);
                                }),
                   m, "precompute_illum");
  return out;
}

// ---------------------------------------------------------------------------
// Samples and batching

PairedSample load_sample(const ManifestEntry& e) {
  if (e.mask.empty() || e.illum.empty()) {
    throw DataError("entry '" + e.id + "' has no precomputed mask/illum map; run masks first");
  }
  PairedSample s;
  s.id = e.id;
  s.input = load_image(e.input);
  s.target = load_image(e.target);
  s.attn_target = label_to_target_map(load_label_map(e.mask));
  s.inv_lum = load_plane(e.illum);
  const int h = s.input.height();
  const int w = s.input.width();
  if (s.target.height() != h || s.target.width() != w || s.attn_target.height != h || s.attn_target.width != w ||
      s.inv_lum.height() != h || s.inv_lum.width() != w) {
    throw DataError("entry '" + e.id + "': input, target, mask and illum extents differ");
  }
  return s;
}

PairedSample random_crop_pair(const PairedSample& s, int size, Rng& rng) {
  const int h = s.input.height();
  const int w = s.input.width();
  if (size < 1 || size > std::min(h, w)) {
    throw std::invalid_argument("random_crop_pair: crop " + std::to_string(size) + " does not fit " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - size + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - size + 1)));
  PairedSample out;
  out.id = s.id;
  out.input = ImageRGB(size, size);
  out.target = ImageRGB(size, size);
  out.inv_lum = Plane(size, size);
  out.attn_target = {size, size, std::vector<double>(2 * static_cast<std::size_t>(size) * size)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.input.at(y, x, c) = s.input.at(y0 + y, x0 + x, c);
        out.target.at(y, x, c) = s.target.at(y0 + y, x0 + x, c);
      }
      out.inv_lum.at(y, x) = s.inv_lum.at(y0 + y, x0 + x);
      for (int c = 0; c < 2; ++c) {
        out.attn_target.data[(static_cast<std::size_t>(c) * size + y) * size + x] = s.attn_target.at(c, y0 + y, x0 + x);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, std::uint64_t shuffle_seed,
                                                   std::uint64_t epoch) {
  if (batch_size < 1) {
    throw std::invalid_argument("make_batches: batch_size must be >= 1");
  }
  if (count == 0) {
    throw DataError("make_batches: manifest is empty");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(shuffle_seed, epoch));
  for (std::size_t i = count - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size)) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> make_batches(const DatasetManifest& m, int batch_size, std::uint64_t shuffle_seed,
                                                   std::uint64_t epoch) {
  return make_batches(m.entries.size(), batch_size, shuffle_seed, epoch);
}

}  // namespace ueg
