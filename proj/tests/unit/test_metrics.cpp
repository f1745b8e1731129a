#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "ueg/data.hpp"
#include "ueg/imaging.hpp"
#include "ueg/losses.hpp"
#include "ueg/metrics.hpp"
#include "unit/test_util.hpp"

using namespace ueg;
using namespace ueg::metrics;
using ueg::testing::random_image;
using ueg::testing::TempDir;

namespace fs = std::filesystem;

namespace {

ImageRGB offset(const ImageRGB& img, double d) {
  ImageRGB out = img;
  for (double& v : out.data()) v += d;
  return out;
}

ExposureLabelMap uniform_labels(int h, int w, ExposureLabel l) {
  return {h, w, std::vector<ExposureLabel>(static_cast<std::size_t>(h) * w, l)};
}

DatasetManifest eval_set(const fs::path& root) {
  std::vector<std::pair<std::string, ImageRGB>> clean;
  for (int i = 0; i < 3; ++i) clean.push_back({"e" + std::to_string(i), procedural_image(16, 20, 30 + i)});
  return synthesize_dataset(clean, root, SynthConfig{});
}

ModelState small_model() {
  ModelConfig c;
  c.embed_dim = 8;
  c.num_blocks = 1;
  c.geb_widths = {8, 8};
  c.geb_hidden = 8;
  c.geb_pool = 8;
  c.eaf_width = 4;
  return init_model(c);
}

}  // namespace

TEST(Psnr, Examples) {
  const auto y = random_image(12, 12, 1, 0.2, 0.8);
  EXPECT_EQ(psnr(y, y), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(y, offset(y, 0.1)), 20.0, 1e-6);
  EXPECT_NEAR(psnr(y, offset(y, 0.01)), 40.0, 1e-6);
  EXPECT_NEAR(psnr(y, offset(y, -0.1)), ueg::oracle::psnr(y, offset(y, -0.1)), 1e-9);
  EXPECT_THROW(psnr(y, random_image(12, 13, 1)), std::invalid_argument);
}

TEST(Psnr, DecreasesWithNoise) {
  const auto y = random_image(20, 20, 2, 0.2, 0.8);
  double prev = INFINITY;
  for (double a : {0.01, 0.05, 0.1}) {
    Rng rng(9);
    ImageRGB noisy = y;
    for (double& v : noisy.data()) v += rng.uniform(-a, a);
    const double p = psnr(y, noisy);
    EXPECT_LT(p, prev) << a;
    prev = p;
  }
}

TEST(Ssim, MatchesLossDefinition) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = random_image(16, 16, s), b = random_image(16, 16, s + 100);
    EXPECT_EQ(ssim(a, b), 1.0 - losses::ssim_loss(a, b));
    EXPECT_GE(ssim(a, b), -1.0);
    EXPECT_LE(ssim(a, b), 1.0);
    EXPECT_EQ(ssim_map(a, b), losses::ssim_map(a, b));
  }
  const auto a = random_image(16, 16, 3);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-6);
  auto b = a;
  b.at(4, 4, 1) += 0.05;
  EXPECT_LT(ssim(a, b), 1.0 - 1e-6);
}

TEST(Ssim, MapPngDarkerMeansWorse) {
  TempDir dir("metrics");
  Plane map(2, 2);
  map.at(0, 0) = 1.0;
  map.at(0, 1) = 0.2;
  map.at(1, 0) = -0.5;
  map.at(1, 1) = 0.6;
  save_ssim_map(map, dir / "m.png");
  const auto back = load_plane(dir / "m.png");
  EXPECT_EQ(back.at(0, 0), 1.0);
  EXPECT_EQ(back.at(1, 0), 0.0);
  EXPECT_GT(back.at(1, 1), back.at(0, 1));
}

TEST(ExposureFractions, Examples) {
  // Left half dark and labelled UNDER, right half bright and labelled OVER.
  ImageRGB img(4, 8);
  ExposureLabelMap labels = uniform_labels(4, 8, ExposureLabel::Correct);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) {
      const bool left = x < 4;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = left ? 0.1 : 0.95;
      labels.data[y * 8 + x] = left ? ExposureLabel::Under : ExposureLabel::Over;
    }
  const auto same = exposure_fraction_delta(img, img, labels, 0.3, 0.9);
  EXPECT_EQ(same.under_in, 1.0);
  EXPECT_EQ(same.under_out, 1.0);
  EXPECT_EQ(same.over_in, 1.0);
  EXPECT_EQ(same.over_out, 1.0);

  ImageRGB brighter = img;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) brighter.at(y, x, c) += 0.5;
  const auto f = exposure_fraction_delta(img, brighter, labels, 0.3, 0.9);
  EXPECT_EQ(f.under_out, 0.0);
  EXPECT_EQ(f.over_out, 1.0);

  const ImageRGB mid(4, 8, 0.5);
  const auto g = exposure_fraction_delta(img, mid, labels, 0.3, 0.9);
  EXPECT_EQ(g.under_out, 0.0);
  EXPECT_EQ(g.over_out, 0.0);

  const auto none = exposure_fraction_delta(img, img, uniform_labels(4, 8, ExposureLabel::Correct), 0.3, 0.9);
  EXPECT_EQ(none.under_in, 0.0);
  EXPECT_EQ(none.over_in, 0.0);

  EXPECT_THROW(exposure_fraction_delta(img, img, uniform_labels(4, 7, ExposureLabel::Correct), 0.3, 0.9),
               std::invalid_argument);
  EXPECT_THROW(exposure_fraction_delta(img, ImageRGB(4, 7), labels, 0.3, 0.9), std::invalid_argument);
}

TEST(ExposureFractions, IdentityProperty) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto img = random_image(9, 11, s);
    const auto lum = rgb_to_luminance(img);
    const auto labels = make_exposure_labels(lum, 0.3, 0.7, MaskConfig{1, 0.0, "mixed"});
    const auto f = exposure_fraction_delta(img, img, labels, 0.3, 0.7);
    EXPECT_EQ(f.under_in, f.under_out);
    EXPECT_EQ(f.over_in, f.over_out);
  }
}

TEST(Eval, OracleEnhancerAndBookkeeping) {
  TempDir dir("metrics");
  const auto m = eval_set(dir.path());
  EvalOptions opts;
  opts.ssim_map_dir = dir / "maps";
  opts.output_dir = dir / "outs";
  const auto oracle = eval_dataset([](const ImageRGB&, const ManifestEntry& e) { return load_image(e.target); }, m, opts);
  EXPECT_EQ(oracle.evaluated, 3u);
  EXPECT_EQ(oracle.psnr_mean, std::numeric_limits<double>::infinity());
  EXPECT_NEAR(oracle.ssim_mean, 1.0, 1e-12);
  EXPECT_TRUE(fs::exists(dir / "maps" / "e0_ssim.png"));
  EXPECT_TRUE(fs::exists(dir / "outs" / "e2_out.png"));
  const auto j = to_json(oracle);
  EXPECT_EQ(j["aggregate"]["psnr_db"], "inf");
  EXPECT_EQ(validate_eval_json(j), "");

  const auto ident = eval_dataset([](const ImageRGB& in, const ManifestEntry&) { return in; }, m);
  double p = 0, s = 0, ui = 0, uo = 0;
  for (const auto& r : ident.rows) {
    p += r.psnr_db, s += r.ssim, ui += r.fractions.under_in, uo += r.fractions.under_out;
    EXPECT_EQ(r.fractions.under_in, r.fractions.under_out);
    EXPECT_EQ(r.fractions.over_in, r.fractions.over_out);
  }
  EXPECT_NEAR(ident.psnr_mean, p / 3, 1e-9);
  EXPECT_NEAR(ident.ssim_mean, s / 3, 1e-9);
  EXPECT_NEAR(ident.fractions_mean.under_in, ui / 3, 1e-9);
  EXPECT_NEAR(ident.fractions_mean.under_out, uo / 3, 1e-9);
  EXPECT_TRUE(ident.wall_ms_mean.has_value());
  EXPECT_FALSE(format_table(ident).empty());
}

TEST(Eval, FailuresAreRecordedAndSkipped) {
  TempDir dir("metrics");
  auto m = eval_set(dir.path());
  fs::remove(m.entries[1].target);
  const auto r = eval_dataset([](const ImageRGB& in, const ManifestEntry&) { return in; }, m);
  EXPECT_EQ(r.evaluated, 2u);
  EXPECT_EQ(r.failed, 1u);
  EXPECT_FALSE(r.rows[1].error.empty());
  EXPECT_NEAR(r.psnr_mean, (r.rows[0].psnr_db + r.rows[2].psnr_db) / 2, 1e-9);
  EXPECT_EQ(validate_eval_json(to_json(r)), "");
}

TEST(Eval, ModelReportIsDeterministic) {
  TempDir dir("metrics");
  const auto m = eval_set(dir.path());
  const auto model = small_model();
  EvalOptions opts;
  opts.include_timing = false;
  const auto a = to_json(eval_dataset(model, m, opts));
  opts.jobs = 2;
  const auto b = to_json(eval_dataset(model, m, opts));
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_TRUE(a["wall_ms_mean"].is_null());
}

TEST(Bench, RowsPositiveAndSchemaValid) {
  const auto model = small_model();
  const auto r = bench_inference(model, {{8, 8}, {12, 16}}, 1);
  ASSERT_EQ(r.rows.size(), 2u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.repeats, 1);
    EXPECT_GT(row.median_ms, 0.0);
    EXPECT_GE(row.p95_ms, row.median_ms);
    EXPECT_GT(row.min_ms, 0.0);
  }
  EXPECT_EQ(r.rows[1].height, 12);
  EXPECT_EQ(r.rows[1].width, 16);
  auto j = to_json(r);
  EXPECT_EQ(validate_bench_json(j), "");
  EXPECT_FALSE(format_table(r).empty());
  EXPECT_THROW(bench_inference(model, {{8, 8}}, 0), std::invalid_argument);

  auto broken = j;
  broken["rows"][0].erase("p95_ms");
  EXPECT_NE(validate_bench_json(broken), "");
  broken = j;
  broken["schema"] = 2;
  EXPECT_NE(validate_bench_json(broken), "");
  broken = j;
  broken["rows"] = nlohmann::json::array();
  EXPECT_NE(validate_bench_json(broken), "");
  broken = j;
  broken["rows"][0]["median_ms"] = -1.0;
  EXPECT_NE(validate_bench_json(broken), "");
}

TEST(Eval, SchemaValidatorRejectsBrokenReports) {
  EvalReport r;
  r.rows.push_back({"a", 30.0, 0.9, {}, 1.0, ""});
  r.psnr_mean = 30.0;
  r.ssim_mean = 0.9;
  r.evaluated = 1;
  auto j = to_json(r);
  EXPECT_EQ(validate_eval_json(j), "");
  auto broken = j;
  broken.erase("aggregate");
  EXPECT_NE(validate_eval_json(broken), "");
  broken = j;
  broken["per_image"][0].erase("ssim");
  EXPECT_NE(validate_eval_json(broken), "");
  broken = j;
  broken["schema"] = "1";
  EXPECT_NE(validate_eval_json(broken), "");
}
