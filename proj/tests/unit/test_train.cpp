#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ueg/data.hpp"
#include "ueg/errors.hpp"
#include "ueg/metrics.hpp"
#include "ueg/train.hpp"
#include "unit/test_util.hpp"

using namespace ueg;
using namespace ueg::train;
using ueg::testing::TempDir;

namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.embed_dim = 8;
  c.num_blocks = 1;
  c.geb_widths = {8, 8};
  c.geb_hidden = 8;
  c.geb_pool = 8;
  c.eaf_width = 4;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.lr_base = 1e-3;
  t.eta_min = 1e-4;
  t.batch_size = 2;
  t.warmup_epochs = 1;
  t.epochs_pretrain = 3;
  t.epochs_finetune = 1;
  t.seed = 11;
  return t;
}

DatasetManifest tiny_dataset(const fs::path& root, int n = 4, int size = 16) {
  std::vector<std::pair<std::string, ImageRGB>> clean;
  for (int i = 0; i < n; ++i) clean.push_back({"s" + std::to_string(i), procedural_image(size, size, 50 + i)});
  SynthConfig cfg;
  cfg.seed = 9;
  return precompute_illum(precompute_masks(synthesize_dataset(clean, root, cfg), MaskConfig{}));
}

bool same_params(const ModelState& a, const ModelState& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t k = 0; k < a.params().size(); ++k)
    if (a.params()[k].values != b.params()[k].values) return false;
  return true;
}

std::string read_all(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Schedule, Anchors) {
  TrainConfig cfg;
  cfg.epochs_pretrain = 50;
  const long spe = 10;
  EXPECT_EQ(lr_at(0, spe, cfg), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(150, spe, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(499, spe, cfg), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(75, spe, cfg), 0.5e-4);
  EXPECT_THROW(lr_at(-1, spe, cfg), std::invalid_argument);
}

TEST(Schedule, ContinuousAndBounded) {
  for (int restarts : {0, 1, 3}) {
    Schedule s{.warmup_steps = 100, .total_steps = 1100, .restarts = restarts, .lr_base = 1e-4, .eta_min = 1e-5};
    const long span = s.total_steps - s.warmup_steps;
    std::set<long> cycle_starts;
    for (int k = 1; k <= restarts; ++k) cycle_starts.insert(s.warmup_steps + k * span / (restarts + 1));
    double prev = lr_at(0, s);
    for (long t = 1; t < s.total_steps; ++t) {
      const double lr = lr_at(t, s);
      EXPECT_GE(lr, 0.0);
      EXPECT_LE(lr, s.lr_base * (1 + 1e-12));
      if (cycle_starts.count(t)) {
        EXPECT_NEAR(prev, s.eta_min, 1e-15) << t;
        EXPECT_DOUBLE_EQ(lr, s.lr_base) << t;
      } else {
        EXPECT_LE(std::fabs(lr - prev), 2e-6) << "restarts " << restarts << " step " << t;
      }
      prev = lr;
    }
    EXPECT_DOUBLE_EQ(lr_at(s.total_steps - 1, s), s.eta_min);
  }
}

TEST(Schedule, FinetuneHasNoWarmup) {
  TrainConfig cfg = tiny_train();
  const auto s = schedule_for(Phase::Finetune, 4, cfg);
  EXPECT_EQ(s.warmup_steps, 0);
  EXPECT_EQ(s.total_steps, 4);
  EXPECT_DOUBLE_EQ(lr_at(0, s), cfg.lr_base);
  EXPECT_DOUBLE_EQ(lr_at(3, s), cfg.eta_min);
}

TEST(Adam, SingleStepMovesByLr) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  for (double g : {3.0, -0.02, 1e-3}) {
    ModelState s;
    s.add({"w", {1}, {0.5}});
    auto adam = zero_adam(s);
    adam_step(s, adam, {{g}}, 1e-3, cfg);
    EXPECT_NEAR(0.5 - s.params()[0].values[0], std::copysign(1e-3, g), 1e-7) << g;
    EXPECT_EQ(adam.t, 1);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  auto s = init_model(tiny_model());
  const auto before = s;
  auto adam = zero_adam(s);
  std::vector<std::vector<double>> grads;
  for (const auto& p : s.params()) grads.emplace_back(p.values.size(), 0.0);
  adam_step(s, adam, grads, 1e-3, cfg);
  EXPECT_TRUE(same_params(s, before));
}

TEST(Adam, DecoupledDecayShrinksWithoutGradient) {
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  ModelState s;
  s.add({"w", {1}, {1.0}});
  auto adam = zero_adam(s);
  adam_step(s, adam, {{0.0}}, 0.5, cfg);
  EXPECT_FLOAT_EQ(s.params()[0].values[0], 0.95f);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto s = init_model(tiny_model());
  auto adam = zero_adam(s);
  std::vector<std::vector<double>> grads;
  for (const auto& p : s.params()) grads.emplace_back(p.values.size(), 0.0);
  const std::size_t k = s.index_of("leb.add_head.weight");
  grads[k][0] = NAN;
  try {
    adam_step(s, adam, grads, 1e-3, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("leb.add_head.weight"), std::string::npos);
  }
  grads[k][0] = INFINITY;
  EXPECT_THROW(adam_step(s, adam, grads, 1e-3, TrainConfig{}), NumericError);
  grads.pop_back();
  EXPECT_THROW(adam_step(s, adam, grads, 1e-3, TrainConfig{}), std::invalid_argument);
}

TEST(TrainConfigJson, RoundTripAndValidation) {
  TrainConfig c = tiny_train();
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
  nlohmann::json bad = j;
  bad["learning_rate"] = 1;
  EXPECT_THROW((void)bad.get<TrainConfig>(), ConfigError);
  c.eta_min = c.lr_base;
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_train();
  c.warmup_epochs = 4;
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_train();
  c.batch_size = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

class TrainLoop : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("train_suite");
    samples_ = new std::vector<PairedSample>(load_samples(tiny_dataset(dir_->path())));
  }
  static void TearDownTestSuite() {
    delete samples_;
    delete dir_;
  }
  static TempDir* dir_;
  static std::vector<PairedSample>* samples_;
};

TempDir* TrainLoop::dir_ = nullptr;
std::vector<PairedSample>* TrainLoop::samples_ = nullptr;

TEST_F(TrainLoop, ZeroEpochsOnlyMarksPhase) {
  TrainConfig cfg = tiny_train();
  cfg.epochs_finetune = 0;
  auto state = initial_state(tiny_model(), cfg);
  const auto before = state.model;
  train_phase(state, *samples_, cfg, {}, Phase::Finetune);
  EXPECT_EQ(state.phase, Phase::Finetune);
  EXPECT_EQ(state.step, 0);
  EXPECT_TRUE(same_params(state.model, before));
}

TEST_F(TrainLoop, GradientReachesEveryGroup) {
  auto state = initial_state(tiny_model(), tiny_train());
  const auto before = state.model;
  std::vector<std::vector<double>> grads;
  const losses::RandomConvExtractor extractor(7);
  const auto r = batch_gradients(state.model, {(*samples_)[0], (*samples_)[1]}, Phase::Pretrain, {}, extractor, grads);
  EXPECT_GT(r.report.total, 0.0);
  adam_step(state.model, state.adam, grads, 1e-3, tiny_train());
  std::set<std::string> changed;
  for (std::size_t k = 0; k < before.params().size(); ++k) {
    if (before.params()[k].values != state.model.params()[k].values) {
      const auto& name = before.params()[k].name;
      changed.insert(name.substr(0, name.find('.')));
    }
  }
  EXPECT_EQ(changed, (std::set<std::string>{"eaf", "gamg", "geb", "leb"}));
}

TEST_F(TrainLoop, BatchGradientsIndependentOfJobs) {
  const auto model = init_model(tiny_model());
  const losses::RandomConvExtractor extractor(7);
  std::vector<std::vector<double>> g1, g3;
  const std::vector<PairedSample> batch(samples_->begin(), samples_->end());
  const auto r1 = batch_gradients(model, batch, Phase::Finetune, {}, extractor, g1, 1);
  const auto r3 = batch_gradients(model, batch, Phase::Finetune, {}, extractor, g3, 3);
  EXPECT_EQ(g1, g3);
  EXPECT_EQ(r1.report.total, r3.report.total);
  EXPECT_TRUE(r1.report.per_term.count("attention"));
  EXPECT_TRUE(r1.report.per_term.count("poisson_kl"));
}

TEST_F(TrainLoop, SmokeLossDecreases) {
  TrainConfig cfg = tiny_train();
  cfg.batch_size = 4;
  cfg.warmup_epochs = 2;
  cfg.epochs_pretrain = 50;
  std::vector<double> totals;
  PhaseOptions opts;
  opts.on_step = [&](long, const StepResult& r) { totals.push_back(r.report.total); };
  auto state = initial_state(tiny_model(), cfg);
  train_phase(state, *samples_, cfg, {}, Phase::Pretrain, opts);
  ASSERT_EQ(totals.size(), 50u);
  auto avg = [&](std::size_t from) { return (totals[from] + totals[from + 1] + totals[from + 2] + totals[from + 3] + totals[from + 4]) / 5; };
  EXPECT_LT(avg(45), avg(0));
  EXPECT_LT(totals.back(), totals.front());
}

TEST_F(TrainLoop, DeterministicRuns) {
  const TrainConfig cfg = tiny_train();
  auto a = initial_state(tiny_model(), cfg);
  auto b = initial_state(tiny_model(), cfg);
  train_phase(a, *samples_, cfg, {}, Phase::Pretrain);
  train_phase(b, *samples_, cfg, {}, Phase::Pretrain);
  EXPECT_TRUE(same_params(a.model, b.model));
  EXPECT_EQ(a.step, 6);
}

TEST_F(TrainLoop, ResumeFromMidEpochIsBitExact) {
  TempDir ck("ckpt");
  TrainConfig cfg = tiny_train();
  cfg.checkpoint_every_steps = 3;
  cfg.patch_size = 12;
  PhaseOptions opts;
  opts.checkpoint_dir = ck.path();
  auto full = initial_state(tiny_model(), cfg);
  train_phase(full, *samples_, cfg, {}, Phase::Pretrain, opts);
  train_phase(full, *samples_, cfg, {}, Phase::Finetune, opts);
  ASSERT_TRUE(fs::exists(ck / "pretrain_step_3.ckpt"));
  EXPECT_TRUE(fs::exists(ck / "epoch_1.ckpt"));
  EXPECT_TRUE(fs::exists(ck / "epoch_3.ckpt"));

  auto resumed = load_train_state(ck / "pretrain_step_3.ckpt");
  EXPECT_EQ(resumed.step, 3);
  EXPECT_EQ(resumed.phase, Phase::Pretrain);
  train_phase(resumed, *samples_, cfg, {}, Phase::Pretrain);
  train_phase(resumed, *samples_, cfg, {}, Phase::Finetune);
  EXPECT_TRUE(same_params(resumed.model, full.model));
  EXPECT_EQ(resumed.adam.m, full.adam.m);
  EXPECT_EQ(resumed.adam.v, full.adam.v);

  // An interrupted run picks up from where stop_at_step left it.
  auto part = initial_state(tiny_model(), cfg);
  PhaseOptions stop;
  stop.stop_at_step = 4;
  train_phase(part, *samples_, cfg, {}, Phase::Pretrain, stop);
  EXPECT_EQ(part.step, 4);
  train_phase(part, *samples_, cfg, {}, Phase::Pretrain);
  train_phase(part, *samples_, cfg, {}, Phase::Finetune);
  EXPECT_TRUE(same_params(part.model, full.model));
}

TEST_F(TrainLoop, LogLinesAreJson) {
  TrainConfig cfg = tiny_train();
  std::ostringstream log;
  PhaseOptions opts;
  opts.log = &log;
  auto state = initial_state(tiny_model(), cfg);
  train_phase(state, *samples_, cfg, {}, Phase::Finetune, opts);
  std::istringstream in(log.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("phase"), "finetune");
    EXPECT_EQ(j.at("step"), ++n);
    EXPECT_TRUE(j.at("terms").contains("l1"));
    EXPECT_DOUBLE_EQ(j.at("lr").get<double>(), n == 1 ? cfg.lr_base : cfg.eta_min);
  }
  EXPECT_EQ(n, 2);
}

TEST_F(TrainLoop, EmptySamplesRejected) {
  auto state = initial_state(tiny_model(), tiny_train());
  EXPECT_THROW(train_phase(state, std::vector<PairedSample>{}, tiny_train(), {}, Phase::Pretrain), DataError);
}

namespace {

RunConfig tiny_run(const fs::path& data_root) {
  RunConfig c;
  c.model = tiny_model();
  c.train = tiny_train();
  c.train.epochs_pretrain = 1;
  c.train.warmup_epochs = 0;
  c.data.low_dir = (data_root / "low").string();
  c.data.high_dir = (data_root / "high").string();
  c.data.samples_to_write = 2;
  return c;
}

void write_raw_pairs(const fs::path& root) {
  std::vector<std::pair<std::string, ImageRGB>> clean;
  for (int i = 0; i < 3; ++i) clean.push_back({"r" + std::to_string(i), procedural_image(16, 16, 70 + i)});
  synthesize_dataset(clean, root, SynthConfig{});
}

}  // namespace

TEST(Run, DryRunTouchesNothing) {
  TempDir data("raw"), out("run");
  write_raw_pairs(data.path());
  RunOptions opts;
  opts.out_dir = out / "r";
  opts.dry_run = true;
  const auto r = run(tiny_run(data.path()), opts);
  EXPECT_TRUE(r.dry_run);
  EXPECT_FALSE(fs::exists(out / "r"));
  EXPECT_FALSE(fs::exists(data / "masks"));

  auto bad = tiny_run(data.path());
  bad.train.batch_size = 0;
  EXPECT_THROW(run(bad, opts), ConfigError);
  bad = tiny_run(data.path());
  bad.data.low_dir = (data / "missing").string();
  EXPECT_THROW(run(bad, opts), IoError);
}

TEST(Run, FullRunWritesLayoutAndEchoesConfig) {
  TempDir data("raw"), out("run");
  write_raw_pairs(data.path());
  const auto cfg = tiny_run(data.path());
  const std::string input_text = nlohmann::json(cfg).dump(4) + "\n";
  std::ofstream(out / "in.json") << input_text;
  RunOptions opts;
  opts.out_dir = out / "r";
  opts.input_config = out / "in.json";
  const auto r = run(load_run_config(out / "in.json"), opts);
  EXPECT_EQ(read_all(out / "r" / "config.input.json"), input_text);
  EXPECT_EQ(parse_run_config(nlohmann::json::parse(read_all(out / "r" / "config.json"))).train, cfg.train);
  EXPECT_TRUE(fs::exists(r.final_checkpoint));
  EXPECT_TRUE(fs::exists(out / "r" / "checkpoints" / "epoch_1.ckpt"));
  EXPECT_TRUE(fs::exists(out / "r" / "checkpoints" / "epoch_2.ckpt"));
  EXPECT_TRUE(fs::exists(out / "r" / "samples" / "r0_out.png"));
  EXPECT_TRUE(fs::exists(out / "r" / "train.log"));
  const auto report = nlohmann::json::parse(read_all(r.eval_report));
  EXPECT_EQ(metrics::validate_eval_json(report), "");

  std::set<std::string> phases;
  std::ifstream log(out / "r" / "train.log");
  for (std::string line; std::getline(log, line);) phases.insert(nlohmann::json::parse(line).at("phase").get<std::string>());
  EXPECT_EQ(phases, (std::set<std::string>{"pretrain", "finetune"}));

  // Finetune-only from the produced checkpoint skips pretraining entirely.
  RunOptions ft;
  ft.out_dir = out / "ft";
  ft.mode = RunMode::FinetuneOnly;
  ft.init_checkpoint = r.final_checkpoint;
  run(cfg, ft);
  phases.clear();
  std::ifstream log2(out / "ft" / "train.log");
  for (std::string line; std::getline(log2, line);) phases.insert(nlohmann::json::parse(line).at("phase").get<std::string>());
  EXPECT_EQ(phases, (std::set<std::string>{"finetune"}));
  EXPECT_TRUE(fs::exists(out / "ft" / "checkpoints" / "epoch_1.ckpt"));

  RunOptions missing;
  missing.out_dir = out / "x";
  missing.mode = RunMode::FinetuneOnly;
  EXPECT_THROW(run(cfg, missing), ConfigError);
}

TEST(Run, StageNameIsReported) {
  TempDir out("run");
  RunConfig c;
  c.model = tiny_model();
  c.data.manifest = (out / "nope.json").string();
  RunOptions opts;
  opts.out_dir = out / "r";
  try {
    run(c, opts);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("[precompute]", 0), 0u) << e.what();
  }
}

TEST(RunConfigJson, UnknownNestedKeyIsNamed) {
  nlohmann::json j = RunConfig{};
  j["train"]["lr"] = 1;
  try {
    parse_run_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}
