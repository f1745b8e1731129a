#include "ueg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ueg/errors.hpp"
#include "ueg/json_util.hpp"
#include "ueg/metrics.hpp"
#include "ueg/parallel.hpp"

namespace fs = std::filesystem;

namespace ueg::train {

using ad::Var;

// ---------------------------------------------------------------------------
// Configuration

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr_base", c.lr_base},
                     {"betas", c.betas},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"warmup_epochs", c.warmup_epochs},
                     {"eta_min", c.eta_min},
                     {"epochs_pretrain", c.epochs_pretrain},
                     {"epochs_finetune", c.epochs_finetune},
                     {"restarts", c.restarts},
                     {"seed", c.seed},
                     {"deterministic", c.deterministic},
                     {"patch_size", c.patch_size},
                     {"checkpoint_every_steps", c.checkpoint_every_steps},
                     {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  StrictObject o(j, "train");
  o.get("lr_base", c.lr_base);
  o.get("betas", c.betas);
  o.get("adam_eps", c.adam_eps);
  o.get("weight_decay", c.weight_decay);
  o.get("batch_size", c.batch_size);
  o.get("warmup_epochs", c.warmup_epochs);
  o.get("eta_min", c.eta_min);
  o.get("epochs_pretrain", c.epochs_pretrain);
  o.get("epochs_finetune", c.epochs_finetune);
  o.get("restarts", c.restarts);
  o.get("seed", c.seed);
  o.get("deterministic", c.deterministic);
  o.get("patch_size", c.patch_size);
  o.get("checkpoint_every_steps", c.checkpoint_every_steps);
  o.get("jobs", c.jobs);
  o.finish();
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(c.lr_base > 0.0) || !(c.eta_min >= 0.0) || !(c.eta_min < c.lr_base)) fail("need 0 <= eta_min < lr_base");
  for (double b : c.betas) {
    if (!(b >= 0.0 && b < 1.0)) fail("betas must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (c.epochs_pretrain < 0 || c.epochs_finetune < 0) fail("epoch counts must be >= 0");
  if (c.warmup_epochs < 0 || c.warmup_epochs > c.epochs_pretrain) fail("need 0 <= warmup_epochs <= epochs_pretrain");
  if (c.restarts < 0) fail("restarts must be >= 0");
  if (c.patch_size != 0 && c.patch_size < 11) fail("patch_size must be 0 (full image) or >= 11");
  if (c.checkpoint_every_steps < 0) fail("checkpoint_every_steps must be >= 0");
  if (c.jobs < 1) fail("jobs must be >= 1");
}

std::string phase_name(Phase p) { return p == Phase::Pretrain ? "pretrain" : "finetune"; }

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::Pretrain;
  if (s == "finetune") return Phase::Finetune;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

// ---------------------------------------------------------------------------
// Schedule

double lr_at(long step, const Schedule& s) {
  if (step < 0) {
    throw std::invalid_argument("lr_at: step must be >= 0");
  }
  if (step < s.warmup_steps) {
    return s.lr_base * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const long span = s.total_steps - s.warmup_steps;
  if (span <= 0 || step >= s.total_steps) {
    return s.eta_min;
  }
  const long cycles = s.restarts + 1;
  auto boundary = [&](long k) { return s.warmup_steps + (k * span) / cycles; };
  long k = 0;
  while (k + 1 < cycles && step >= boundary(k + 1)) {
    ++k;
  }
  const long start = boundary(k);
  const long last = boundary(k + 1) - 1;
  const double progress = last > start ? static_cast<double>(step - start) / static_cast<double>(last - start) : 1.0;
  return s.eta_min + 0.5 * (s.lr_base - s.eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

Schedule schedule_for(Phase phase, long steps_per_epoch, const TrainConfig& cfg) {
  Schedule s;
  s.lr_base = cfg.lr_base;
  s.eta_min = cfg.eta_min;
  s.restarts = cfg.restarts;
  if (phase == Phase::Pretrain) {
    s.warmup_steps = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
    s.total_steps = static_cast<long>(cfg.epochs_pretrain) * steps_per_epoch;
  } else {
    s.total_steps = static_cast<long>(cfg.epochs_finetune) * steps_per_epoch;
  }
  return s;
}

double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg) {
  return lr_at(step, schedule_for(Phase::Pretrain, steps_per_epoch, cfg));
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState zero_adam(const ModelState& model) {
  AdamState a;
  for (const auto& p : model.params()) {
    a.m.emplace_back(p.values.size(), 0.0);
    a.v.emplace_back(p.values.size(), 0.0);
  }
  return a;
}

namespace {

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void adam_step(ModelState& model, AdamState& adam, const std::vector<std::vector<double>>& grads, double lr,
               const TrainConfig& cfg) {
  auto& params = model.params();
  if (grads.size() != params.size() || adam.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradients are not aligned with parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].values.size()) {
      throw std::invalid_argument("adam_step: gradient size mismatch for '" + params[k].name + "'");
    }
    for (double g : grads[k]) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + params[k].name + "'");
      }
    }
  }
  const auto [b1, b2] = cfg.betas;
  adam.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k].values;
    auto& m = adam.m[k];
    auto& v = adam.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[k][i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      double t = theta[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
      t -= cfg.weight_decay * lr * t;
      theta[i] = to_float(t);
      m[i] = to_float(m[i]);
      v[i] = to_float(v[i]);
    }
  }
}

TrainState initial_state(const ModelConfig& model, const TrainConfig& cfg) {
  TrainState s;
  s.model = init_model(model);
  s.adam = zero_adam(s.model);
  s.seed = cfg.seed;
  return s;
}

void save_train_state(const TrainState& s, const fs::path& path) {
  CheckpointExtras extras;
  extras.meta = {{"step", s.step}, {"phase", phase_name(s.phase)}, {"seed", s.seed}, {"adam_t", s.adam.t}};
  for (std::size_t k = 0; k < s.model.params().size(); ++k) {
    const auto& p = s.model.params()[k];
    extras.arrays.push_back({"adam.m/" + p.name, p.shape, s.adam.m[k]});
    extras.arrays.push_back({"adam.v/" + p.name, p.shape, s.adam.v[k]});
  }
  save_checkpoint(s.model, path, extras);
}

TrainState load_train_state(const fs::path& path, const ModelConfig* expected) {
  CheckpointExtras extras;
  TrainState s;
  s.model = expected ? load_checkpoint(path, *expected, &extras) : load_checkpoint(path, &extras);
  s.adam = zero_adam(s.model);
  std::map<std::string, const ParamArray*> arrays;
  for (const auto& a : extras.arrays) {
    arrays[a.name] = &a;
  }
  for (std::size_t k = 0; k < s.model.params().size(); ++k) {
    const auto& name = s.model.params()[k].name;
    const auto m = arrays.find("adam.m/" + name);
    const auto v = arrays.find("adam.v/" + name);
    if (m == arrays.end() || v == arrays.end()) {
      throw IoError("checkpoint '" + path.string() + "' has no optimizer state for '" + name + "'");
    }
    s.adam.m[k] = m->second->values;
    s.adam.v[k] = v->second->values;
  }
  try {
    s.step = extras.meta.at("step").get<long>();
    s.phase = parse_phase(extras.meta.at("phase").get<std::string>());
    s.seed = extras.meta.at("seed").get<std::uint64_t>();
    s.adam.t = extras.meta.at("adam_t").get<long>();
  } catch (const std::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' lacks training metadata: " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

StepResult batch_gradients(const ModelState& model, const std::vector<PairedSample>& batch, Phase phase,
                           const losses::LossWeights& w, const losses::FeatureExtractor& extractor,
                           std::vector<std::vector<double>>& grads, int jobs) {
  const std::size_t n = batch.size();
  const std::size_t np = model.params().size();
  std::vector<std::vector<std::vector<double>>> per_sample(n);
  std::vector<losses::LossReport> reports(n);
  const auto errors = parallel_for(n, jobs, [&](std::size_t i) {
    const PairedSample& s = batch[i];
    const BoundParams p(model, true);
    const Var img = ad::constant(to_tensor(s.input));
    const Var y = ad::constant(to_tensor(s.target));
    const Var attn_target = ad::constant(losses::attention_target_tensor(s.attn_target));
    const GraphOutput g = forward_graph(img, p, model.config);
    losses::LossGraph lg;
    if (phase == Phase::Pretrain) {
      lg = losses::pretrain_total(g, y, img, attn_target, w, extractor);
    } else {
      lg = losses::finetune_total(g, y, w);
      // The attention map stays supervised while finetuning.
      const Var attn = losses::attention_loss(g.attn, attn_target, w.charbonnier_eps);
      lg.report.per_term["attention"] = attn.item();
      lg.report.weights["attention"] = 1.0;
      lg.report.total += attn.item();
      lg.total = ad::add(lg.total, attn);
    }
    if (!std::isfinite(lg.report.total)) {
      throw NumericError("non-finite " + phase_name(phase) + " loss on sample '" + s.id + "'");
    }
    ad::backward(lg.total);
    auto& out = per_sample[i];
    out.resize(np);
    for (std::size_t k = 0; k < np; ++k) {
      const auto& gv = p.vars()[k].grad();
      out[k] = gv.empty() ? std::vector<double>(model.params()[k].values.size(), 0.0) : gv.storage();
    }
    reports[i] = std::move(lg.report);
  });
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }

  // Fixed summation order keeps results independent of the thread count.
  grads.assign(np, {});
  StepResult result;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < np; ++k) {
    grads[k].assign(model.params()[k].values.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < grads[k].size(); ++j) {
        grads[k][j] += per_sample[i][k][j];
      }
    }
    for (double& g : grads[k]) {
      g *= inv;
    }
  }
  for (const auto& r : reports) {
    result.report.total += r.total * inv;
    for (const auto& [name, v] : r.per_term) {
      result.report.per_term[name] += v * inv;
    }
    result.report.weights = r.weights;
  }
  return result;
}

namespace {

std::uint64_t phase_salt(Phase p) { return p == Phase::Pretrain ? 0x70726574ULL : 0x66696e65ULL; }

}  // namespace

std::vector<PairedSample> load_samples(const DatasetManifest& manifest) {
  if (!manifest.has_masks() || !manifest.has_illum()) {
    throw DataError("manifest has no precomputed masks/illumination maps; run masks first");
  }
  std::vector<PairedSample> samples;
  samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    samples.push_back(load_sample(e));
  }
  return samples;
}

void train_phase(TrainState& state, const std::vector<PairedSample>& samples, const TrainConfig& cfg,
                 const losses::LossWeights& w, Phase phase, const PhaseOptions& opts) {
  validate(cfg);
  if (samples.empty()) {
    throw DataError("train_phase: no training samples");
  }
  if (state.phase != phase) {
    state.phase = phase;
    state.step = 0;
    state.adam = zero_adam(state.model);
  }
  const long n = static_cast<long>(samples.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule sched = schedule_for(phase, steps_per_epoch, cfg);
  const losses::RandomConvExtractor extractor(w.perceptual_seed);
  const std::uint64_t salt = mix_seed(state.seed, phase_salt(phase));
  std::vector<std::vector<double>> grads;

  while (state.step < sched.total_steps) {
    if (opts.stop_at_step >= 0 && state.step >= opts.stop_at_step) {
      return;
    }
    const long epoch = state.step / steps_per_epoch;
    const auto batches = make_batches(static_cast<std::size_t>(n), cfg.batch_size, salt, static_cast<std::uint64_t>(epoch));
    const auto& indices = batches[static_cast<std::size_t>(state.step % steps_per_epoch)];
    Rng crop_rng(mix_seed(salt ^ 0x63726f70ULL, static_cast<std::uint64_t>(state.step)));
    std::vector<PairedSample> batch;
    for (std::size_t idx : indices) {
      const PairedSample& s = samples[idx];
      const int side = std::min({cfg.patch_size, s.input.height(), s.input.width()});
      batch.push_back(cfg.patch_size > 0 ? random_crop_pair(s, side, crop_rng) : s);
    }

    StepResult r = batch_gradients(state.model, batch, phase, w, extractor, grads, cfg.jobs);
    r.lr = lr_at(state.step, sched);
    adam_step(state.model, state.adam, grads, r.lr, cfg);
    ++state.step;

    if (opts.log) {
      nlohmann::json line{{"step", state.step},
                          {"epoch", opts.epoch_offset + epoch + 1},
                          {"phase", phase_name(phase)},
                          {"total", r.report.total},
                          {"terms", r.report.per_term},
                          {"lr", r.lr}};
      *opts.log << line.dump() << '\n' << std::flush;
    }
    if (opts.on_step) {
      opts.on_step(state.step, r);
    }
    const bool epoch_end = state.step % steps_per_epoch == 0;
    if (epoch_end && opts.progress) {
      *opts.progress << "[" << phase_name(phase) << "] epoch " << (epoch + 1) << "/" << sched.total_steps / steps_per_epoch
                     << " step " << state.step << " loss " << std::setprecision(6) << r.report.total << " lr "
                     << r.lr << '\n'
                     << std::flush;
    }
    if (!opts.checkpoint_dir.empty()) {
      if (epoch_end) {
        save_train_state(state, opts.checkpoint_dir / ("epoch_" + std::to_string(opts.epoch_offset + epoch + 1) + ".ckpt"));
      } else if (cfg.checkpoint_every_steps > 0 && state.step % cfg.checkpoint_every_steps == 0) {
        save_train_state(state, opts.checkpoint_dir / (phase_name(phase) + "_step_" + std::to_string(state.step) + ".ckpt"));
      }
    }
  }
}

void train_phase(TrainState& state, const DatasetManifest& manifest, const TrainConfig& cfg,
                 const losses::LossWeights& w, Phase phase, const PhaseOptions& opts) {
  train_phase(state, load_samples(manifest), cfg, w, phase, opts);
}

// ---------------------------------------------------------------------------
// Run configuration

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"manifest", c.manifest},         {"low_dir", c.low_dir},
                     {"high_dir", c.high_dir},         {"eval_manifest", c.eval_manifest},
                     {"synth", c.synth},               {"samples_to_write", c.samples_to_write}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  StrictObject o(j, "data");
  o.get("manifest", c.manifest);
  o.get("low_dir", c.low_dir);
  o.get("high_dir", c.high_dir);
  o.get("eval_manifest", c.eval_manifest);
  if (o.contains("synth")) {
    c.synth = o.raw("synth").get<SynthConfig>();
  }
  o.get("samples_to_write", c.samples_to_write);
  o.finish();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"train", c.train}, {"loss", c.loss}, {"data", c.data}, {"masks", c.masks}};
}

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  StrictObject o(j, "");
  // Sections parse through their own strict readers so nested paths are reported.
  if (o.contains("model")) c.model = o.raw("model").get<ModelConfig>();
  if (o.contains("train")) c.train = o.raw("train").get<TrainConfig>();
  if (o.contains("loss")) c.loss = o.raw("loss").get<losses::LossWeights>();
  if (o.contains("data")) c.data = o.raw("data").get<DataConfig>();
  if (o.contains("masks")) c.masks = o.raw("masks").get<MaskConfig>();
  o.finish();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config file not found: '" + path.string() + "'");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

void validate(const RunConfig& c) {
  ueg::validate(c.model);
  validate(c.train);
  losses::validate(c.loss);
  ueg::validate(c.masks);
  ueg::validate(c.data.synth);
  if (c.data.samples_to_write < 0) {
    throw ConfigError("data.samples_to_write must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Full run

namespace {

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  const std::string prefix = "[" + stage + "] ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(prefix + e.what());
  }
}

DatasetManifest training_manifest(const RunConfig& cfg, const fs::path& out_dir, bool dry_run, int jobs) {
  if (!cfg.data.manifest.empty()) {
    DatasetManifest m = load_manifest(cfg.data.manifest);
    if (!m.has_masks() || !m.has_illum()) {
      throw DataError("manifest '" + cfg.data.manifest + "' has no precomputed masks/illumination maps; run masks first");
    }
    return m;
  }
  if (cfg.data.low_dir.empty() || cfg.data.high_dir.empty()) {
    throw ConfigError("data: set either 'manifest' or both 'low_dir' and 'high_dir'");
  }
  DatasetManifest m = scan_paired_dir(cfg.data.low_dir, cfg.data.high_dir);
  if (dry_run) {
    return m;
  }
  m.root = out_dir / "data";
  m = precompute_illum(precompute_masks(m, cfg.masks, jobs), jobs);
  save_manifest(m, m.root / "manifest.json");
  return m;
}

}  // namespace

RunResult run(const RunConfig& cfg, const RunOptions& opts) {
  in_stage("config", [&] { validate(cfg); });
  RunResult result;
  std::ostream* progress = opts.progress;
  auto say = [&](const std::string& s) {
    if (progress) *progress << s << '\n' << std::flush;
  };
  if (opts.mode == RunMode::FinetuneOnly && opts.init_checkpoint.empty() && opts.resume.empty()) {
    throw ConfigError("[config] finetune-only mode needs a starting checkpoint");
  }

  if (opts.dry_run) {
    in_stage("precompute", [&] { (void)training_manifest(cfg, opts.out_dir, true, opts.jobs); });
    if (!cfg.data.eval_manifest.empty()) {
      in_stage("eval", [&] { (void)load_manifest(cfg.data.eval_manifest); });
    }
    say("dry run: configuration valid, data sources present; nothing written");
    result.dry_run = true;
    return result;
  }

  const fs::path out = opts.out_dir;
  in_stage("setup", [&] {
    fs::create_directories(out / "checkpoints");
    std::ofstream echo(out / "config.json");
    if (!echo) throw IoError("cannot write '" + (out / "config.json").string() + "'");
    echo << nlohmann::json(cfg).dump(2) << '\n';
    if (!opts.input_config.empty()) {
      fs::copy_file(opts.input_config, out / "config.input.json", fs::copy_options::overwrite_existing);
    }
  });

  const DatasetManifest manifest = in_stage("precompute", [&] { return training_manifest(cfg, out, false, opts.jobs); });
  const std::vector<PairedSample> samples = in_stage("precompute", [&] { return load_samples(manifest); });

  TrainState state = in_stage("setup", [&] {
    if (!opts.resume.empty()) {
      return load_train_state(opts.resume, &cfg.model);
    }
    TrainState s = initial_state(cfg.model, cfg.train);
    if (!opts.init_checkpoint.empty()) {
      s.model = load_checkpoint(opts.init_checkpoint, cfg.model);
    }
    if (opts.mode == RunMode::FinetuneOnly) {
      s.phase = Phase::Finetune;
    }
    return s;
  });
  const bool resuming = !opts.resume.empty();

  std::ofstream log(out / "train.log", resuming ? std::ios::app : std::ios::trunc);
  PhaseOptions popts;
  popts.log = &log;
  popts.progress = progress;
  popts.checkpoint_dir = out / "checkpoints";

  if (opts.mode == RunMode::Full && state.phase == Phase::Pretrain) {
    say("pretraining: " + std::to_string(cfg.train.epochs_pretrain) + " epochs on " + std::to_string(samples.size()) +
        " samples");
    in_stage("pretrain", [&] { train_phase(state, samples, cfg.train, cfg.loss, Phase::Pretrain, popts); });
  }
  popts.epoch_offset = opts.mode == RunMode::Full ? cfg.train.epochs_pretrain : 0;
  say("finetuning: " + std::to_string(cfg.train.epochs_finetune) + " epochs");
  in_stage("finetune", [&] { train_phase(state, samples, cfg.train, cfg.loss, Phase::Finetune, popts); });

  result.final_checkpoint = out / "checkpoints" / "final.ckpt";
  in_stage("finetune", [&] { save_train_state(state, result.final_checkpoint); });

  in_stage("eval", [&] {
    const DatasetManifest eval_set = cfg.data.eval_manifest.empty() ? manifest : load_manifest(cfg.data.eval_manifest);
    metrics::EvalOptions eopts;
    eopts.include_timing = !cfg.train.deterministic;
    eopts.jobs = opts.jobs;
    const metrics::EvalReport report = metrics::eval_dataset(state.model, eval_set, eopts);
    result.eval_report = out / "eval.json";
    std::ofstream(result.eval_report) << metrics::to_json(report).dump(2) << '\n';
    std::ofstream(out / "eval.txt") << metrics::format_table(report);
    fs::create_directories(out / "samples");
    const std::size_t n = std::min<std::size_t>(eval_set.entries.size(), static_cast<std::size_t>(cfg.data.samples_to_write));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = eval_set.entries[i];
      save_image(forward(load_image(e.input), state.model).image, out / "samples" / (e.id + "_out.png"));
    }
    std::ostringstream line;
    line << std::fixed << std::setprecision(3) << "eval: PSNR " << report.psnr_mean << " dB, SSIM " << report.ssim_mean
         << " over " << report.evaluated << " images";
    say(line.str());
  });
  return result;
}

}  // namespace ueg::train
