#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ueg/data.hpp"
#include "ueg/losses.hpp"
#include "ueg/masks.hpp"
#include "ueg/model.hpp"

namespace ueg::train {

struct TrainConfig {
  double lr_base = 1e-4;
  std::array<double, 2> betas{0.9, 0.999};
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  int batch_size = 4;
  int warmup_epochs = 15;
  double eta_min = 1e-5;
  int epochs_pretrain = 50;
  int epochs_finetune = 10;
  int restarts = 0;
  std::uint64_t seed = 0;
  bool deterministic = true;
  /// Square random crop side used for training; 0 trains on full images.
  int patch_size = 0;
  /// Extra checkpoint every N optimizer steps (0 = only at epoch ends).
  int checkpoint_every_steps = 0;
  /// Worker threads over the samples of a batch.
  int jobs = 1;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void validate(const TrainConfig& c);

enum class Phase { Pretrain, Finetune };
std::string phase_name(Phase p);
Phase parse_phase(const std::string& s);

/// Step-indexed schedule: linear warmup over `warmup_steps`, then restarts+1
/// cosine cycles down to eta_min, the last step of each cycle landing on eta_min.
struct Schedule {
  long warmup_steps = 0;
  long total_steps = 0;
  int restarts = 0;
  double lr_base = 1e-4;
  double eta_min = 1e-5;
};

double lr_at(long step, const Schedule& s);
/// Pretraining schedule derived from the epoch counts of `cfg`.
double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg);
Schedule schedule_for(Phase phase, long steps_per_epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;
};

AdamState zero_adam(const ModelState& model);

/// One Adam update with bias correction, then decoupled decay theta -= wd*lr*theta.
/// Parameters and moments are kept float-representable. Throws NumericError on
/// non-finite gradients, naming the parameter.
void adam_step(ModelState& model, AdamState& adam, const std::vector<std::vector<double>>& grads, double lr,
               const TrainConfig& cfg);

struct TrainState {
  ModelState model;
  AdamState adam;
  /// Optimizer steps completed in the current phase.
  long step = 0;
  Phase phase = Phase::Pretrain;
  std::uint64_t seed = 0;
};

TrainState initial_state(const ModelConfig& model, const TrainConfig& cfg);

void save_train_state(const TrainState& s, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

struct StepResult {
  double lr = 0.0;
  losses::LossReport report;
};

struct PhaseOptions {
  /// JSON-lines sink for per-step loss reports.
  std::ostream* log = nullptr;
  /// Human-readable progress sink.
  std::ostream* progress = nullptr;
  /// Directory for epoch checkpoints; empty disables checkpointing.
  std::filesystem::path checkpoint_dir;
  /// Epochs completed before this phase, used for checkpoint numbering.
  int epoch_offset = 0;
  /// Stop after this many steps of the phase (for interruption tests); negative = no limit.
  long stop_at_step = -1;
  std::function<void(long step, const StepResult&)> on_step;
};

/// Computes the phase loss and parameter gradients for one batch (mean over samples).
StepResult batch_gradients(const ModelState& model, const std::vector<PairedSample>& batch, Phase phase,
                           const losses::LossWeights& w, const losses::FeatureExtractor& extractor,
                           std::vector<std::vector<double>>& grads, int jobs = 1);

/// Trains one phase to completion (or to stop_at_step), resuming from state.step.
void train_phase(TrainState& state, const std::vector<PairedSample>& samples, const TrainConfig& cfg,
                 const losses::LossWeights& w, Phase phase, const PhaseOptions& opts = {});
void train_phase(TrainState& state, const DatasetManifest& manifest, const TrainConfig& cfg,
                 const losses::LossWeights& w, Phase phase, const PhaseOptions& opts = {});

std::vector<PairedSample> load_samples(const DatasetManifest& manifest);

// ---- full runs ----

struct DataConfig {
  /// Precomputed manifest (masks + illum present).
  std::string manifest;
  /// Alternatively, paired directories that are scanned and precomputed into the run directory.
  std::string low_dir;
  std::string high_dir;
  /// Optional held-out manifest for the final evaluation (defaults to the training manifest).
  std::string eval_manifest;
  SynthConfig synth;
  int samples_to_write = 4;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  losses::LossWeights loss;
  DataConfig data;
  MaskConfig masks;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Strict parse of the whole document; unknown keys raise ConfigError with their path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void validate(const RunConfig& c);

enum class RunMode { Full, FinetuneOnly };

struct RunOptions {
  std::filesystem::path out_dir;
  /// Copied byte-for-byte to config.input.json when set.
  std::filesystem::path input_config;
  bool dry_run = false;
  RunMode mode = RunMode::Full;
  /// Starting weights (FinetuneOnly requires it).
  std::filesystem::path init_checkpoint;
  /// Resume a partially completed run from this train-state checkpoint.
  std::filesystem::path resume;
  std::ostream* progress = nullptr;
  int jobs = 1;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path eval_report;
  bool dry_run = false;
};

/// precompute (if needed) -> pretrain -> finetune -> evaluation, inside out_dir.
/// Errors are re-raised with the failing stage's name prefixed.
RunResult run(const RunConfig& cfg, const RunOptions& opts);

}  // namespace ueg::train
