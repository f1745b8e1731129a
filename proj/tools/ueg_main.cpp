// Command-line entry point: masks, synth, train, finetune, enhance, eval, bench.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ueg/data.hpp"
#include "ueg/errors.hpp"
#include "ueg/imaging.hpp"
#include "ueg/metrics.hpp"
#include "ueg/model.hpp"
#include "ueg/train.hpp"

namespace fs = std::filesystem;
using namespace ueg;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int jobs = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON run configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed overriding the configuration");
  cmd->add_flag("--deterministic", c.deterministic, "Pin every source of run-to-run variation");
  cmd->add_option("--jobs", c.jobs, "Worker threads for per-image work")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, out_help);
}

train::RunConfig load_config(const Common& c) {
  train::RunConfig cfg = c.config.empty() ? train::RunConfig{} : train::load_run_config(c.config);
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.data.synth.seed = *c.seed;
  }
  if (c.deterministic) {
    cfg.train.deterministic = true;
  }
  cfg.train.jobs = c.jobs;
  return cfg;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      const int n = std::stoi(s);
      return {n, n};
    }
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("invalid size '" + s + "' (expected N or HxW)");
  }
}

std::vector<fs::path> collect_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& f : fs::directory_iterator(in)) {
        if (f.is_regular_file() && f.path().extension() == ".png") found.push_back(f.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  return files;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

// ---------------------------------------------------------------------------

struct MasksArgs {
  Common common;
  std::string data;
  std::string manifest;
  std::string mode;
  std::optional<int> downsample;
  std::optional<double> blur_sigma;
};

int cmd_masks(const MasksArgs& a) {
  train::RunConfig cfg = load_config(a.common);
  if (!a.mode.empty()) cfg.masks.mode = a.mode;
  if (a.downsample) cfg.masks.downsample = *a.downsample;
  if (a.blur_sigma) cfg.masks.blur_sigma = *a.blur_sigma;
  validate(cfg.masks);

  DatasetManifest m;
  fs::path manifest_out;
  if (!a.manifest.empty()) {
    m = load_manifest(a.manifest);
    manifest_out = a.manifest;
  } else {
    if (a.data.empty()) throw ConfigError("masks: pass --data DIR or --manifest FILE");
    if (!fs::is_directory(a.data)) throw IoError("dataset directory not found: '" + a.data + "'");
    m = scan_paired_dir(fs::path(a.data) / "low", fs::path(a.data) / "high");
    m.root = a.data;
    manifest_out = fs::path(a.data) / "manifest.json";
  }
  if (!a.common.out.empty()) manifest_out = a.common.out;
  for (const auto& u : m.unpaired) std::cerr << "warning: unpaired file skipped: " << u << '\n';
  m = precompute_illum(precompute_masks(m, cfg.masks, a.common.jobs), a.common.jobs);
  save_manifest(m, manifest_out);
  std::cout << "mean threshold: " << *m.mean_threshold << " (" << m.entries.size() << " images, mode "
            << cfg.masks.mode << ")\nmanifest: " << manifest_out.string() << '\n';
  return 0;
}

struct SynthArgs {
  Common common;
  std::string clean;
  int generate = 0;
  std::string size = "64";
  std::string mode;
  std::vector<double> gain_range;
  std::vector<double> gamma_range;
  std::string grad_axis;
  std::optional<int> tiles;
};

int cmd_synth(const SynthArgs& a) {
  train::RunConfig cfg = load_config(a.common);
  SynthConfig sc = cfg.data.synth;
  if (!a.mode.empty()) sc.mode = a.mode;
  if (a.gain_range.size() == 2) sc.gain_range = {a.gain_range[0], a.gain_range[1]};
  if (a.gamma_range.size() == 2) sc.gamma_range = {a.gamma_range[0], a.gamma_range[1]};
  if (!a.grad_axis.empty()) sc.grad_axis = a.grad_axis;
  if (a.tiles) sc.tiles = *a.tiles;
  validate(sc);
  if (a.common.out.empty()) throw ConfigError("synth: --out DIR is required");

  std::vector<std::pair<std::string, ImageRGB>> clean;
  if (!a.clean.empty()) {
    if (!fs::is_directory(a.clean)) throw IoError("clean-image directory not found: '" + a.clean + "'");
    for (const auto& f : collect_inputs({a.clean})) clean.emplace_back(f.stem().string(), load_image(f));
  } else if (a.generate > 0) {
    const auto [h, w] = parse_size(a.size);
    for (int i = 0; i < a.generate; ++i) {
      std::ostringstream id;
      id << "gen_" << std::setw(4) << std::setfill('0') << i;
      clean.emplace_back(id.str(), procedural_image(h, w, mix_seed(sc.seed, 0x636c65616eULL + i)));
    }
  } else {
    throw ConfigError("synth: pass --clean DIR or --generate N");
  }
  const DatasetManifest m = synthesize_dataset(clean, a.common.out, sc);
  save_manifest(m, fs::path(a.common.out) / "manifest.json");
  std::cout << "wrote " << m.entries.size() << " pairs (" << sc.mode << ") to " << a.common.out << '\n';
  return 0;
}

struct TrainArgs {
  Common common;
  std::string manifest;
  std::string checkpoint;
  std::string resume;
  bool dry_run = false;
  std::optional<int> epochs_pretrain;
  std::optional<int> epochs_finetune;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> patch_size;
};

int cmd_train(const TrainArgs& a, bool finetune_only) {
  train::RunConfig cfg = load_config(a.common);
  if (!a.manifest.empty()) {
    cfg.data.manifest = a.manifest;
    cfg.data.low_dir.clear();
    cfg.data.high_dir.clear();
  }
  if (a.epochs_pretrain) cfg.train.epochs_pretrain = *a.epochs_pretrain;
  if (a.epochs_finetune) cfg.train.epochs_finetune = *a.epochs_finetune;
  if (a.lr) cfg.train.lr_base = *a.lr;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.patch_size) cfg.train.patch_size = *a.patch_size;
  // Explicit configs stay strict; only the built-in warmup default is clipped to short runs.
  if (a.common.config.empty() && cfg.train.warmup_epochs > cfg.train.epochs_pretrain) {
    cfg.train.warmup_epochs = cfg.train.epochs_pretrain;
  }
  if (finetune_only && a.checkpoint.empty() && a.resume.empty()) {
    throw ConfigError("finetune: --checkpoint is required");
  }
  train::RunOptions opts;
  opts.out_dir = a.common.out.empty() ? fs::path("runs") / "latest" : fs::path(a.common.out);
  opts.input_config = a.common.config;
  opts.dry_run = a.dry_run;
  opts.mode = finetune_only ? train::RunMode::FinetuneOnly : train::RunMode::Full;
  opts.init_checkpoint = a.checkpoint;
  opts.resume = a.resume;
  opts.progress = &std::cout;
  opts.jobs = a.common.jobs;
  const train::RunResult r = train::run(cfg, opts);
  if (!r.dry_run) std::cout << "final checkpoint: " << r.final_checkpoint.string() << '\n';
  return 0;
}

struct EnhanceArgs {
  Common common;
  std::string checkpoint;
  std::vector<std::string> inputs;
  bool dump = false;
};

int cmd_enhance(const EnhanceArgs& a) {
  const ModelState state = load_checkpoint(a.checkpoint);
  const fs::path out = a.common.out.empty() ? fs::path("enhanced") : fs::path(a.common.out);
  fs::create_directories(out);
  int failed = 0;
  const auto files = collect_inputs(a.inputs);
  if (files.empty()) throw ConfigError("enhance: no input images");
  for (const auto& f : files) {
    try {
      const ImageRGB img = load_image(f);
      const EnhancedOutput o = forward(img, state);
      const std::string stem = f.stem().string();
      save_image(o.image, out / (stem + ".png"));
      if (a.dump) {
        for (int c = 0; c < 2; ++c) {
          Plane p(img.height(), img.width());
          for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) p.at(y, x) = o.attn.at(c, y, x);
          save_plane(p, out / (stem + (c == 0 ? "_attn_under.png" : "_attn_over.png")));
        }
        save_image(o.local_image, out / (stem + "_local.png"));
        save_image(o.global_image, out / (stem + "_global.png"));
      }
      std::cout << f.string() << " -> " << (out / (stem + ".png")).string() << '\n';
    } catch (const std::exception& e) {
      ++failed;
      std::cerr << "error: " << f.string() << ": " << e.what() << '\n';
    }
  }
  return failed > 0 ? kExitIo : 0;
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string manifest;
  std::string ssim_maps;
  bool identity = false;
};

int cmd_eval(const EvalArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest);
  metrics::EvalOptions opts;
  opts.ssim_map_dir = a.ssim_maps;
  opts.include_timing = !a.common.deterministic;
  opts.jobs = a.common.jobs;
  metrics::EvalReport report;
  if (a.identity) {
    report = metrics::eval_dataset([](const ImageRGB& in, const ManifestEntry&) { return in; }, m, opts);
  } else {
    if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required (or --identity)");
    report = metrics::eval_dataset(load_checkpoint(a.checkpoint), m, opts);
  }
  const fs::path out = a.common.out.empty() ? fs::path("eval") : fs::path(a.common.out);
  write_text(out / "eval.json", metrics::to_json(report).dump(2) + "\n");
  write_text(out / "eval.txt", metrics::format_table(report));
  std::cout << metrics::format_table(report);
  std::cout << "mean PSNR " << (std::isinf(report.psnr_mean) ? std::string("inf") : std::to_string(report.psnr_mean))
            << " dB, mean SSIM " << report.ssim_mean << " (" << report.evaluated << " ok, " << report.failed
            << " failed)\n";
  if (report.evaluated == 0) return kExitIo;
  return 0;
}

struct BenchArgs {
  Common common;
  std::string checkpoint;
  std::vector<std::string> sizes{"256", "400x600"};
  int repeats = 5;
  int warmup = 1;
};

int cmd_bench(const BenchArgs& a) {
  const train::RunConfig cfg = load_config(a.common);
  const ModelState state = a.checkpoint.empty() ? init_model(cfg.model) : load_checkpoint(a.checkpoint);
  std::vector<std::pair<int, int>> sizes;
  for (const auto& s : a.sizes) sizes.push_back(parse_size(s));
  const metrics::BenchReport r = metrics::bench_inference(state, sizes, a.repeats, a.warmup, cfg.train.seed);
  const fs::path out = a.common.out.empty() ? fs::path("bench") : fs::path(a.common.out);
  write_text(out / "bench.json", metrics::to_json(r).dump(2) + "\n");
  std::cout << metrics::format_table(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-exposure image enhancement: masks, synthesis, training, inference, evaluation"};
  app.name("ueg");
  app.require_subcommand(1);

  MasksArgs masks;
  auto* c_masks = app.add_subcommand("masks", "Precompute exposure masks and inverse-illumination maps");
  add_common(c_masks, masks.common, "Manifest output path (default DIR/manifest.json)");
  c_masks->add_option("--data", masks.data, "Dataset root containing low/ and high/");
  c_masks->add_option("--manifest", masks.manifest, "Existing manifest to update in place");
  c_masks->add_option("--mode", masks.mode, "Label mode: binary or mixed");
  c_masks->add_option("--downsample", masks.downsample, "Denoise downsample factor");
  c_masks->add_option("--blur-sigma", masks.blur_sigma, "Denoise blur sigma (0 disables)");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a paired synthetic exposure dataset");
  add_common(c_synth, synth.common, "Output dataset root");
  c_synth->add_option("--clean", synth.clean, "Directory of clean PNG images");
  c_synth->add_option("--generate", synth.generate, "Generate N procedural clean images instead");
  c_synth->add_option("--size", synth.size, "Procedural image size, N or HxW");
  c_synth->add_option("--mode", synth.mode, "Degradation: under, over, grad or mix");
  c_synth->add_option("--gain-range", synth.gain_range, "Gain range LO HI")->expected(2);
  c_synth->add_option("--gamma-range", synth.gamma_range, "Gamma range LO HI")->expected(2);
  c_synth->add_option("--grad-axis", synth.grad_axis, "Gradient axis: horizontal or vertical");
  c_synth->add_option("--tiles", synth.tiles, "Rectangles in mix mode (>= 2)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Pretrain then finetune, writing a run directory");
  TrainArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Finetune an existing checkpoint");
  for (auto [cmd, args] : {std::pair{c_train, &tr}, std::pair{c_ft, &ft}}) {
    add_common(cmd, args->common, "Run directory");
    cmd->add_option("--manifest", args->manifest, "Precomputed training manifest");
    cmd->add_option("--checkpoint", args->checkpoint, "Starting weights");
    cmd->add_option("--resume", args->resume, "Resume from a training-state checkpoint");
    cmd->add_flag("--dry-run", args->dry_run, "Validate configuration and data, write nothing");
    cmd->add_option("--epochs-pretrain", args->epochs_pretrain, "Override train.epochs_pretrain");
    cmd->add_option("--epochs-finetune", args->epochs_finetune, "Override train.epochs_finetune");
    cmd->add_option("--lr", args->lr, "Override train.lr_base");
    cmd->add_option("--batch-size", args->batch_size, "Override train.batch_size");
    cmd->add_option("--patch-size", args->patch_size, "Override train.patch_size");
  }

  EnhanceArgs en;
  auto* c_en = app.add_subcommand("enhance", "Enhance images with a trained checkpoint");
  add_common(c_en, en.common, "Output directory");
  c_en->add_option("--checkpoint", en.checkpoint, "Model checkpoint")->required();
  c_en->add_option("inputs", en.inputs, "Input PNG files or directories")->required();
  c_en->add_flag("--dump-intermediates", en.dump, "Also write attention maps and local/global images");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  add_common(c_ev, ev.common, "Report directory");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  c_ev->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  c_ev->add_option("--ssim-maps", ev.ssim_maps, "Directory for per-image SSIM map PNGs");
  c_ev->add_flag("--identity", ev.identity, "Use the input itself as the output (oracle baseline)");

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Time inference and report peak memory");
  add_common(c_be, be.common, "Report directory");
  c_be->add_option("--checkpoint", be.checkpoint, "Model checkpoint (default: freshly initialized)");
  c_be->add_option("--sizes", be.sizes, "Image sizes, N or HxW");
  c_be->add_option("--repeats", be.repeats, "Timed runs per size")->check(CLI::PositiveNumber);
  c_be->add_option("--warmup", be.warmup, "Untimed runs per size")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*c_masks) return cmd_masks(masks);
    if (*c_synth) return cmd_synth(synth);
    if (*c_train) return cmd_train(tr, false);
    if (*c_ft) return cmd_train(ft, true);
    if (*c_en) return cmd_enhance(en);
    if (*c_ev) return cmd_eval(ev);
    if (*c_be) return cmd_bench(be);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}
