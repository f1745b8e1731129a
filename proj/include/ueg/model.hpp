#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ueg/autograd.hpp"
#include "ueg/image.hpp"
#include "ueg/imaging.hpp"

namespace ueg {

struct ModelConfig {
  int embed_dim = 16;
  int num_blocks = 5;
  int num_heads = 2;
  int attn_map_channels = 2;
  double gamma_min = 0.3;
  double gamma_max = 3.0;
  bool eaf_enabled = true;
  std::uint64_t seed = 0;
  /// GEB works on an adaptive-average-pooled copy of this side length.
  int geb_pool = 32;
  /// GEB conv widths; the first conv keeps resolution, later ones stride 2.
  std::vector<int> geb_widths{16, 32, 64, 80};
  int geb_hidden = 80;
  int eaf_width = 16;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Strict parse: unknown keys raise ConfigError naming the key path.
void from_json(const nlohmann::json& j, ModelConfig& c);
void validate(const ModelConfig& c);

struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

/// Named trainable arrays in a fixed creation order. Values are always
/// representable as 32-bit floats so that checkpoints round-trip exactly.
class ModelState {
public:
  ModelConfig config;

  const std::vector<ParamArray>& params() const { return params_; }
  std::vector<ParamArray>& params() { return params_; }

  void add(ParamArray p);
  bool has(std::string_view name) const;
  const ParamArray& get(std::string_view name) const;
  ParamArray& get(std::string_view name);
  std::size_t index_of(std::string_view name) const;

  /// Rounds every value to the nearest float.
  void round_to_float();

private:
  std::vector<ParamArray> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

ModelState init_model(const ModelConfig& config);
std::size_t count_parameters(const ModelState& state);
/// Element counts keyed by submodule prefix (gamg, leb, geb, eaf).
std::map<std::string, std::size_t> parameter_breakdown(const ModelState& state);

/// Parameter leaves for one forward pass, aligned with ModelState::params().
class BoundParams {
public:
  BoundParams(const ModelState& state, bool requires_grad);
  const ad::Var& operator[](std::string_view name) const;
  const std::vector<ad::Var>& vars() const { return vars_; }

private:
  const ModelState* state_;
  std::vector<ad::Var> vars_;
};

// ---- differentiable building blocks ----

/// Multi-head self-attention along rows of a (D, H, W) map with the given weights prefix.
ad::Var msa_rows(const ad::Var& x, const BoundParams& p, const std::string& prefix, int heads);
/// Width pass then height pass.
ad::Var axis_msa(const ad::Var& x, const BoundParams& p, const std::string& prefix, int heads);
ad::Var dgfn(const ad::Var& x, const BoundParams& p, const std::string& prefix);
ad::Var transformer_block(const ad::Var& x, const BoundParams& p, const std::string& prefix, int heads);

/// Fixed sinusoidal coordinate features (4, H, W) fed to the positional projection.
ad::Tensor positional_features(int height, int width);

struct GraphOutput {
  ad::Var attn;          // (2, H, W)
  ad::Var guided;        // (3, H, W)
  ad::Var mul;           // M_L (3, H, W)
  ad::Var add;           // A_L (3, H, W)
  ad::Var local_image;   // (3, H, W)
  ad::Var gamma;         // (1, 1, 1)
  ad::Var color_matrix;  // (9, 1, 1), row-major
  ad::Var global_image;  // (3, H, W)
  ad::Var fusion;        // (3, 1, 1)
  ad::Var image;         // (3, H, W)
};

ad::Var gamg_graph(const ad::Var& img, const BoundParams& p, const ModelConfig& cfg);
ad::Var guided_graph(const ad::Var& img, const ad::Var& attn, const ad::Var& gain);
void leb_graph(const ad::Var& guided, const ad::Var& img, const BoundParams& p, GraphOutput& out);
void geb_graph(const ad::Var& img, const ad::Var& inv_lum, const BoundParams& p, const ModelConfig& cfg,
               GraphOutput& out);
void eaf_graph(const BoundParams& p, const ModelConfig& cfg, GraphOutput& out);
GraphOutput forward_graph(const ad::Var& img, const BoundParams& p, const ModelConfig& cfg);

// ---- value-level API ----

struct GlobalParams {
  double gamma = 1.0;
  ColorMatrix color_matrix{};
};

struct LocalFactors {
  ad::Tensor mul;  // (3, H, W), strictly positive
  ad::Tensor add;  // (3, H, W)
};

struct EnhancedOutput {
  ImageRGB image;
  ad::Tensor attn;  // (2, H, W) in (0, 1)
  LocalFactors local;
  ImageRGB local_image;
  ImageRGB global_image;
  GlobalParams global_params;
  std::array<double, 3> fusion_weights{};
};

ad::Tensor to_tensor(const ImageRGB& img);
ImageRGB to_image(const ad::Tensor& t);
ad::Tensor plane_to_tensor(const Plane& plane);

ad::Tensor gamg_forward(const ImageRGB& img, const ModelState& state);
ad::Tensor guided_input(const ImageRGB& img, const ad::Tensor& attn, const ModelState& state);
std::pair<LocalFactors, ImageRGB> leb_forward(const ad::Tensor& guided, const ImageRGB& img, const ModelState& state);
std::pair<GlobalParams, ImageRGB> geb_forward(const ImageRGB& img, const LuminanceMap& inv_lum,
                                              const ModelState& state);
std::pair<ImageRGB, std::array<double, 3>> eaf_fuse(const ImageRGB& local_img, const ImageRGB& global_img,
                                                    const ad::Tensor& attn, const ModelState& state);
EnhancedOutput forward(const ImageRGB& img, const ModelState& state);

/// Input to softplus that yields exactly `target` in double precision when one exists nearby.
double softplus_inverse(double target);

// ---- checkpoints ----

/// Extra named float arrays and metadata carried alongside model parameters.
struct CheckpointExtras {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ParamArray> arrays;
};

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const CheckpointExtras& extras = {});
ModelState load_checkpoint(const std::filesystem::path& path, CheckpointExtras* extras = nullptr);
/// Refuses checkpoints written for a different model configuration.
ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected,
                           CheckpointExtras* extras = nullptr);

}  // namespace ueg
