#include "ueg/model.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "ueg/errors.hpp"
#include "ueg/json_util.hpp"
#include "ueg/rng.hpp"

namespace ueg {

using ad::Tensor;
using ad::Var;

// ---------------------------------------------------------------------------
// Configuration

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"embed_dim", c.embed_dim},
                     {"num_blocks", c.num_blocks},
                     {"num_heads", c.num_heads},
                     {"attn_map_channels", c.attn_map_channels},
                     {"gamma_range", {c.gamma_min, c.gamma_max}},
                     {"eaf_enabled", c.eaf_enabled},
                     {"seed", c.seed},
                     {"geb_pool", c.geb_pool},
                     {"geb_widths", c.geb_widths},
                     {"geb_hidden", c.geb_hidden},
                     {"eaf_width", c.eaf_width}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  StrictObject o(j, "model");
  o.get("embed_dim", c.embed_dim);
  o.get("num_blocks", c.num_blocks);
  o.get("num_heads", c.num_heads);
  o.get("attn_map_channels", c.attn_map_channels);
  std::array<double, 2> range{c.gamma_min, c.gamma_max};
  o.get("gamma_range", range);
  c.gamma_min = range[0];
  c.gamma_max = range[1];
  o.get("eaf_enabled", c.eaf_enabled);
  o.get("seed", c.seed);
  o.get("geb_pool", c.geb_pool);
  o.get("geb_widths", c.geb_widths);
  o.get("geb_hidden", c.geb_hidden);
  o.get("eaf_width", c.eaf_width);
  o.finish();
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (c.embed_dim < 1 || c.num_heads < 1 || c.embed_dim % c.num_heads != 0) {
    fail("embed_dim must be a positive multiple of num_heads");
  }
  if (c.num_blocks < 1) fail("num_blocks must be >= 1");
  if (c.attn_map_channels != 2) fail("attn_map_channels must be 2 (under, over)");
  if (!(c.gamma_min > 0.0) || !(c.gamma_min < c.gamma_max)) fail("gamma_range must satisfy 0 < min < max");
  if (c.geb_pool < 4) fail("geb_pool must be >= 4");
  if (c.geb_widths.empty()) fail("geb_widths must not be empty");
  for (int w : c.geb_widths) {
    if (w < 1) fail("geb_widths entries must be positive");
  }
  if (c.geb_hidden < 1 || c.eaf_width < 1) fail("geb_hidden and eaf_width must be positive");
}

// ---------------------------------------------------------------------------
// State

void ModelState::add(ParamArray p) {
  if (index_.count(p.name)) {
    throw std::logic_error("duplicate parameter '" + p.name + "'");
  }
  index_.emplace(p.name, params_.size());
  params_.push_back(std::move(p));
}

bool ModelState::has(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ModelState::index_of(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  }
  return it->second;
}

const ParamArray& ModelState::get(std::string_view name) const { return params_[index_of(name)]; }
ParamArray& ModelState::get(std::string_view name) { return params_[index_of(name)]; }

void ModelState::round_to_float() {
  for (auto& p : params_) {
    for (double& v : p.values) {
      v = static_cast<double>(static_cast<float>(v));
    }
  }
}

double softplus_inverse(double target) {
  auto sp = [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  double x = target > 30.0 ? target : std::log(std::expm1(target));
  for (int i = 0; i < 64 && sp(x) != target; ++i) {
    x = std::nextafter(x, sp(x) < target ? INFINITY : -INFINITY);
  }
  return x;
}

namespace {

class Initializer {
public:
  Initializer(ModelState& state, std::uint64_t seed) : state_(state), rng_(seed) {}

  void conv(const std::string& name, int cout, int cin_per_group, int k, bool bias = true, double scale = 1.0) {
    const double fan_in = static_cast<double>(cin_per_group) * k * k;
    const double fan_out = static_cast<double>(cout) * k * k;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    ParamArray w{name + ".weight", {cout, cin_per_group, k, k}, {}};
    w.values.resize(static_cast<std::size_t>(cout) * cin_per_group * k * k);
    for (double& v : w.values) {
      v = scale * rng_.uniform(-a, a);
    }
    state_.add(std::move(w));
    if (bias) {
      state_.add({name + ".bias", {cout}, std::vector<double>(cout, 0.0)});
    }
  }

  void norm(const std::string& name, int channels) {
    state_.add({name + ".gamma", {channels}, std::vector<double>(channels, 1.0)});
    state_.add({name + ".beta", {channels}, std::vector<double>(channels, 0.0)});
  }

  void fill(const std::string& name, std::vector<int> shape, double value) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    state_.add({name, std::move(shape), std::vector<double>(n, value)});
  }

private:
  ModelState& state_;
  Rng rng_;
};

}  // namespace

ModelState init_model(const ModelConfig& config) {
  validate(config);
  ModelState state;
  state.config = config;
  Initializer init(state, config.seed);
  const int d = config.embed_dim;

  init.conv("gamg.embed", d, 3, 3);
  init.conv("gamg.pos", d, 4, 1, false);
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string pre = "gamg.block" + std::to_string(b);
    init.norm(pre + ".norm1", d);
    for (const char* axis : {".attn_w", ".attn_h"}) {
      init.conv(pre + axis + ".qkv", 3 * d, d, 1);
      init.conv(pre + axis + ".proj", d, d, 1);
    }
    init.norm(pre + ".norm2", d);
    for (const char* path : {".ffn.path1", ".ffn.path2"}) {
      init.conv(pre + path + ".pw", d, d, 1);
      init.conv(pre + path + ".dw", d, 1, 3);
    }
  }
  init.conv("gamg.head", config.attn_map_channels, d, 1);
  init.fill("gamg.guide_gain", {1}, 1.0);

  init.conv("leb.conv1", d, 3, 3);
  init.norm("leb.norm1", d);
  init.conv("leb.conv2", d, d, 3);
  init.norm("leb.norm2", d);
  init.conv("leb.mul_head", 3, d, 1, true, 0.1);
  init.conv("leb.add_head", 3, d, 1, true, 0.1);

  int cin = 3;
  for (std::size_t i = 0; i < config.geb_widths.size(); ++i) {
    init.conv("geb.conv" + std::to_string(i + 1), config.geb_widths[i], cin, 3);
    cin = config.geb_widths[i];
  }
  init.conv("geb.fc", config.geb_hidden, cin, 1);
  init.conv("geb.gamma_head", 1, config.geb_hidden, 1, true, 0.01);
  init.conv("geb.color_head", 9, config.geb_hidden, 1, true, 0.01);

  if (config.eaf_enabled) {
    init.conv("eaf.conv1", config.eaf_width, 3 + 3 + config.attn_map_channels, 3);
    init.conv("eaf.conv2", config.eaf_width, config.eaf_width, 3);
    init.conv("eaf.fc", 3, config.eaf_width, 1);
  }

  // Near-identity start: M_L = 1, A_L = 0, gamma = 1, color matrix = I.
  state.get("leb.mul_head.bias").values.assign(3, softplus_inverse(1.0));
  if (config.gamma_min < 1.0 && config.gamma_max > 1.0) {
    const double frac = (1.0 - config.gamma_min) / (config.gamma_max - config.gamma_min);
    state.get("geb.gamma_head.bias").values[0] = std::log(frac / (1.0 - frac));
  }
  state.round_to_float();
  return state;
}

std::size_t count_parameters(const ModelState& state) {
  std::size_t n = 0;
  for (const auto& p : state.params()) {
    n += p.values.size();
  }
  return n;
}

std::map<std::string, std::size_t> parameter_breakdown(const ModelState& state) {
  std::map<std::string, std::size_t> out;
  for (const auto& p : state.params()) {
    out[p.name.substr(0, p.name.find('.'))] += p.values.size();
  }
  return out;
}

BoundParams::BoundParams(const ModelState& state, bool requires_grad) : state_(&state) {
  vars_.reserve(state.params().size());
  for (const auto& p : state.params()) {
    Tensor t(p.shape, p.values);
    vars_.push_back(requires_grad ? ad::parameter(std::move(t)) : ad::constant(std::move(t)));
  }
}

const Var& BoundParams::operator[](std::string_view name) const { return vars_[state_->index_of(name)]; }

// ---------------------------------------------------------------------------
// Differentiable blocks

namespace {

Var conv(const Var& x, const BoundParams& p, const std::string& name, int stride = 1, int padding = 0,
         int groups = 1) {
  return ad::conv2d(x, p[name + ".weight"], p[name + ".bias"], stride, padding, groups);
}

Var vec_as_map(const Var& v) { return ad::reshape(v, {static_cast<int>(v.value().size()), 1, 1}); }

}  // namespace

Var msa_rows(const Var& x, const BoundParams& p, const std::string& prefix, int heads) {
  const Var qkv = conv(x, p, prefix + ".qkv");
  return conv(ad::row_attention(qkv, heads), p, prefix + ".proj");
}

Var axis_msa(const Var& x, const BoundParams& p, const std::string& prefix, int heads) {
  const Var along_width = msa_rows(x, p, prefix + ".attn_w", heads);
  // Height pass: columns become rows.
  const Var along_height = msa_rows(ad::transpose_hw(along_width), p, prefix + ".attn_h", heads);
  return ad::transpose_hw(along_height);
}

Var dgfn(const Var& x, const BoundParams& p, const std::string& prefix) {
  const int d = x.value().channels();
  Var out;
  for (const char* path : {".path1", ".path2"}) {
    const Var proj = conv(x, p, prefix + path + ".pw");
    const Var spatial = conv(proj, p, prefix + path + ".dw", 1, 1, d);
    const Var gated = ad::mul(ad::gelu(proj), ad::gelu(spatial));
    out = out.defined() ? ad::add(out, gated) : gated;
  }
  return out;
}

Var transformer_block(const Var& x, const BoundParams& p, const std::string& prefix, int heads) {
  const Var n1 = ad::layer_norm_channels(x, p[prefix + ".norm1.gamma"], p[prefix + ".norm1.beta"]);
  const Var x1 = ad::add(x, axis_msa(n1, p, prefix, heads));
  const Var n2 = ad::layer_norm_channels(x1, p[prefix + ".norm2.gamma"], p[prefix + ".norm2.beta"]);
  return ad::add(x1, dgfn(n2, p, prefix + ".ffn"));
}

Tensor positional_features(int height, int width) {
  Tensor t = Tensor::chw(4, height, width);
  for (int y = 0; y < height; ++y) {
    const double u = std::numbers::pi * (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double v = std::numbers::pi * (x + 0.5) / width;
      t.at(0, y, x) = std::sin(u);
      t.at(1, y, x) = std::cos(u);
      t.at(2, y, x) = std::sin(v);
      t.at(3, y, x) = std::cos(v);
    }
  }
  return t;
}

Var gamg_graph(const Var& img, const BoundParams& p, const ModelConfig& cfg) {
  const auto& iv = img.value();
  Var h = conv(img, p, "gamg.embed", 1, 1);
  const Var pos = ad::conv2d(ad::constant(positional_features(iv.height(), iv.width())), p["gamg.pos.weight"], Var{});
  h = ad::add(h, pos);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    h = transformer_block(h, p, "gamg.block" + std::to_string(b), cfg.num_heads);
  }
  return ad::sigmoid(conv(h, p, "gamg.head"));
}

Var guided_graph(const Var& img, const Var& attn, const Var& gain) {
  const Var total = ad::add(ad::slice_channels(attn, 0, 1), ad::slice_channels(attn, 1, 2));
  const Var s = vec_as_map(ad::relu(gain));
  return ad::mul(img, ad::add_scalar(ad::mul(total, s), 1.0));
}

void leb_graph(const Var& guided, const Var& img, const BoundParams& p, GraphOutput& out) {
  Var h = conv(guided, p, "leb.conv1", 1, 1);
  h = ad::gelu(ad::instance_norm(h, p["leb.norm1.gamma"], p["leb.norm1.beta"]));
  h = conv(h, p, "leb.conv2", 1, 1);
  h = ad::gelu(ad::instance_norm(h, p["leb.norm2.gamma"], p["leb.norm2.beta"]));
  out.mul = ad::softplus(conv(h, p, "leb.mul_head"));
  out.add = ad::mul_scalar(ad::tanh(conv(h, p, "leb.add_head")), 0.5);
  out.local_image = ad::clamp(ad::add(ad::mul(out.mul, img), out.add), 0.0, 1.0);
}

void geb_graph(const Var& img, const Var& inv_lum, const BoundParams& p, const ModelConfig& cfg, GraphOutput& out) {
  Var h = ad::adaptive_avg_pool(ad::mul(img, inv_lum), cfg.geb_pool, cfg.geb_pool);
  for (std::size_t i = 0; i < cfg.geb_widths.size(); ++i) {
    h = ad::gelu(conv(h, p, "geb.conv" + std::to_string(i + 1), i == 0 ? 1 : 2, 1));
  }
  h = ad::gelu(conv(ad::global_avg_pool(h), p, "geb.fc"));
  out.gamma = ad::add_scalar(ad::mul_scalar(ad::sigmoid(conv(h, p, "geb.gamma_head")), cfg.gamma_max - cfg.gamma_min),
                             cfg.gamma_min);
  Tensor identity = Tensor::chw(9, 1, 1);
  identity[0] = identity[4] = identity[8] = 1.0;
  out.color_matrix = ad::add(ad::constant(std::move(identity)),
                             ad::mul_scalar(ad::tanh(conv(h, p, "geb.color_head")), 0.25));
  const Var balanced = ad::clamp(ad::conv2d(img, ad::reshape(out.color_matrix, {3, 3, 1, 1}), Var{}), 0.0, 1.0);
  out.global_image = ad::clamp(ad::pow(balanced, out.gamma), 0.0, 1.0);
}

void eaf_graph(const BoundParams& p, const ModelConfig& cfg, GraphOutput& out) {
  if (!cfg.eaf_enabled) {
    out.fusion = ad::constant(Tensor::chw(3, 1, 1, 0.5));
  } else {
    Var h = ad::concat_channels({out.local_image, out.global_image, out.attn});
    h = ad::gelu(conv(h, p, "eaf.conv1", 1, 1));
    h = ad::gelu(conv(h, p, "eaf.conv2", 1, 1));
    out.fusion = ad::sigmoid(conv(ad::global_avg_pool(h), p, "eaf.fc"));
  }
  const Var blend = ad::add(ad::mul(out.fusion, out.local_image),
                            ad::mul(ad::scalar_sub(1.0, out.fusion), out.global_image));
  out.image = ad::clamp(blend, 0.0, 1.0);
}

namespace {

Var luminance_graph(const Var& img) {
  Tensor w({1, 3, 1, 1}, std::vector<double>{0.299, 0.587, 0.114});
  return ad::conv2d(img, ad::constant(std::move(w)), Var{});
}

}  // namespace

GraphOutput forward_graph(const Var& img, const BoundParams& p, const ModelConfig& cfg) {
  GraphOutput out;
  out.attn = gamg_graph(img, p, cfg);
  out.guided = guided_graph(img, out.attn, p["gamg.guide_gain"]);
  leb_graph(out.guided, img, p, out);
  const Var inv = ad::scalar_sub(1.0, ad::clamp(luminance_graph(img), 0.0, 1.0));
  geb_graph(img, inv, p, cfg, out);
  eaf_graph(p, cfg, out);
  return out;
}

// ---------------------------------------------------------------------------
// Value-level API

Tensor to_tensor(const ImageRGB& img) {
  Tensor t = Tensor::chw(3, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) = img.at(y, x, c);
      }
    }
  }
  return t;
}

ImageRGB to_image(const Tensor& t) {
  if (t.rank() != 3 || t.channels() != 3) {
    throw std::invalid_argument("to_image: expected a (3,H,W) tensor, got " + ad::shape_string(t.shape()));
  }
  ImageRGB img(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = t.at(c, y, x);
      }
    }
  }
  return img;
}

Tensor plane_to_tensor(const Plane& plane) {
  return Tensor({1, plane.height(), plane.width()}, std::vector<double>(plane.data().begin(), plane.data().end()));
}

namespace {

void check_same_extent(int h1, int w1, int h2, int w2, const char* what) {
  if (h1 != h2 || w1 != w2) {
    throw std::invalid_argument(std::string(what) + ": spatial extents differ (" + std::to_string(h1) + "x" +
                                std::to_string(w1) + " vs " + std::to_string(h2) + "x" + std::to_string(w2) + ")");
  }
}

GlobalParams global_params_of(const GraphOutput& g) {
  GlobalParams gp;
  gp.gamma = g.gamma.value()[0];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      gp.color_matrix[r][c] = g.color_matrix.value()[r * 3 + c];
    }
  }
  return gp;
}

}  // namespace

Tensor gamg_forward(const ImageRGB& img, const ModelState& state) {
  ad::NoGradGuard guard;
  const BoundParams p(state, false);
  return gamg_graph(ad::constant(to_tensor(img)), p, state.config).value();
}

Tensor guided_input(const ImageRGB& img, const Tensor& attn, const ModelState& state) {
  check_same_extent(img.height(), img.width(), attn.height(), attn.width(), "guided_input");
  ad::NoGradGuard guard;
  const BoundParams p(state, false);
  return guided_graph(ad::constant(to_tensor(img)), ad::constant(attn), p["gamg.guide_gain"]).value();
}

std::pair<LocalFactors, ImageRGB> leb_forward(const Tensor& guided, const ImageRGB& img, const ModelState& state) {
  check_same_extent(img.height(), img.width(), guided.height(), guided.width(), "leb_forward");
  ad::NoGradGuard guard;
  const BoundParams p(state, false);
  GraphOutput g;
  leb_graph(ad::constant(guided), ad::constant(to_tensor(img)), p, g);
  return {LocalFactors{g.mul.value(), g.add.value()}, to_image(g.local_image.value())};
}

std::pair<GlobalParams, ImageRGB> geb_forward(const ImageRGB& img, const LuminanceMap& inv_lum,
                                              const ModelState& state) {
  check_same_extent(img.height(), img.width(), inv_lum.height(), inv_lum.width(), "geb_forward");
  ad::NoGradGuard guard;
  const BoundParams p(state, false);
  GraphOutput g;
  geb_graph(ad::constant(to_tensor(img)), ad::constant(plane_to_tensor(inv_lum)), p, state.config, g);
  return {global_params_of(g), to_image(g.global_image.value())};
}

std::pair<ImageRGB, std::array<double, 3>> eaf_fuse(const ImageRGB& local_img, const ImageRGB& global_img,
                                                    const Tensor& attn, const ModelState& state) {
  check_same_extent(local_img.height(), local_img.width(), global_img.height(), global_img.width(), "eaf_fuse");
  check_same_extent(local_img.height(), local_img.width(), attn.height(), attn.width(), "eaf_fuse");
  ad::NoGradGuard guard;
  const BoundParams p(state, false);
  GraphOutput g;
  g.local_image = ad::constant(to_tensor(local_img));
  g.global_image = ad::constant(to_tensor(global_img));
  g.attn = ad::constant(attn);
  eaf_graph(p, state.config, g);
  const auto& w = g.fusion.value();
  return {to_image(g.image.value()), {w[0], w[1], w[2]}};
}

EnhancedOutput forward(const ImageRGB& img, const ModelState& state) {
  ad::NoGradGuard guard;
  const BoundParams p(state, false);
  const GraphOutput g = forward_graph(ad::constant(to_tensor(img)), p, state.config);
  EnhancedOutput out;
  out.image = to_image(g.image.value());
  out.attn = g.attn.value();
  out.local = LocalFactors{g.mul.value(), g.add.value()};
  out.local_image = to_image(g.local_image.value());
  out.global_image = to_image(g.global_image.value());
  out.global_params = global_params_of(g);
  const auto& w = g.fusion.value();
  out.fusion_weights = {w[0], w[1], w[2]};
  return out;
}

}  // namespace ueg
