#include "ueg/losses.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "ueg/errors.hpp"
#include "ueg/json_util.hpp"
#include "ueg/rng.hpp"

namespace ueg::losses {

using ad::Tensor;
using ad::Var;

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"alpha", w.alpha},
                     {"beta", w.beta},
                     {"gamma_w", w.gamma_w},
                     {"delta", w.delta},
                     {"eta", w.eta},
                     {"lambda_w", w.lambda_w},
                     {"mu", w.mu},
                     {"nu", w.nu},
                     {"charbonnier_eps", w.charbonnier_eps},
                     {"photon_gain", w.photon_gain},
                     {"smooth_l1_beta", w.smooth_l1_beta},
                     {"ma_mul_reg", w.ma_mul_reg},
                     {"ma_add_reg", w.ma_add_reg},
                     {"perceptual_seed", w.perceptual_seed}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  StrictObject o(j, "loss");
  o.get("alpha", w.alpha);
  o.get("beta", w.beta);
  o.get("gamma_w", w.gamma_w);
  o.get("delta", w.delta);
  o.get("eta", w.eta);
  o.get("lambda_w", w.lambda_w);
  o.get("mu", w.mu);
  o.get("nu", w.nu);
  o.get("charbonnier_eps", w.charbonnier_eps);
  o.get("photon_gain", w.photon_gain);
  o.get("smooth_l1_beta", w.smooth_l1_beta);
  o.get("ma_mul_reg", w.ma_mul_reg);
  o.get("ma_add_reg", w.ma_add_reg);
  o.get("perceptual_seed", w.perceptual_seed);
  o.finish();
}

void validate(const LossWeights& w) {
  for (double v : {w.alpha, w.beta, w.gamma_w, w.delta, w.eta, w.lambda_w, w.mu, w.nu, w.ma_mul_reg, w.ma_add_reg}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
  if (!(w.charbonnier_eps > 0.0) || !(w.photon_gain > 0.0) || !(w.smooth_l1_beta > 0.0)) {
    throw ConfigError("loss: charbonnier_eps, photon_gain and smooth_l1_beta must be positive");
  }
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"total", r.total}, {"terms", r.per_term}, {"weights", r.weights}};
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + ad::shape_string(a.shape()) + " vs " +
                                ad::shape_string(b.shape()));
  }
}

void require_non_negative(const Var& a, const char* what) {
  for (double v : a.value().data()) {
    if (v < 0.0) {
      throw std::invalid_argument(std::string(what) + ": inputs must be non-negative");
    }
  }
}

Var luminance(const Var& img) {
  Tensor w({1, 3, 1, 1}, std::vector<double>{0.299, 0.587, 0.114});
  return ad::conv2d(img, ad::constant(std::move(w)), Var{});
}

Var constant_of(const ImageRGB& img) { return ad::constant(to_tensor(img)); }

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr int kSsimWindow = 11;
constexpr double kKlEps = 1e-3;

}  // namespace

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed) {
  Rng rng(seed);
  const int widths[] = {3, 8, 16, 16};
  for (int l = 0; l < 3; ++l) {
    const int cin = widths[l];
    const int cout = widths[l + 1];
    const double a = std::sqrt(6.0 / ((cin + cout) * 9.0));
    Tensor w({cout, cin, 3, 3});
    for (double& v : w.data()) {
      v = rng.uniform(-a, a);
    }
    weights_.push_back(std::move(w));
  }
}

Var RandomConvExtractor::features(const Var& img) const {
  Var h = img;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::relu(ad::conv2d(h, ad::constant(weights_[l]), Var{}, l == 0 ? 1 : 2, 1));
  }
  return h;
}

Var l1(const Var& y, const Var& yhat) {
  require_same_shape(y, yhat, "l1");
  return ad::mean(ad::abs(ad::sub(yhat, y)));
}

Var l2(const Var& y, const Var& yhat) {
  require_same_shape(y, yhat, "l2");
  return ad::mean(ad::square(ad::sub(yhat, y)));
}

Var charbonnier(const Var& y, const Var& yhat, double eps) {
  require_same_shape(y, yhat, "charbonnier");
  if (!(eps > 0.0)) {
    throw std::invalid_argument("charbonnier: eps must be positive");
  }
  return ad::mean(ad::sqrt(ad::add_scalar(ad::square(ad::sub(yhat, y)), eps * eps)));
}

Var ssim_map(const Var& y, const Var& yhat) {
  require_same_shape(y, yhat, "ssim");
  if (y.value().height() < kSsimWindow || y.value().width() < kSsimWindow) {
    throw std::invalid_argument("ssim: image " + ad::shape_string(y.shape()) + " is smaller than the 11x11 window");
  }
  const double sigma = 1.5;
  const int radius = kSsimWindow / 2;
  auto blur = [&](const Var& v) { return ad::gaussian_filter(v, sigma, radius); };
  const Var a = luminance(y);
  const Var b = luminance(yhat);
  const Var mu_a = blur(a);
  const Var mu_b = blur(b);
  const Var mu_ab = ad::mul(mu_a, mu_b);
  const Var mu_a2 = ad::square(mu_a);
  const Var mu_b2 = ad::square(mu_b);
  const Var var_a = ad::sub(blur(ad::square(a)), mu_a2);
  const Var var_b = ad::sub(blur(ad::square(b)), mu_b2);
  const Var cov = ad::sub(blur(ad::mul(a, b)), mu_ab);
  const Var num = ad::mul(ad::add_scalar(ad::mul_scalar(mu_ab, 2.0), kSsimC1),
                          ad::add_scalar(ad::mul_scalar(cov, 2.0), kSsimC2));
  const Var den = ad::mul(ad::add_scalar(ad::add(mu_a2, mu_b2), kSsimC1), ad::add_scalar(ad::add(var_a, var_b), kSsimC2));
  return ad::div(num, den);
}

Var ssim_loss(const Var& y, const Var& yhat) { return ad::scalar_sub(1.0, ad::mean(ssim_map(y, yhat))); }

Var mul_add_loss(const Var& mul, const Var& add, const Var& low, const Var& high, const LossWeights& w) {
  require_same_shape(mul, low, "mul_add_loss");
  require_same_shape(add, low, "mul_add_loss");
  require_same_shape(high, low, "mul_add_loss");
  const Var recon = ad::add(ad::mul(mul, low), add);
  const Var data = ad::mean(ad::smooth_l1(ad::sub(recon, high), w.smooth_l1_beta));
  const Var reg_mul = ad::mean(ad::square(ad::add_scalar(mul, -1.0)));
  const Var reg_add = ad::mean(ad::square(add));
  return ad::add(data, ad::add(ad::mul_scalar(reg_mul, w.ma_mul_reg), ad::mul_scalar(reg_add, w.ma_add_reg)));
}

Var attention_loss(const Var& pred, const Var& target, double eps) {
  if (pred.shape() != target.shape() || pred.value().rank() != 3 || pred.value().channels() != 2) {
    throw std::invalid_argument("attention_loss: expected matching (2,H,W) maps, got " +
                                ad::shape_string(pred.shape()) + " and " + ad::shape_string(target.shape()));
  }
  return charbonnier(target, pred, eps);
}

Var poisson_kl_loss(const Var& yhat, const Var& y, double photon_gain) {
  require_same_shape(yhat, y, "poisson_kl_loss");
  require_non_negative(yhat, "poisson_kl_loss");
  require_non_negative(y, "poisson_kl_loss");
  const Var lh = ad::add_scalar(ad::mul_scalar(yhat, photon_gain), kKlEps);
  const Var l = ad::add_scalar(ad::mul_scalar(y, photon_gain), kKlEps);
  const Var kl = ad::add(ad::mul(lh, ad::sub(ad::log(lh), ad::log(l))), ad::sub(l, lh));
  return ad::mean(kl);
}

Var perceptual_loss(const Var& y, const Var& yhat, const FeatureExtractor& extractor) {
  require_same_shape(y, yhat, "perceptual_loss");
  const Var fa = extractor.features(y);
  const Var fb = extractor.features(yhat);
  return ad::mean(ad::square(ad::sub(fb, fa)));
}

namespace {

class ReportBuilder {
public:
  void add(const std::string& name, double weight, const Var& term) {
    report_.per_term[name] = term.item();
    report_.weights[name] = weight;
    report_.total += weight * term.item();
    const Var weighted = ad::mul_scalar(term, weight);
    total_ = total_.defined() ? ad::add(total_, weighted) : weighted;
  }

  LossGraph finish() { return {total_, std::move(report_)}; }

private:
  Var total_;
  LossReport report_;
};

}  // namespace

LossGraph pretrain_total(const GraphOutput& out, const Var& y, const Var& low, const Var& target_attn,
                         const LossWeights& w, const FeatureExtractor& extractor) {
  ReportBuilder b;
  b.add("l1", w.alpha, ad::mul_scalar(ad::add(l1(y, out.local_image), l1(y, out.global_image)), 0.5));
  b.add("l2", w.beta, l2(y, out.image));
  b.add("ssim", w.gamma_w, ssim_loss(y, out.image));
  b.add("perceptual", w.delta, perceptual_loss(y, out.image, extractor));
  b.add("mul_add", w.eta, mul_add_loss(out.mul, out.add, low, y, w));
  b.add("attention", 1.0, attention_loss(out.attn, target_attn, w.charbonnier_eps));
  return b.finish();
}

LossGraph finetune_total(const GraphOutput& out, const Var& y, const LossWeights& w) {
  ReportBuilder b;
  b.add("l1", w.lambda_w, l1(y, out.image));
  b.add("ssim", w.mu, ssim_loss(y, out.image));
  b.add("poisson_kl", w.nu,
        ad::mul_scalar(ad::add(poisson_kl_loss(out.local_image, y, w.photon_gain),
                               poisson_kl_loss(out.global_image, y, w.photon_gain)),
                       0.5));
  return b.finish();
}

// ---------------------------------------------------------------------------
// Value versions

namespace {

double evaluate(const std::function<Var()>& f) {
  ad::NoGradGuard guard;
  return f().item();
}

GraphOutput constants_of(const EnhancedOutput& out) {
  GraphOutput g;
  g.attn = ad::constant(out.attn);
  g.mul = ad::constant(out.local.mul);
  g.add = ad::constant(out.local.add);
  g.local_image = constant_of(out.local_image);
  g.global_image = constant_of(out.global_image);
  g.image = constant_of(out.image);
  return g;
}

}  // namespace

Tensor attention_target_tensor(const AttentionTarget& target) {
  return Tensor({2, target.height, target.width}, target.data);
}

double l1(const ImageRGB& y, const ImageRGB& yhat) {
  return evaluate([&] { return l1(constant_of(y), constant_of(yhat)); });
}

double l2(const ImageRGB& y, const ImageRGB& yhat) {
  return evaluate([&] { return l2(constant_of(y), constant_of(yhat)); });
}

double charbonnier(const ImageRGB& y, const ImageRGB& yhat, double eps) {
  return evaluate([&] { return charbonnier(constant_of(y), constant_of(yhat), eps); });
}

Plane ssim_map(const ImageRGB& y, const ImageRGB& yhat) {
  ad::NoGradGuard guard;
  const Var m = ssim_map(constant_of(y), constant_of(yhat));
  Plane out(y.height(), y.width());
  std::copy(m.value().data().begin(), m.value().data().end(), out.data().begin());
  return out;
}

double ssim(const ImageRGB& y, const ImageRGB& yhat) { return 1.0 - ssim_loss(y, yhat); }

double ssim_loss(const ImageRGB& y, const ImageRGB& yhat) {
  return evaluate([&] { return ssim_loss(constant_of(y), constant_of(yhat)); });
}

double mul_add_loss(const LocalFactors& factors, const ImageRGB& low, const ImageRGB& high, const LossWeights& w) {
  return evaluate([&] {
    return mul_add_loss(ad::constant(factors.mul), ad::constant(factors.add), constant_of(low), constant_of(high), w);
  });
}

double attention_loss(const Tensor& pred, const AttentionTarget& target, double eps) {
  return evaluate(
      [&] { return attention_loss(ad::constant(pred), ad::constant(attention_target_tensor(target)), eps); });
}

double poisson_kl_loss(const ImageRGB& yhat, const ImageRGB& y, double photon_gain) {
  return evaluate([&] { return poisson_kl_loss(constant_of(yhat), constant_of(y), photon_gain); });
}

double perceptual_loss(const ImageRGB& y, const ImageRGB& yhat, const FeatureExtractor& extractor) {
  return evaluate([&] { return perceptual_loss(constant_of(y), constant_of(yhat), extractor); });
}

double poisson_kl(double lambda_hat, double lambda) {
  if (!(lambda_hat > 0.0) || !(lambda > 0.0)) {
    throw std::invalid_argument("poisson_kl: rates must be positive");
  }
  return lambda_hat * std::log(lambda_hat / lambda) + lambda - lambda_hat;
}

LossReport pretrain_total(const EnhancedOutput& out, const ImageRGB& y, const ImageRGB& low,
                          const AttentionTarget& target_attn, const LossWeights& w) {
  ad::NoGradGuard guard;
  const RandomConvExtractor extractor(w.perceptual_seed);
  return pretrain_total(constants_of(out), constant_of(y), constant_of(low),
                        ad::constant(attention_target_tensor(target_attn)), w, extractor)
      .report;
}

LossReport finetune_total(const EnhancedOutput& out, const ImageRGB& y, const LossWeights& w) {
  ad::NoGradGuard guard;
  return finetune_total(constants_of(out), constant_of(y), w).report;
}

}  // namespace ueg::losses
