#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "ueg/autograd.hpp"
#include "ueg/image.hpp"
#include "ueg/masks.hpp"
#include "ueg/model.hpp"

namespace ueg::losses {

struct LossWeights {
  // Pretraining.
  double alpha = 1.0;
  double beta = 0.5;
  double gamma_w = 0.4;
  double delta = 0.1;
  double eta = 0.5;
  // Finetuning.
  double lambda_w = 1.0;
  double mu = 0.4;
  double nu = 0.1;

  double charbonnier_eps = 1e-3;
  double photon_gain = 255.0;
  double smooth_l1_beta = 0.1;
  /// Mul-add regularizer weights on mean((M-1)^2) and mean(A^2).
  double ma_mul_reg = 0.01;
  double ma_add_reg = 0.01;
  std::uint64_t perceptual_seed = 7;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void validate(const LossWeights& w);

struct LossReport {
  double total = 0.0;
  /// Unweighted term values.
  std::map<std::string, double> per_term;
  std::map<std::string, double> weights;
};

void to_json(nlohmann::json& j, const LossReport& r);

/// Produces a feature map for the perceptual term; parameters must stay fixed.
class FeatureExtractor {
public:
  virtual ~FeatureExtractor() = default;
  virtual ad::Var features(const ad::Var& img) const = 0;
};

/// Three 3x3 conv + ReLU layers with seeded random weights.
class RandomConvExtractor final : public FeatureExtractor {
public:
  explicit RandomConvExtractor(std::uint64_t seed);
  ad::Var features(const ad::Var& img) const override;

private:
  std::vector<ad::Tensor> weights_;
};

// ---- graph versions (operands are (C, H, W) Vars) ----

ad::Var l1(const ad::Var& y, const ad::Var& yhat);
ad::Var l2(const ad::Var& y, const ad::Var& yhat);
ad::Var charbonnier(const ad::Var& y, const ad::Var& yhat, double eps);
/// SSIM map (1, H, W) on luminance, 11x11 Gaussian window, sigma 1.5, reflect padding.
ad::Var ssim_map(const ad::Var& y, const ad::Var& yhat);
ad::Var ssim_loss(const ad::Var& y, const ad::Var& yhat);
ad::Var mul_add_loss(const ad::Var& mul, const ad::Var& add, const ad::Var& low, const ad::Var& high,
                     const LossWeights& w = {});
ad::Var attention_loss(const ad::Var& pred, const ad::Var& target, double eps);
/// Mean KL(Pois(gain*yhat + 1e-3) || Pois(gain*y + 1e-3)).
ad::Var poisson_kl_loss(const ad::Var& yhat, const ad::Var& y, double photon_gain);
ad::Var perceptual_loss(const ad::Var& y, const ad::Var& yhat, const FeatureExtractor& extractor);

struct LossGraph {
  ad::Var total;
  LossReport report;
};

LossGraph pretrain_total(const GraphOutput& out, const ad::Var& y, const ad::Var& low, const ad::Var& target_attn,
                         const LossWeights& w, const FeatureExtractor& extractor);
LossGraph finetune_total(const GraphOutput& out, const ad::Var& y, const LossWeights& w);

// ---- value versions ----

double l1(const ImageRGB& y, const ImageRGB& yhat);
double l2(const ImageRGB& y, const ImageRGB& yhat);
double charbonnier(const ImageRGB& y, const ImageRGB& yhat, double eps);
Plane ssim_map(const ImageRGB& y, const ImageRGB& yhat);
double ssim(const ImageRGB& y, const ImageRGB& yhat);
double ssim_loss(const ImageRGB& y, const ImageRGB& yhat);
double mul_add_loss(const LocalFactors& factors, const ImageRGB& low, const ImageRGB& high, const LossWeights& w = {});
double attention_loss(const ad::Tensor& pred, const AttentionTarget& target, double eps);
double poisson_kl_loss(const ImageRGB& yhat, const ImageRGB& y, double photon_gain);
double perceptual_loss(const ImageRGB& y, const ImageRGB& yhat, const FeatureExtractor& extractor);

/// KL(Pois(lambda_hat) || Pois(lambda)) in closed form.
double poisson_kl(double lambda_hat, double lambda);

LossReport pretrain_total(const EnhancedOutput& out, const ImageRGB& y, const ImageRGB& low,
                          const AttentionTarget& target_attn, const LossWeights& w);
LossReport finetune_total(const EnhancedOutput& out, const ImageRGB& y, const LossWeights& w);

ad::Tensor attention_target_tensor(const AttentionTarget& target);

}  // namespace ueg::losses
