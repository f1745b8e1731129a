#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ueg/autograd.hpp"
#include "ueg/image.hpp"
#include "ueg/model.hpp"
#include "ueg/rng.hpp"

namespace ueg::testing {

inline ImageRGB random_image(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  ImageRGB img(h, w);
  for (double& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

inline ad::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "ueg_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
  std::filesystem::path path_;
};

struct GradCheckResult {
  double worst_excess = 0.0;  // max(|a-n| - (atol + rtol*|n|)); <= 0 passes
  std::size_t checked = 0;
  std::string where;
};

/// Compares reverse-mode gradients of a scalar function with central
/// differences for every element of every input (or a strided subset).
inline GradCheckResult grad_check(const std::function<ad::Var(const std::vector<ad::Var>&)>& f,
                                  std::vector<ad::Tensor> inputs, double rtol, double atol, double h = 1e-6,
                                  std::size_t stride = 1) {
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(ad::parameter(t));
  ad::backward(f(vars));
  GradCheckResult res;
  res.worst_excess = -INFINITY;
  auto eval = [&](const std::vector<ad::Tensor>& ts) {
    ad::NoGradGuard guard;
    std::vector<ad::Var> cs;
    for (const auto& t : ts) cs.push_back(ad::constant(t));
    return f(cs).item();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ad::Tensor analytic = vars[k].grad().empty() ? ad::Tensor(inputs[k].shape(), 0.0) : vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); i += stride) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = eval(inputs);
      inputs[k][i] = orig - h;
      const double down = eval(inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double excess = std::fabs(analytic[i] - numeric) - (atol + rtol * std::fabs(numeric));
      ++res.checked;
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        res.where = "input " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                    std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

/// Reverse-mode gradients of every model parameter array against central
/// differences on up to `per_array` evenly spaced elements of each array.
inline GradCheckResult model_grad_check(ModelState state, const ImageRGB& img,
                                        const std::function<ad::Var(const GraphOutput&)>& loss, double rtol,
                                        double atol, std::size_t per_array, double h = 1e-6) {
  const ad::Var x = ad::constant(to_tensor(img));
  const BoundParams bound(state, true);
  ad::backward(loss(forward_graph(x, bound, state.config)));
  auto eval = [&] {
    ad::NoGradGuard guard;
    const BoundParams p(state, false);
    return loss(forward_graph(x, p, state.config)).item();
  };
  GradCheckResult res;
  res.worst_excess = -INFINITY;
  for (std::size_t k = 0; k < state.params().size(); ++k) {
    auto& values = state.params()[k].values;
    const auto& g = bound.vars()[k].grad();
    const std::size_t step = std::max<std::size_t>(1, values.size() / per_array);
    for (std::size_t i = 0; i < values.size(); i += step) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = eval();
      values[i] = orig - h;
      const double down = eval();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = g.empty() ? 0.0 : g[i];
      const double excess = std::fabs(analytic - numeric) - (atol + rtol * std::fabs(numeric));
      ++res.checked;
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        res.where = state.params()[k].name + "[" + std::to_string(i) + "]: analytic " + std::to_string(analytic) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace ueg::testing
