#pragma once

// Tape-free reverse-mode differentiation over dense tensors. Every op returns a
// Var that owns its value and, when gradients are enabled, a closure that
// pushes its gradient to the inputs. Feature maps are rank-3 (C, H, W) in
// row-major order; convolution weights are rank-4 (Cout, Cin/groups, K, K).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ueg::ad {

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-3 accessors.
  int channels() const { return shape_[0]; }
  int height() const { return shape_[1]; }
  int width() const { return shape_[2]; }
  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  /// Rank-3 tensor of shape (C, H, W).
  static Tensor chw(int c, int h, int w, double fill = 0.0) { return Tensor({c, h, w}, fill); }
  static Tensor scalar(double v) { return Tensor({1, 1, 1}, v); }

private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  /// Gradient buffer, zero-initialized on first use.
  Tensor& grad_buffer();
};

class Var {
public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Single element of a scalar Var.
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

Var constant(Tensor value);
/// Leaf that accumulates a gradient.
Var parameter(Tensor value);

/// Builds a result node; the closure is kept only when some input needs a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Back-propagates from a single-element Var, seeding its gradient with 1.
void backward(const Var& root);

// ---- elementwise (rank-3 broadcasting: each dim equal or 1) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
/// a^b with 0^b defined as 0 and zero derivatives at a <= 0.
Var pow(const Var& a, const Var& b);

Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var scalar_sub(double s, const Var& a);

Var neg(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var abs(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var log(const Var& a);
/// Gradient passes only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);
/// Huber-style smooth L1 with quadratic zone |a| < beta.
Var smooth_l1(const Var& a, double beta);

Var sum(const Var& a);
Var mean(const Var& a);

// ---- structural ----
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& a, int begin, int end);
/// (C, H, W) -> (C, W, H).
Var transpose_hw(const Var& a);

// ---- spatial ----
/// Zero-padded 2-D convolution. groups must be 1 or equal to Cin == Cout (depthwise).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride = 1, int padding = 0, int groups = 1);
Var global_avg_pool(const Var& x);
/// Averages over bins [floor(i*H/oh), ceil((i+1)*H/oh)); also upsamples when oh > H.
Var adaptive_avg_pool(const Var& x, int out_h, int out_w);
/// Per-channel separable Gaussian filter with reflect padding.
Var gaussian_filter(const Var& x, double sigma, int radius);

// ---- normalization ----
/// Normalizes each pixel across channels.
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Normalizes each channel across the spatial extent.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- attention ----
/// Multi-head self-attention along image rows. qkv stacks Q, K, V on the channel
/// axis (3D, H, W); each row of width W is one sequence. Returns (D, H, W).
Var row_attention(const Var& qkv, int heads);
/// Softmax probabilities (W x W, row-major) of one row and head, for inspection.
std::vector<double> row_attention_probs(const Tensor& qkv, int heads, int row, int head);

}  // namespace ueg::ad
