#include "ueg/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>

#include "ueg/imaging.hpp"

namespace ueg::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) {
      throw std::invalid_argument("negative tensor dimension");
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    throw std::invalid_argument("Tensor: value count does not match shape " + shape_string(shape_));
  }
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? ", " : "") + std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

double Var::item() const {
  if (value().size() != 1) {
    throw std::logic_error("item() on non-scalar of shape " + shape_string(shape()));
  }
  return value()[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->backward = std::move(backward_fn);
      for (auto& v : inputs) {
        n->parents.push_back(v.node());
      }
    }
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw std::logic_error("backward() requires a single-element root, got " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) {
    return;
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise machinery

namespace {

struct BroadcastPlan {
  std::vector<int> out_shape;
  bool same = false;
  std::array<std::size_t, 3> stride_a{};
  std::array<std::size_t, 3> stride_b{};
};

BroadcastPlan plan_broadcast(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.same = true;
    p.out_shape = a;
    return p;
  }
  if (a.size() != 3 || b.size() != 3) {
    throw std::invalid_argument(std::string(op) + ": broadcasting needs rank-3 operands, got " + shape_string(a) +
                                " and " + shape_string(b));
  }
  p.out_shape.resize(3);
  for (int i = 0; i < 3; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                                  shape_string(b));
    }
    p.out_shape[i] = std::max(a[i], b[i]);
  }
  const std::array<std::size_t, 3> sa{static_cast<std::size_t>(a[1]) * a[2], static_cast<std::size_t>(a[2]), 1};
  const std::array<std::size_t, 3> sb{static_cast<std::size_t>(b[1]) * b[2], static_cast<std::size_t>(b[2]), 1};
  for (int i = 0; i < 3; ++i) {
    p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return p;
}

template <class Visit>
void for_each_broadcast(const BroadcastPlan& p, Visit&& visit) {
  if (p.same) {
    const std::size_t n = element_count(p.out_shape);
    for (std::size_t i = 0; i < n; ++i) {
      visit(i, i, i);
    }
    return;
  }
  std::size_t o = 0;
  for (int c = 0; c < p.out_shape[0]; ++c) {
    for (int y = 0; y < p.out_shape[1]; ++y) {
      for (int x = 0; x < p.out_shape[2]; ++x, ++o) {
        visit(o, c * p.stride_a[0] + y * p.stride_a[1] + x * p.stride_a[2],
              c * p.stride_b[0] + y * p.stride_b[1] + x * p.stride_b[2]);
      }
    }
  }
}

// f(a, b) -> out; da(a, b, out) and db(a, b, out) are the partial derivatives.
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  Tensor out(plan.out_shape);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(av[ia], bv[ib]); });
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(out), {a, b}, [an, bn, plan, da, db](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& y = self.value;
    const Tensor& av = an->value;
    const Tensor& bv = bn->value;
    Tensor* ga = an->requires_grad ? &an->grad_buffer() : nullptr;
    Tensor* gb = bn->requires_grad ? &bn->grad_buffer() : nullptr;
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) (*ga)[ia] += g[o] * da(av[ia], bv[ib], y[o]);
      if (gb) (*gb)[ib] += g[o] * db(av[ia], bv[ib], y[o]);
    });
  });
}

// f(x) -> y; df(x, y) is the derivative.
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = f(av[i]);
  }
  auto an = a.node();
  return make_result(std::move(out), {a}, [an, df](Node& self) {
    Tensor& ga = an->grad_buffer();
    const Tensor& x = an->value;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i] * df(x[i], self.value[i]);
    }
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Var pow(const Var& a, const Var& b) {
  return binary(
      a, b, "pow", [](double x, double e) { return x <= 0.0 ? 0.0 : std::pow(x, e); },
      [](double x, double e, double out) { return x <= 0.0 ? 0.0 : e * out / x; },
      [](double x, double, double out) { return x <= 0.0 ? 0.0 : out * std::log(x); });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var scalar_sub(double s, const Var& a) {
  return unary(a, [s](double x) { return s - x; }, [](double, double) { return -1.0; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var gelu(const Var& a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) {
          return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) {
          return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var smooth_l1(const Var& a, double beta) {
  return unary(
      a,
      [beta](double x) {
        const double ax = std::fabs(x);
        return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
      },
      [beta](double x, double) {
        if (std::fabs(x) < beta) {
          return x / beta;
        }
        return x > 0.0 ? 1.0 : -1.0;
      });
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  const double total = std::accumulate(av.data().begin(), av.data().end(), 0.0);
  auto an = a.node();
  return make_result(Tensor::scalar(total), {a}, [an](Node& self) {
    const double g = self.grad[0];
    for (double& v : an->grad_buffer().data()) {
      v += g;
    }
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return mul_scalar(sum(a), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Structural

Var reshape(const Var& a, std::vector<int> shape) {
  if (element_count(shape) != a.value().size()) {
    throw std::invalid_argument("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), a.value().storage());
  auto an = a.node();
  return make_result(std::move(out), {a}, [an](Node& self) {
    Tensor& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i];
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_channels: no inputs");
  }
  const int h = parts[0].value().height();
  const int w = parts[0].value().width();
  int c_total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 3 || p.value().height() != h || p.value().width() != w) {
      throw std::invalid_argument("concat_channels: spatial mismatch " + shape_string(p.shape()));
    }
    c_total += p.value().channels();
  }
  Tensor out = Tensor::chw(c_total, h, w);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + offset);
    offset += p.value().size();
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
  }
  return make_result(std::move(out), parts, [nodes](Node& self) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      const std::size_t len = n->value.size();
      if (n->requires_grad) {
        Tensor& g = n->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) {
          g[i] += self.grad[off + i];
        }
      }
      off += len;
    }
  });
}

Var slice_channels(const Var& a, int begin, int end) {
  const Tensor& av = a.value();
  if (av.rank() != 3 || begin < 0 || end > av.channels() || begin >= end) {
    throw std::invalid_argument("slice_channels: bad range on " + shape_string(a.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(av.height()) * av.width();
  Tensor out = Tensor::chw(end - begin, av.height(), av.width());
  std::copy(av.ptr() + begin * plane, av.ptr() + end * plane, out.ptr());
  auto an = a.node();
  return make_result(std::move(out), {a}, [an, begin, plane](Node& self) {
    Tensor& ga = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[begin * plane + i] += self.grad[i];
    }
  });
}

Var transpose_hw(const Var& a) {
  const Tensor& av = a.value();
  const int c = av.channels(), h = av.height(), w = av.width();
  Tensor out = Tensor::chw(c, w, h);
  for (int k = 0; k < c; ++k) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(k, x, y) = av.at(k, y, x);
      }
    }
  }
  auto an = a.node();
  return make_result(std::move(out), {a}, [an, c, h, w](Node& self) {
    Tensor& ga = an->grad_buffer();
    for (int k = 0; k < c; ++k) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          ga.at(k, y, x) += self.grad.at(k, x, y);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  int cin, h, w, cout, k, stride, pad, groups, oh, ow;
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t ncols = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * ncols;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[oy * g.ow + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                      ? x[(static_cast<std::size_t>(ci) * g.h + iy) * g.w + ix]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t ncols = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * ncols;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            dx[(static_cast<std::size_t>(ci) * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding, int groups) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4) {
    throw std::invalid_argument("conv2d: expected (C,H,W) input and (Cout,Cin/g,K,K) weight, got " +
                                shape_string(xv.shape()) + " and " + shape_string(wv.shape()));
  }
  ConvGeometry g{xv.channels(), xv.height(), xv.width(), wv.dim(0), wv.dim(2), stride, padding, groups, 0, 0};
  if (wv.dim(2) != wv.dim(3)) {
    throw std::invalid_argument("conv2d: kernels must be square");
  }
  if (groups == 1) {
    if (wv.dim(1) != g.cin) {
      throw std::invalid_argument("conv2d: weight expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                                  std::to_string(g.cin));
    }
  } else if (groups != g.cin || g.cout != g.cin || wv.dim(1) != 1) {
    throw std::invalid_argument("conv2d: only dense or depthwise grouping is supported");
  }
  if (bias.defined() && (bias.value().size() != static_cast<std::size_t>(g.cout))) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;
  if (g.oh < 1 || g.ow < 1) {
    throw std::invalid_argument("conv2d: input " + shape_string(xv.shape()) + " too small for kernel");
  }
  const std::size_t npix = static_cast<std::size_t>(g.oh) * g.ow;
  Tensor out = Tensor::chw(g.cout, g.oh, g.ow);

  const bool pointwise = groups == 1 && g.k == 1 && stride == 1 && padding == 0;
  if (groups == 1) {
    const int kdim = g.cin * g.k * g.k;
    ConstMapMat W(wv.ptr(), g.cout, kdim);
    MapMat Y(out.ptr(), g.cout, static_cast<Eigen::Index>(npix));
    if (pointwise) {
      Y.noalias() = W * ConstMapMat(xv.ptr(), g.cin, static_cast<Eigen::Index>(npix));
    } else {
      std::vector<double> cols(static_cast<std::size_t>(kdim) * npix);
      im2col(xv.ptr(), g, cols.data());
      Y.noalias() = W * ConstMapMat(cols.data(), kdim, static_cast<Eigen::Index>(npix));
    }
  } else {
    for (int c = 0; c < g.cin; ++c) {
      const double* wk = wv.ptr() + static_cast<std::size_t>(c) * g.k * g.k;
      const double* xc = xv.ptr() + static_cast<std::size_t>(c) * g.h * g.w;
      double* yc = out.ptr() + static_cast<std::size_t>(c) * npix;
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          const double wt = wk[ky * g.k + kx];
          for (int oy = 0; oy < g.oh; ++oy) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < g.ow; ++ox) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= g.w) continue;
              yc[oy * g.ow + ox] += wt * xc[iy * g.w + ix];
            }
          }
        }
      }
    }
  }
  if (bias.defined()) {
    for (int c = 0; c < g.cout; ++c) {
      const double b = bias.value()[c];
      double* yc = out.ptr() + static_cast<std::size_t>(c) * npix;
      for (std::size_t i = 0; i < npix; ++i) {
        yc[i] += b;
      }
    }
  }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) {
    inputs.push_back(bias);
  }
  return make_result(std::move(out), inputs, [xn, wn, bn, g, pointwise, npix](Node& self) {
    const Tensor& dy = self.grad;
    if (bn && bn->requires_grad) {
      Tensor& db = bn->grad_buffer();
      for (int c = 0; c < g.cout; ++c) {
        const double* d = dy.ptr() + static_cast<std::size_t>(c) * npix;
        db[c] += std::accumulate(d, d + npix, 0.0);
      }
    }
    if (g.groups == 1) {
      const int kdim = g.cin * g.k * g.k;
      ConstMapMat dY(dy.ptr(), g.cout, static_cast<Eigen::Index>(npix));
      std::vector<double> cols;
      const double* colp = xn->value.ptr();
      if (!pointwise) {
        cols.resize(static_cast<std::size_t>(kdim) * npix);
        im2col(xn->value.ptr(), g, cols.data());
        colp = cols.data();
      }
      if (wn->requires_grad) {
        MapMat dW(wn->grad_buffer().ptr(), g.cout, kdim);
        dW.noalias() += dY * ConstMapMat(colp, kdim, static_cast<Eigen::Index>(npix)).transpose();
      }
      if (xn->requires_grad) {
        ConstMapMat W(wn->value.ptr(), g.cout, kdim);
        if (pointwise) {
          MapMat dX(xn->grad_buffer().ptr(), g.cin, static_cast<Eigen::Index>(npix));
          dX.noalias() += W.transpose() * dY;
        } else {
          RowMat dcols = W.transpose() * dY;
          col2im(dcols.data(), g, xn->grad_buffer().ptr());
        }
      }
    } else {
      const Tensor& xv = xn->value;
      const Tensor& wv = wn->value;
      Tensor* dx = xn->requires_grad ? &xn->grad_buffer() : nullptr;
      Tensor* dw = wn->requires_grad ? &wn->grad_buffer() : nullptr;
      for (int c = 0; c < g.cin; ++c) {
        const double* xc = xv.ptr() + static_cast<std::size_t>(c) * g.h * g.w;
        const double* dyc = dy.ptr() + static_cast<std::size_t>(c) * npix;
        for (int ky = 0; ky < g.k; ++ky) {
          for (int kx = 0; kx < g.k; ++kx) {
            const std::size_t widx = static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx;
            const double wt = wv[widx];
            double acc = 0.0;
            for (int oy = 0; oy < g.oh; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              for (int ox = 0; ox < g.ow; ++ox) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.w) continue;
                const double d = dyc[oy * g.ow + ox];
                acc += d * xc[iy * g.w + ix];
                if (dx) (*dx)[(static_cast<std::size_t>(c) * g.h + iy) * g.w + ix] += d * wt;
              }
            }
            if (dw) (*dw)[widx] += acc;
          }
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) { return adaptive_avg_pool(x, 1, 1); }

Var adaptive_avg_pool(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x.value();
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  auto bins = [](int n_in, int n_out) {
    std::vector<std::pair<int, int>> b(n_out);
    for (int i = 0; i < n_out; ++i) {
      const int lo = static_cast<int>((static_cast<long>(i) * n_in) / n_out);
      const int hi = static_cast<int>((static_cast<long>(i + 1) * n_in + n_out - 1) / n_out);
      b[i] = {lo, hi};
    }
    return b;
  };
  const auto by = bins(h, out_h);
  const auto bx = bins(w, out_w);
  Tensor out = Tensor::chw(c, out_h, out_w);
  for (int k = 0; k < c; ++k) {
    for (int i = 0; i < out_h; ++i) {
      for (int j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (int y = by[i].first; y < by[i].second; ++y) {
          for (int xx = bx[j].first; xx < bx[j].second; ++xx) {
            acc += xv.at(k, y, xx);
          }
        }
        out.at(k, i, j) = acc / ((by[i].second - by[i].first) * (bx[j].second - bx[j].first));
      }
    }
  }
  auto xn = x.node();
  return make_result(std::move(out), {x}, [xn, by, bx, c](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (int k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < by.size(); ++i) {
        for (std::size_t j = 0; j < bx.size(); ++j) {
          const double share = self.grad.at(k, static_cast<int>(i), static_cast<int>(j)) /
                               ((by[i].second - by[i].first) * (bx[j].second - bx[j].first));
          for (int y = by[i].first; y < by[i].second; ++y) {
            for (int xx = bx[j].first; xx < bx[j].second; ++xx) {
              gx.at(k, y, xx) += share;
            }
          }
        }
      }
    }
  });
}

namespace {

// One separable pass along rows (axis 2) or columns (axis 1), or its adjoint.
void reflect_pass(const Tensor& in, Tensor& out, const std::vector<double>& taps, int axis, bool adjoint) {
  const int radius = static_cast<int>(taps.size() / 2);
  const int c = in.channels(), h = in.height(), w = in.width();
  for (int k = 0; k < c; ++k) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int t = -radius; t <= radius; ++t) {
          const int sy = axis == 1 ? reflect_index(y + t, h) : y;
          const int sx = axis == 2 ? reflect_index(x + t, w) : x;
          if (adjoint) {
            out.at(k, sy, sx) += taps[t + radius] * in.at(k, y, x);
          } else {
            out.at(k, y, x) += taps[t + radius] * in.at(k, sy, sx);
          }
        }
      }
    }
  }
}

}  // namespace

Var gaussian_filter(const Var& x, double sigma, int radius) {
  const auto taps = gaussian_kernel(sigma, radius);
  const Tensor& xv = x.value();
  Tensor tmp(xv.shape(), 0.0);
  Tensor out(xv.shape(), 0.0);
  reflect_pass(xv, tmp, taps, 2, false);
  reflect_pass(tmp, out, taps, 1, false);
  auto xn = x.node();
  return make_result(std::move(out), {x}, [xn, taps](Node& self) {
    Tensor tmp(self.grad.shape(), 0.0);
    reflect_pass(self.grad, tmp, taps, 1, true);
    reflect_pass(tmp, xn->grad_buffer(), taps, 2, true);
  });
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

// Shared normalization kernel. Groups are either pixels (normalize across
// channels) or channels (normalize across pixels).
Var normalize(const Var& x, const Var& gamma, const Var& beta, double eps, bool across_channels) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) {
    throw std::invalid_argument("normalization expects a (C,H,W) tensor");
  }
  const int c = xv.channels();
  if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c)) {
    throw std::invalid_argument("normalization affine parameters must have one entry per channel");
  }
  const std::size_t plane = static_cast<std::size_t>(xv.height()) * xv.width();
  const std::size_t groups = across_channels ? plane : static_cast<std::size_t>(c);
  const std::size_t members = across_channels ? static_cast<std::size_t>(c) : plane;
  auto index = [=](std::size_t g, std::size_t m) { return across_channels ? m * plane + g : g * plane + m; };
  auto channel_of = [=](std::size_t g, std::size_t m) { return across_channels ? m : g; };

  Tensor xhat(xv.shape());
  std::vector<double> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double mu = 0.0;
    for (std::size_t m = 0; m < members; ++m) mu += xv[index(gi, m)];
    mu /= static_cast<double>(members);
    double var = 0.0;
    for (std::size_t m = 0; m < members; ++m) {
      const double d = xv[index(gi, m)] - mu;
      var += d * d;
    }
    var /= static_cast<double>(members);
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    for (std::size_t m = 0; m < members; ++m) {
      xhat[index(gi, m)] = (xv[index(gi, m)] - mu) * inv_std[gi];
    }
  }
  Tensor out(xv.shape());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t m = 0; m < members; ++m) {
      const std::size_t i = index(gi, m);
      const std::size_t ch = channel_of(gi, m);
      out[i] = gamma.value()[ch] * xhat[i] + beta.value()[ch];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_result(std::move(out), {x, gamma, beta},
                     [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, members, index,
                      channel_of](Node& self) {
                       const Tensor& dy = self.grad;
                       Tensor* dg = gn->requires_grad ? &gn->grad_buffer() : nullptr;
                       Tensor* db = bn->requires_grad ? &bn->grad_buffer() : nullptr;
                       Tensor* dx = xn->requires_grad ? &xn->grad_buffer() : nullptr;
                       const Tensor& gv = gn->value;
                       for (std::size_t gi = 0; gi < groups; ++gi) {
                         double mean_d = 0.0;
                         double mean_dx = 0.0;
                         for (std::size_t m = 0; m < members; ++m) {
                           const std::size_t i = index(gi, m);
                           const std::size_t ch = channel_of(gi, m);
                           if (dg) (*dg)[ch] += dy[i] * xhat[i];
                           if (db) (*db)[ch] += dy[i];
                           const double d = dy[i] * gv[ch];
                           mean_d += d;
                           mean_dx += d * xhat[i];
                         }
                         if (!dx) continue;
                         mean_d /= static_cast<double>(members);
                         mean_dx /= static_cast<double>(members);
                         for (std::size_t m = 0; m < members; ++m) {
                           const std::size_t i = index(gi, m);
                           const double d = dy[i] * gv[channel_of(gi, m)];
                           (*dx)[i] += inv_std[gi] * (d - mean_d - xhat[i] * mean_dx);
                         }
                       }
                     });
}

}  // namespace

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
  return normalize(x, gamma, beta, eps, true);
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  return normalize(x, gamma, beta, eps, false);
}

// ---------------------------------------------------------------------------
// Row attention

namespace {

struct AttentionShape {
  int d, h, w, heads, dk;
  std::size_t plane;
};

AttentionShape attention_shape(const Tensor& qkv, int heads) {
  if (qkv.rank() != 3 || qkv.channels() % 3 != 0) {
    throw std::invalid_argument("row_attention: expected stacked (3D, H, W) projections, got " +
                                shape_string(qkv.shape()));
  }
  const int d = qkv.channels() / 3;
  if (heads < 1 || d % heads != 0) {
    throw std::invalid_argument("row_attention: embedding width " + std::to_string(d) +
                                " not divisible by head count " + std::to_string(heads));
  }
  return {d, qkv.height(), qkv.width(), heads, d / heads, static_cast<std::size_t>(qkv.height()) * qkv.width()};
}

// dk x W view of channels [c0, c0+dk) on row y.
ConstStridedMat row_view(const double* base, const AttentionShape& s, int c0, int y) {
  return ConstStridedMat(base + c0 * s.plane + static_cast<std::size_t>(y) * s.w, s.dk, s.w,
                         Eigen::OuterStride<>(static_cast<Eigen::Index>(s.plane)));
}

StridedMat row_view_mut(double* base, const AttentionShape& s, int c0, int y) {
  return StridedMat(base + c0 * s.plane + static_cast<std::size_t>(y) * s.w, s.dk, s.w,
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(s.plane)));
}

void softmax_rows(RowMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

RowMat attention_probs(const Tensor& qkv, const AttentionShape& s, int y, int head) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.dk));
  const auto q = row_view(qkv.ptr(), s, head * s.dk, y);
  const auto k = row_view(qkv.ptr(), s, s.d + head * s.dk, y);
  RowMat p = scale * (q.transpose() * k);
  softmax_rows(p);
  return p;
}

}  // namespace

std::vector<double> row_attention_probs(const Tensor& qkv, int heads, int row, int head) {
  const auto s = attention_shape(qkv, heads);
  const RowMat p = attention_probs(qkv, s, row, head);
  return std::vector<double>(p.data(), p.data() + p.size());
}

Var row_attention(const Var& qkv, int heads) {
  const Tensor& in = qkv.value();
  const auto s = attention_shape(in, heads);
  Tensor out = Tensor::chw(s.d, s.h, s.w);
  for (int y = 0; y < s.h; ++y) {
    for (int n = 0; n < s.heads; ++n) {
      const RowMat p = attention_probs(in, s, y, n);
      const auto v = row_view(in.ptr(), s, 2 * s.d + n * s.dk, y);
      row_view_mut(out.ptr(), s, n * s.dk, y).noalias() = v * p.transpose();
    }
  }
  auto qn = qkv.node();
  return make_result(std::move(out), {qkv}, [qn, s](Node& self) {
    const Tensor& in = qn->value;
    double* gin = qn->grad_buffer().ptr();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.dk));
    for (int y = 0; y < s.h; ++y) {
      for (int n = 0; n < s.heads; ++n) {
        // Probabilities are recomputed rather than stored.
        const RowMat p = attention_probs(in, s, y, n);
        const auto q = row_view(in.ptr(), s, n * s.dk, y);
        const auto k = row_view(in.ptr(), s, s.d + n * s.dk, y);
        const auto v = row_view(in.ptr(), s, 2 * s.d + n * s.dk, y);
        const auto dout = row_view(self.grad.ptr(), s, n * s.dk, y);
        row_view_mut(gin, s, 2 * s.d + n * s.dk, y).noalias() += dout * p;
        RowMat dp = dout.transpose() * v;
        const Eigen::VectorXd inner = (dp.array() * p.array()).rowwise().sum();
        RowMat ds = p.array() * (dp.colwise() - inner).array();
        ds *= scale;
        row_view_mut(gin, s, n * s.dk, y).noalias() += k * ds.transpose();
        row_view_mut(gin, s, s.d + n * s.dk, y).noalias() += q * ds;
      }
    }
  });
}

}  // namespace ueg::ad
