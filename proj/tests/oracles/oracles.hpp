#pragma once

// Reference computations written independently of the library: textbook
// formulas evaluated directly, exact arithmetic where ties matter.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "ueg/image.hpp"

namespace ueg::oracle {

using Rational = boost::multiprecision::cpp_rational;

/// Between-class variance sum_k w_k (mu_k - mu_T)^2 with bin centers (b + 1/2)/256.
inline Rational between_class_variance(const std::array<std::uint64_t, 256>& h, const std::vector<int>& cuts) {
  Rational total = 0, mean_num = 0;
  for (int b = 0; b < 256; ++b) {
    total += h[b];
    mean_num += Rational(h[b]) * Rational(2 * b + 1, 512);
  }
  const Rational mu_t = mean_num / total;
  Rational var = 0;
  int lo = 0;
  std::vector<int> ends = cuts;
  ends.push_back(255);
  for (int hi : ends) {
    Rational w = 0, s = 0;
    for (int b = lo; b <= hi; ++b) {
      w += h[b];
      s += Rational(h[b]) * Rational(2 * b + 1, 512);
    }
    if (w != 0) {
      const Rational mu = s / w;
      var += (w / total) * (mu - mu_t) * (mu - mu_t);
    }
    lo = hi + 1;
  }
  return var;
}

namespace detail {

// Textbook variance in double from class weights and means; used to shortlist
// candidates, which are then compared exactly.
struct Classes {
  std::array<double, 257> n{}, s{};
  double total = 0, mu_t = 0;
  explicit Classes(const std::array<std::uint64_t, 256>& h) {
    for (int b = 0; b < 256; ++b) {
      n[b + 1] = n[b] + static_cast<double>(h[b]);
      s[b + 1] = s[b] + static_cast<double>(h[b]) * (b + 0.5) / 256.0;
    }
    total = n[256];
    mu_t = s[256] / total;
  }
  double term(int lo, int hi) const {
    const double w = n[hi + 1] - n[lo];
    if (w == 0) return 0;
    const double mu = (s[hi + 1] - s[lo]) / w;
    return (w / total) * (mu - mu_t) * (mu - mu_t);
  }
};

template <class Cand>
Cand exact_best(const std::array<std::uint64_t, 256>& h, const std::vector<std::pair<double, Cand>>& scored,
                const std::function<std::vector<int>(const Cand&)>& cuts) {
  double top = -1;
  for (const auto& c : scored) top = std::max(top, c.first);
  Cand best{};
  Rational best_v = -1;
  for (const auto& c : scored) {
    if (c.first < top - 1e-9 * std::max(1.0, top)) continue;
    const Rational v = between_class_variance(h, cuts(c.second));
    if (v > best_v) {  // candidates arrive in ascending order, so ties keep the first
      best_v = v;
      best = c.second;
    }
  }
  return best;
}

}  // namespace detail

/// Exhaustive single cut; ties resolve to the smallest cut.
inline int otsu_cut(const std::array<std::uint64_t, 256>& h) {
  const detail::Classes c(h);
  std::vector<std::pair<double, int>> scored;
  for (int t = 0; t < 255; ++t) scored.push_back({c.term(0, t) + c.term(t + 1, 255), t});
  return detail::exact_best<int>(h, scored, [](const int& t) { return std::vector<int>{t}; });
}

/// Exhaustive cut pair; ties resolve lexicographically.
inline std::pair<int, int> multi_otsu_cuts(const std::array<std::uint64_t, 256>& h) {
  const detail::Classes c(h);
  std::vector<std::pair<double, std::pair<int, int>>> scored;
  for (int t1 = 0; t1 < 254; ++t1) {
    for (int t2 = t1 + 1; t2 < 255; ++t2) {
      scored.push_back({c.term(0, t1) + c.term(t1 + 1, t2) + c.term(t2 + 1, 255), {t1, t2}});
    }
  }
  return detail::exact_best<std::pair<int, int>>(
      h, scored, [](const std::pair<int, int>& p) { return std::vector<int>{p.first, p.second}; });
}

inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    i = i < 0 ? -i : 2 * (n - 1) - i;
  }
  return i;
}

/// SSIM by direct 2-D windowed sums over luminance (11x11 Gaussian, sigma 1.5, reflect).
inline std::vector<double> ssim_map(const ImageRGB& a, const ImageRGB& b) {
  const int h = a.height(), w = a.width(), r = 5;
  std::vector<double> la(static_cast<std::size_t>(h) * w), lb(la.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      la[y * w + x] = 0.299 * a.at(y, x, 0) + 0.587 * a.at(y, x, 1) + 0.114 * a.at(y, x, 2);
      lb[y * w + x] = 0.299 * b.at(y, x, 0) + 0.587 * b.at(y, x, 1) + 0.114 * b.at(y, x, 2);
    }
  }
  double win[11][11];
  double norm = 0;
  for (int i = -r; i <= r; ++i) {
    for (int j = -r; j <= r; ++j) {
      win[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
      norm += win[i + r][j + r];
    }
  }
  const double c1 = 1e-4, c2 = 9e-4;
  std::vector<double> out(la.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = -r; i <= r; ++i) {
        for (int j = -r; j <= r; ++j) {
          const double k = win[i + r][j + r] / norm;
          const double va = la[reflect(y + i, h) * w + reflect(x + j, w)];
          const double vb = lb[reflect(y + i, h) * w + reflect(x + j, w)];
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      out[y * w + x] = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return out;
}

inline double ssim(const ImageRGB& a, const ImageRGB& b) {
  const auto m = ssim_map(a, b);
  double s = 0;
  for (double v : m) s += v;
  return s / static_cast<double>(m.size());
}

/// KL(Pois(lh) || Pois(l)) as sum_k p(k) log(p(k)/q(k)) truncated at ceil(10 max) + 50 terms.
inline double poisson_kl_series(double lh, double l) {
  const int terms = static_cast<int>(std::ceil(10.0 * std::max(lh, l))) + 50;
  double kl = 0;
  for (int k = 0; k < terms; ++k) {
    const double log_p = k * std::log(lh) - lh - std::lgamma(k + 1.0);
    const double log_q = k * std::log(l) - l - std::lgamma(k + 1.0);
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return kl;
}

inline double psnr(const ImageRGB& a, const ImageRGB& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += std::pow(a.data()[i] - b.data()[i], 2);
  return -10.0 * std::log10(s / static_cast<double>(a.data().size()));
}

}  // namespace ueg::oracle
