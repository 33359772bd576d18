#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "c2ir/errors.hpp"

namespace c2ir {

using Vec = std::vector<double>;

// Dense row-major tensor of doubles. Rank is dynamic; everything in this
// project is 1-4 dimensional.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), v(numel(shape), 0.0) {}

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  std::size_t dim(std::size_t i) const { return i < shape.size() ? shape[i] : 1; }

  double& at2(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

  double& at3(std::size_t c, std::size_t y, std::size_t x) {
    return v[(c * shape[1] + y) * shape[2] + x];
  }
  double at3(std::size_t c, std::size_t y, std::size_t x) const {
    return v[(c * shape[1] + y) * shape[2] + x];
  }

  double& at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return v[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return v[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  // Sub-tensor for sample n of a [n, ...] batched tensor.
  Tensor slice(std::size_t n) const {
    std::vector<std::size_t> s(shape.begin() + 1, shape.end());
    Tensor out(s);
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(n * out.size()), out.size(),
                out.v.begin());
    return out;
  }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double vec_min(std::span<const double> v) {
  return *std::min_element(v.begin(), v.end());
}

inline double vec_max(std::span<const double> v) {
  return *std::max_element(v.begin(), v.end());
}

// ---- small numeric helpers shared across modules ----

inline double log_sum_exp(std::span<const double> z) {
  double m = vec_max(z);
  double s = 0.0;
  for (double x : z) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vec softmax(std::span<const double> z) {
  double m = vec_max(z);
  Vec p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (auto& x : p) x /= s;
  return p;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Linear-interpolated quantile of an unsorted sample, q in [0,1].
inline double quantile(Vec values, double q) {
  if (values.empty()) throw InputError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  double pos = q * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

}  // namespace c2ir
