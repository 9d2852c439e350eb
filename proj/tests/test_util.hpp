#pragma once

#include <random>

#include "dualpath/ops.hpp"
#include "dualpath/tensor.hpp"

namespace testutil {

inline dualpath::Tensor random_tensor(dualpath::Shape shape, std::mt19937_64& rng, double scale = 1.0,
                                      bool requires_grad = false) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(dualpath::shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return dualpath::Tensor(std::move(shape), std::move(v), requires_grad);
}

// Fixed random weighting so every output element reaches the gradient.
inline dualpath::Tensor probe(const dualpath::Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return dualpath::sum_all(dualpath::mul(y, random_tensor(y.shape(), rng)));
}

inline double max_abs_diff(const dualpath::Tensor& a, const dualpath::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Largest deviation of any row sum (last axis) from 1.
inline double row_stochastic_error(const dualpath::Tensor& w) {
  const std::size_t n = w.shape().back();
  double worst = 0.0;
  for (std::size_t r = 0; r < w.numel() / n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (w[r * n + j] < 0.0) return 1.0;
      s += w[r * n + j];
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

}  // namespace testutil
