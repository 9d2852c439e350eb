#include "dualpath/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "dualpath/errors.hpp"

namespace dualpath {

double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x,
                         const GradCheckOptions& options) {
  const bool was_trainable = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = fn(x);
  if (!std::isfinite(y.item())) throw NumericError("finite_diff_check: non-finite function value");
  y.backward();
  std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                              : std::vector<double>(x.numel(), 0.0);
  x.zero_grad();

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords && options.max_coords < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
  }

  auto eval = [&]() {
    NoGradGuard guard;
    double v = fn(x).item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
    return v;
  };

  double worst = 0.0;
  auto values = x.mutable_data();
  for (std::size_t c : coords) {
    const double orig = values[c];
    values[c] = orig + options.step;
    const double fp = eval();
    values[c] = orig - options.step;
    const double fm = eval();
    values[c] = orig;
    const double numeric = (fp - fm) / (2.0 * options.step);
    const double a = analytic[c];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  x.set_requires_grad(was_trainable);
  return worst;
}

}  // namespace dualpath
