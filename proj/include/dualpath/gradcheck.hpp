#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "dualpath/tensor.hpp"

namespace dualpath {

struct GradCheckOptions {
  double step = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

// Compares the reverse-mode gradient of fn at x with central differences.
// Returns max |a-b| / max(|a|,|b|,1e-8) over the checked coordinates.
// fn must build its graph from x on every call; x.requires_grad is set.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x,
                         const GradCheckOptions& options = {});

}  // namespace dualpath
