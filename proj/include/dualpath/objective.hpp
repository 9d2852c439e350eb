#pragma once

#include <span>
#include <vector>

#include "dualpath/tensor.hpp"

namespace dualpath {

struct LossWeights {
  double alpha = 0.25;     // auxiliary gender heads
  double lambda_g = 0.5;   // gender term
  double lambda_a = 0.5;   // attribute term

  // Throws ConfigError on a negative weight.
  void validate() const;
};

// CE(fused) + alpha * (CE(direct) + CE(mediated)). Labels must be in {0,1,2};
// gender never uses the ignore index.
Tensor gender_loss(const Tensor& fused, const Tensor& direct, const Tensor& mediated, std::span<const int> labels,
                   double alpha);

// Mean over attributes of the per-attribute ignore-aware cross-entropy. An
// attribute whose labels are all ignored contributes 0 and still counts.
Tensor attribute_loss(const std::vector<Tensor>& logits, const std::vector<std::vector<int>>& labels);

Tensor total_loss(const Tensor& gender, const Tensor& attribute, double lambda_g, double lambda_a);

}  // namespace dualpath
