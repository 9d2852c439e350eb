#include "dualpath/objective.hpp"

#include "dualpath/errors.hpp"
#include "dualpath/model.hpp"
#include "dualpath/ops.hpp"

namespace dualpath {

void LossWeights::validate() const {
  if (alpha < 0.0 || lambda_g < 0.0 || lambda_a < 0.0) throw ConfigError("loss weights must be non-negative");
}

Tensor gender_loss(const Tensor& fused, const Tensor& direct, const Tensor& mediated, std::span<const int> labels,
                   double alpha) {
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(kGenderClasses)) {
      throw LabelError("gender label " + std::to_string(y) + " outside {0,1,2}");
    }
  }
  Tensor loss = cross_entropy_ignore(fused, labels);
  if (alpha == 0.0) return loss;
  Tensor aux = add(cross_entropy_ignore(direct, labels), cross_entropy_ignore(mediated, labels));
  return add(loss, scale(aux, alpha));
}

Tensor attribute_loss(const std::vector<Tensor>& logits, const std::vector<std::vector<int>>& labels) {
  if (logits.size() != labels.size()) throw DimensionError("one label vector per attribute required");
  if (logits.empty()) return Tensor::scalar(0.0);
  Tensor total = cross_entropy_ignore(logits[0], labels[0]);
  for (std::size_t a = 1; a < logits.size(); ++a) total = add(total, cross_entropy_ignore(logits[a], labels[a]));
  return scale(total, 1.0 / static_cast<double>(logits.size()));
}

Tensor total_loss(const Tensor& gender, const Tensor& attribute, double lambda_g, double lambda_a) {
  return add(scale(gender, lambda_g), scale(attribute, lambda_a));
}

}  // namespace dualpath
