#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualpath/tensor.hpp"

namespace dualpath {

enum class ParamGroup { Backbone, NewModule };

const char* group_name(ParamGroup group);

// Handle to a model tensor plus the metadata the optimizer needs.
// Trainability lives on the tensor (requires_grad), so every copy of a
// Parameter agrees on it.
struct Parameter {
  Tensor tensor;
  ParamGroup group = ParamGroup::NewModule;
  std::string name;

  bool trainable() const { return tensor.requires_grad(); }
  void set_trainable(bool value) { tensor.set_requires_grad(value); }
};

void zero_grad(std::vector<Parameter>& params);

// Rescales trainable gradients so their joint L2 norm is at most max_norm.
// Returns the factor applied (1 when the norm is already within bounds or zero).
double clip_global_norm(std::vector<Parameter>& params, double max_norm = 5.0);

double global_grad_norm(const std::vector<Parameter>& params);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1.5e-4;
  double lr_backbone = 1e-6;
  double lr_new_module = 1e-4;
};

// AdamW with decoupled weight decay and one learning rate per ParamGroup.
// Moment buffers are keyed by position in the parameter list given at
// construction and exist only for trainable parameters.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamW(const std::vector<Parameter>& params, AdamWConfig config);

  void step(std::vector<Parameter>& params);

  void set_learning_rates(double backbone, double new_module);
  double learning_rate(ParamGroup group) const;

  const AdamWConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_; }
  const std::vector<Moments>& moments() const { return moments_; }

  // For checkpoint restore.
  void restore(std::uint64_t step, std::vector<Moments> moments);

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace dualpath
