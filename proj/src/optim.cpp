#include "dualpath/optim.hpp"

#include <cmath>

#include "dualpath/errors.hpp"

namespace dualpath {

const char* group_name(ParamGroup group) {
  return group == ParamGroup::Backbone ? "backbone" : "new_module";
}

void zero_grad(std::vector<Parameter>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

double global_grad_norm(const std::vector<Parameter>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.trainable() || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_norm(std::vector<Parameter>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm == 0.0 || norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : params) {
    if (!p.trainable() || !p.tensor.has_grad()) continue;
    for (double& g : p.tensor.mutable_grad()) g *= factor;
  }
  return factor;
}

AdamW::AdamW(const std::vector<Parameter>& params, AdamWConfig config) : config_(config) {
  moments_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable()) {
      moments_[i].m.assign(params[i].tensor.numel(), 0.0);
      moments_[i].v.assign(params[i].tensor.numel(), 0.0);
    }
  }
}

void AdamW::set_learning_rates(double backbone, double new_module) {
  config_.lr_backbone = backbone;
  config_.lr_new_module = new_module;
}

double AdamW::learning_rate(ParamGroup group) const {
  return group == ParamGroup::Backbone ? config_.lr_backbone : config_.lr_new_module;
}

void AdamW::step(std::vector<Parameter>& params) {
  if (params.size() != moments_.size()) {
    throw StateError("optimizer built for " + std::to_string(moments_.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.trainable()) continue;
    if (!p.tensor.has_grad()) throw StateError("trainable parameter '" + p.name + "' has no gradient");
    if (moments_[i].m.size() != p.tensor.numel()) {
      throw StateError("parameter '" + p.name + "' became trainable after optimizer construction");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable()) continue;
    const double lr = learning_rate(p.group);
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    auto& m = moments_[i].m;
    auto& v = moments_[i].v;
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] = w[j] * decay - lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void AdamW::restore(std::uint64_t step, std::vector<Moments> moments) {
  if (moments.size() != moments_.size()) throw CorruptionError("optimizer moment count mismatch");
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].m.size() != moments_[i].m.size() || moments[i].v.size() != moments_[i].v.size()) {
      throw CorruptionError("optimizer moment shape mismatch at parameter " + std::to_string(i));
    }
  }
  step_ = step;
  moments_ = std::move(moments);
}

}  // namespace dualpath
