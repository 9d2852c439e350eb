#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "dualpath/errors.hpp"
#include "dualpath/ops.hpp"
#include "dualpath/optim.hpp"

using namespace dualpath;

namespace {

Parameter make_param(std::vector<double> values, std::vector<double> grad, ParamGroup group = ParamGroup::NewModule,
                     bool trainable = true) {
  const auto n = values.size();
  Parameter p{Tensor({n}, std::move(values), trainable), group, "p"};
  if (trainable) {
    auto g = p.tensor.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] = grad[i];
  }
  return p;
}

}  // namespace

TEST_CASE("clip_global_norm scales down large gradients") {
  std::vector<Parameter> params{make_param({0, 0}, {6, 0}), make_param({0}, {8})};
  double s = clip_global_norm(params, 5.0);
  CHECK(s == doctest::Approx(0.5));
  CHECK(global_grad_norm(params) == doctest::Approx(5.0));
  CHECK(params[0].tensor.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("clip_global_norm leaves small and zero gradients alone") {
  std::vector<Parameter> small{make_param({0, 0}, {3, 0})};
  CHECK(clip_global_norm(small, 5.0) == 1.0);
  CHECK(small[0].tensor.grad()[0] == 3.0);

  std::vector<Parameter> zero{make_param({1, 2}, {0, 0})};
  CHECK(clip_global_norm(zero, 5.0) == 1.0);
  CHECK(zero[0].tensor.grad()[0] == 0.0);
}

TEST_CASE("clip_global_norm is idempotent") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(7);
    for (auto& v : g) v = nd(rng);
    std::vector<Parameter> params{make_param(std::vector<double>(7, 0.0), g)};
    clip_global_norm(params, 5.0);
    std::vector<double> once(params[0].tensor.grad().begin(), params[0].tensor.grad().end());
    CHECK(clip_global_norm(params, 5.0) == doctest::Approx(1.0));
    for (std::size_t i = 0; i < 7; ++i) CHECK(params[0].tensor.grad()[i] == doctest::Approx(once[i]).epsilon(1e-14));
  }
}

TEST_CASE("first AdamW step matches closed form") {
  std::vector<Parameter> params{make_param({1.0}, {1.0})};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr_new_module = 0.1;
  AdamW opt(params, cfg);
  opt.step(params);
  CHECK(std::abs(params[0].tensor.data()[0] - (1.0 - 0.1 / (1.0 + cfg.eps))) < 1e-15);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("decoupled weight decay shrinks the parameter before the adaptive step") {
  std::vector<Parameter> params{make_param({2.0}, {0.5})};
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  cfg.lr_new_module = 0.01;
  AdamW opt(params, cfg);
  opt.step(params);
  const double expected = 2.0 * (1.0 - 0.01 * 0.1) - 0.01 * 0.5 / (0.5 + cfg.eps);
  CHECK(std::abs(params[0].tensor.data()[0] - expected) < 1e-15);
}

TEST_CASE("frozen parameters are bitwise untouched") {
  Parameter frozen{Tensor({3}, {0.1, 0.2, 0.3}, false), ParamGroup::Backbone, "frozen"};
  std::vector<Parameter> params{frozen, make_param({1, 1}, {1, -1})};
  AdamW opt(params, {});
  CHECK(opt.moments()[0].m.empty());
  std::vector<double> before(frozen.tensor.data().begin(), frozen.tensor.data().end());
  for (int i = 0; i < 5; ++i) {
    auto g = params[1].tensor.mutable_grad();
    g[0] = 0.3;
    opt.step(params);
  }
  CHECK(std::memcmp(before.data(), params[0].tensor.data().data(), sizeof(double) * 3) == 0);
  CHECK(opt.step_count() == 5);
}

TEST_CASE("group learning rates scale the update") {
  std::vector<Parameter> params{make_param({1.0, -2.0}, {0.3, -0.7}, ParamGroup::Backbone),
                                make_param({1.0, -2.0}, {0.3, -0.7}, ParamGroup::NewModule)};
  AdamWConfig cfg;
  cfg.lr_backbone = 1e-6;
  cfg.lr_new_module = 1e-4;
  AdamW opt(params, cfg);
  opt.step(params);
  for (std::size_t i = 0; i < 2; ++i) {
    const double init = i == 0 ? 1.0 : -2.0;
    const double db = params[0].tensor.data()[i] - init;
    const double dn = params[1].tensor.data()[i] - init;
    CHECK(std::abs(dn / db - 100.0) / 100.0 < 1e-9);
  }
}

TEST_CASE("missing gradient on a trainable parameter is a state error") {
  Parameter p{Tensor({2}, {1, 2}, true), ParamGroup::NewModule, "head.weight"};
  std::vector<Parameter> params{p};
  AdamW opt(params, {});
  CHECK_THROWS_AS(opt.step(params), StateError);
}

TEST_CASE("optimizer fits a tiny least squares problem") {
  // Sanity: repeated steps on (w - 3)^2 converge towards 3.
  Parameter w{Tensor({1}, {0.0}, true), ParamGroup::NewModule, "w"};
  std::vector<Parameter> params{w};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr_new_module = 0.05;
  AdamW opt(params, cfg);
  for (int i = 0; i < 400; ++i) {
    zero_grad(params);
    auto d = add_scalar(w.tensor, -3.0);
    sum_all(mul(d, d)).backward();
    opt.step(params);
  }
  CHECK(w.tensor.data()[0] == doctest::Approx(3.0).epsilon(1e-2));
}
