#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "dualpath/errors.hpp"
#include "dualpath/gradcheck.hpp"
#include "dualpath/ops.hpp"

using namespace dualpath;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights turns any tensor into a scalar
// whose gradient exercises every output element.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum_all(mul(y, random_tensor(y.shape(), rng)));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("matmul examples") {
  auto a = Tensor::from({1, 2, 3, 4}, {2, 2});
  auto eye = Tensor::from({1, 0, 0, 1}, {2, 2});
  auto c = matmul(a, eye);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3, 4});

  auto r = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({3, 4}, {2, 1}));
  CHECK(r.item() == 11.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient check, random 3x4 . 4x2") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    CHECK(finite_diff_check([&](const Tensor& x) { return probe(matmul(x, b), seed); }, a) < kTol);
    CHECK(finite_diff_check([&](const Tensor& x) { return probe(matmul(a, x), seed); }, b) < kTol);
  }
}

TEST_CASE("batched matmul gradients for shared and batched right operands") {
  std::mt19937_64 rng(3);
  auto a = random_tensor({2, 3, 4, 5}, rng);
  auto b = random_tensor({2, 3, 5, 2}, rng);
  auto w = random_tensor({5, 3}, rng);
  CHECK(finite_diff_check([&](const Tensor& x) { return probe(matmul(x, b), 1); }, a) < kTol);
  CHECK(finite_diff_check([&](const Tensor& x) { return probe(matmul(a, x), 2); }, b) < kTol);
  CHECK(finite_diff_check([&](const Tensor& x) { return probe(matmul(a, x), 3); }, w) < kTol);
  auto left = random_tensor({4, 5}, rng);
  CHECK(finite_diff_check([&](const Tensor& x) { return probe(matmul(x, b), 4); }, left) < kTol);
}

TEST_CASE("softmax examples") {
  auto s = softmax(Tensor::from({0, 0}, {2}), 0);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  auto t = softmax(Tensor::from({std::log(2.0), 0.0}, {2}), 0);
  CHECK(std::abs(t[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(t[1] - 1.0 / 3.0) < 1e-15);

  auto big = softmax(Tensor::from({1000, 0}, {2}), 0);
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
}

TEST_CASE("softmax rows sum to one along any axis") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({3, 4, 5}, rng, 10.0);
    for (int axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      auto back = sum(y, axis);
      for (double v : back.data()) CHECK(std::abs(v - 1.0) < 1e-12);
      for (double v : y.data()) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("layer_norm examples") {
  auto ones = Tensor::full({3}, 1.0);
  auto zeros = Tensor::zeros({3});
  auto c = layer_norm(Tensor::from({4, 4, 4}, {3}), ones, zeros);
  for (double v : c.data()) CHECK(v == 0.0);

  auto y = layer_norm(Tensor::from({1, 2, 3}, {3}), ones, zeros, 0.0);
  CHECK(std::abs(y[0] + std::sqrt(1.5)) < 1e-12);
  CHECK(std::abs(y[1]) < 1e-12);
  CHECK(std::abs(y[2] - std::sqrt(1.5)) < 1e-12);

  CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}), Tensor::full({4}, 1.0), Tensor::zeros({4})), DimensionError);
}

TEST_CASE("layer_norm output is standardized per row") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({6, 8}, rng, 3.0);
  auto y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 8; ++i) m += y[r * 8 + i];
    m /= 8;
    for (std::size_t i = 0; i < 8; ++i) v += (y[r * 8 + i] - m) * (y[r * 8 + i] - m);
    v /= 8;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-9);
  }
}

TEST_CASE("cross_entropy_ignore examples") {
  std::vector<int> one{1};
  auto l = cross_entropy_ignore(Tensor::from({0, 0, 0}, {1, 3}), one);
  CHECK(std::abs(l.item() - std::log(3.0)) < 1e-12);

  std::vector<int> zero{0};
  auto l2 = cross_entropy_ignore(Tensor::from({10, 0, 0}, {1, 3}), zero);
  CHECK(std::abs(l2.item() - std::log1p(2.0 * std::exp(-10.0))) < 1e-15);
  CHECK(l2.item() == doctest::Approx(9.08e-5).epsilon(1e-3));

  auto logits = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  logits.set_requires_grad(true);
  std::vector<int> ignored{kIgnoreIndex, kIgnoreIndex};
  auto l3 = cross_entropy_ignore(logits, ignored);
  CHECK(l3.item() == 0.0);
  l3.backward();
  for (double g : logits.grad()) CHECK(g == 0.0);

  std::vector<int> bad{3};
  CHECK_THROWS_AS(cross_entropy_ignore(Tensor::zeros({1, 3}), bad), LabelError);
  std::vector<int> neg{-1};
  CHECK_THROWS_AS(cross_entropy_ignore(Tensor::zeros({1, 3}), neg), LabelError);
}

TEST_CASE("cross_entropy_ignore averages only labelled rows") {
  auto logits = Tensor::from({0, 0, 0, 5, 1, 2}, {2, 3});
  std::vector<int> labels{1, kIgnoreIndex};
  CHECK(std::abs(cross_entropy_ignore(logits, labels).item() - std::log(3.0)) < 1e-12);
}

TEST_CASE("finite_diff_check examples") {
  auto x = Tensor::from({1, 2}, {2});
  double err = finite_diff_check([](const Tensor& t) { return sum_all(mul(t, t)); }, x);
  CHECK(err < 1e-7);
  x.set_requires_grad(true);
  sum_all(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));

  auto c = Tensor::from({1, 2}, {2});
  CHECK(finite_diff_check([](const Tensor&) { return Tensor::scalar(3.0); }, c) == 0.0);
}

TEST_CASE("every differentiable primitive passes gradient checks over 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 100);
    auto x = random_tensor({2, 3, 4}, rng);
    auto y = random_tensor({2, 3, 4}, rng);
    auto row = random_tensor({4}, rng);
    auto col = random_tensor({2, 1, 4}, rng);
    auto gain = random_tensor({4}, rng);
    auto bias = random_tensor({4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto wb = random_tensor({5}, rng);
    auto check = [&](auto f, Tensor& at) {
      double e = finite_diff_check([&](const Tensor&) { return probe(f(), seed); }, at);
      CHECK(e < kTol);
    };
    check([&] { return add(x, y); }, x);
    check([&] { return add(x, row); }, row);
    check([&] { return sub(x, col); }, col);
    check([&] { return mul(x, y); }, y);
    check([&] { return mul(x, col); }, col);
    check([&] { return mul(x, x); }, x);
    check([&] { return scale(x, -1.7); }, x);
    check([&] { return add_scalar(x, 0.3); }, x);
    check([&] { return sigmoid(x); }, x);
    check([&] { return gelu(x); }, x);
    check([&] { return relu(add_scalar(x, 0.05)); }, x);
    check([&] { return softmax(x, 1); }, x);
    check([&] { return softmax(x, -1); }, x);
    check([&] { return layer_norm(x, gain, bias); }, x);
    check([&] { return layer_norm(x, gain, bias); }, gain);
    check([&] { return layer_norm(x, gain, bias); }, bias);
    check([&] { return linear(x, w, wb); }, x);
    check([&] { return linear(x, w, wb); }, w);
    check([&] { return linear(x, w, wb); }, wb);
    check([&] { return sum(x, 1, true); }, x);
    check([&] { return mean(x, 0); }, x);
    check([&] { return max(x, 2, true); }, x);
    check([&] { return mean_all(x); }, x);
    check([&] { return reshape(x, {6, 4}); }, x);
    check([&] { return permute(x, {2, 0, 1}); }, x);
    check([&] { return transpose(x, 0, 2); }, x);
    check([&] { return concat({x, y}, 1); }, y);
    check([&] { return slice(x, 2, 1, 2); }, x);
  }
}

TEST_CASE("conv2d 7x7 padding 3 gradients and shape") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 7);
    auto x = random_tensor({2, 2, 4, 4}, rng);
    auto w = random_tensor({1, 2, 7, 7}, rng, 0.3);
    auto b = random_tensor({1}, rng);
    auto y = conv2d(x, w, b, 3);
    CHECK(y.shape() == Shape{2, 1, 4, 4});
    CHECK(finite_diff_check([&](const Tensor&) { return probe(conv2d(x, w, b, 3), seed); }, x) < kTol);
    CHECK(finite_diff_check([&](const Tensor&) { return probe(conv2d(x, w, b, 3), seed); }, w) < kTol);
    CHECK(finite_diff_check([&](const Tensor&) { return probe(conv2d(x, w, b, 3), seed); }, b) < kTol);
  }
}

TEST_CASE("conv2d matches a direct hand computation") {
  // 1x1x3x3 input, 3x3 kernel of ones, padding 1: centre sees all nine values.
  auto x = Tensor::from({1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 1, 3, 3});
  auto w = Tensor::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, Tensor{}, 1);
  CHECK(y[4] == 45.0);
  CHECK(y[0] == 1 + 2 + 4 + 5);
}

TEST_CASE("dropout is seeded, scaled and gradient-consistent") {
  std::mt19937_64 r1(9), r2(9);
  auto x = Tensor::full({1000}, 1.0);
  auto a = dropout(x, 0.25, r1, true);
  auto b = dropout(x, 0.25, r2, true);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(a[i] == b[i]);
    if (a[i] != 0.0) {
      ++kept;
      CHECK(a[i] == doctest::Approx(1.0 / 0.75));
    }
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  std::mt19937_64 r3(1);
  auto same = dropout(x, 0.25, r3, false);
  CHECK(same.node() == x.node());

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto t = random_tensor({3, 5}, rng);
    double e = finite_diff_check(
        [&](const Tensor& v) {
          std::mt19937_64 local(seed);
          return probe(dropout(v, 0.4, local, true), seed);
        },
        t);
    CHECK(e < kTol);
  }
}

TEST_CASE("embedding gathers rows and scatters gradients") {
  auto table = Tensor::from({0, 1, 10, 11, 20, 21}, {3, 2});
  std::vector<int> ids{2, 0, 2};
  auto e = embedding(table, ids);
  CHECK(e.shape() == Shape{3, 2});
  CHECK(e[0] == 20);
  CHECK(e[3] == 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CHECK(finite_diff_check([&](const Tensor& t) { return probe(embedding(t, ids), seed); }, table) < kTol);
  }
  std::vector<int> bad{3};
  CHECK_THROWS_AS(embedding(table, bad), DimensionError);
}

TEST_CASE("cross entropy gradient check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto logits = random_tensor({4, 3}, rng, 2.0);
    std::vector<int> labels{0, kIgnoreIndex, 2, 1};
    CHECK(finite_diff_check([&](const Tensor& t) { return cross_entropy_ignore(t, labels); }, logits) < kTol);
  }
}

TEST_CASE("broadcast errors and non-finite detection") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, {1.0}), DimensionError);
  CHECK_THROWS_AS(scale(Tensor::from({1e308}, {1}), 10.0), NumericError);
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 r1(42), r2(42);
  auto a = random_tensor({3, 4}, r1), b = random_tensor({3, 4}, r2);
  auto ya = softmax(matmul(a, transpose(a, 0, 1)), 1);
  auto yb = softmax(matmul(b, transpose(b, 0, 1)), 1);
  for (std::size_t i = 0; i < ya.numel(); ++i) CHECK(ya[i] == yb[i]);
}
