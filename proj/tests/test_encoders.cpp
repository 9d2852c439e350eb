#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dualpath/encoders.hpp"
#include "dualpath/errors.hpp"
#include "dualpath/gradcheck.hpp"
#include "dualpath/ops.hpp"
#include "test_util.hpp"

using namespace dualpath;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

VisualEncoderConfig toy_visual() { return {}; }

std::vector<Parameter> block_params(const TransformerBlock& b) {
  std::vector<Parameter> ps;
  b.collect(ps, "", ParamGroup::Backbone);
  return ps;
}

bool all_trainable(const TransformerBlock& b, bool expected) {
  for (auto& p : block_params(b))
    if (p.trainable() != expected) return false;
  return true;
}

Vocabulary toy_vocab() {
  return Vocabulary::build({"a person wearing high heels", "long hair, short hair", "the attribute is unclear"});
}

}  // namespace

TEST_CASE("visual encoder emits a g*g token grid without a class token") {
  std::mt19937_64 rng(1);
  VisualEncoder enc(toy_visual(), rng);
  auto img = random_tensor({3, 3, 32, 32}, rng);
  auto out = enc.encode(img);
  CHECK(out.tokens.shape() == Shape{3, 16, 32});
  CHECK(out.attention.empty());
}

TEST_CASE("a 21x21 grid gives 441 tokens") {
  VisualEncoderConfig c;
  c.image_size = 42;
  c.patch_size = 2;
  c.width = 8;
  c.depth = 1;
  c.heads = 2;
  std::mt19937_64 rng(2);
  VisualEncoder enc(c, rng);
  CHECK(c.tokens() == 441);
  CHECK(enc.encode(random_tensor({1, 3, 42, 42}, rng)).tokens.shape() == Shape{1, 441, 8});
}

TEST_CASE("identical images give identical token rows and token count ignores content") {
  std::mt19937_64 rng(3);
  VisualEncoder enc(toy_visual(), rng);
  auto one = random_tensor({1, 3, 32, 32}, rng);
  auto pair = concat({one, one, random_tensor({1, 3, 32, 32}, rng, 5.0)}, 0);
  auto t = enc.encode(pair).tokens;
  CHECK(t.dim(1) == 16);
  const std::size_t n = 16 * 32;
  for (std::size_t i = 0; i < n; ++i) CHECK(t[i] == t[n + i]);
}

TEST_CASE("visual encoder rejects bad shapes") {
  std::mt19937_64 rng(4);
  VisualEncoder enc(toy_visual(), rng);
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 1, 32, 32})), DimensionError);
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 3, 16, 16})), DimensionError);
  VisualEncoderConfig bad;
  bad.patch_size = 5;
  CHECK_THROWS_AS(VisualEncoder(bad, rng), ConfigError);
}

TEST_CASE("retained self-attention rows are stochastic") {
  std::mt19937_64 rng(5);
  VisualEncoder enc(toy_visual(), rng);
  auto out = enc.encode(random_tensor({2, 3, 32, 32}, rng), true);
  REQUIRE(out.attention.size() == 4);
  for (auto& w : out.attention) {
    CHECK(w.shape() == Shape{2, 4, 16, 16});
    CHECK(testutil::row_stochastic_error(w) < 1e-9);
  }
}

TEST_CASE("independently seeded encoders differ") {
  std::mt19937_64 r1(10), r2(11), ri(12);
  VisualEncoder a(toy_visual(), r1), b(toy_visual(), r2);
  auto img = random_tensor({1, 3, 32, 32}, ri);
  CHECK(max_abs_diff(a.encode(img).tokens, b.encode(img).tokens) > 1e-3);
}

TEST_CASE("interpolate_positional closed forms") {
  std::mt19937_64 rng(6);
  auto pe = random_tensor({9, 4}, rng);
  CHECK(interpolate_positional(pe, 3).node() == pe.node());

  // 2x2 ramp value(r,c) = r + 10c resampled to 3x3: midpoints are means.
  auto ramp = Tensor::from({0, 10, 1, 11}, {4, 1});
  auto up = interpolate_positional(ramp, 3);
  REQUIRE(up.shape() == Shape{9, 1});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(up[r * 3 + c] == doctest::Approx(0.5 * r + 5.0 * c).epsilon(1e-12));

  auto flat = Tensor::full({4, 2}, 2.5);
  for (std::size_t g : {1u, 3u, 5u, 7u}) {
    auto out = interpolate_positional(flat, g);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(2.5).epsilon(1e-12));
  }
  CHECK_THROWS_AS(interpolate_positional(Tensor::zeros({5, 2}), 2), DimensionError);
}

TEST_CASE("interpolate_positional gradient") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto pe = random_tensor({4, 3}, rng);
    double e = finite_diff_check([&](const Tensor& x) { return testutil::probe(interpolate_positional(x, 5), seed); }, pe);
    CHECK(e < 1e-4);
  }
}

TEST_CASE("positional grid of another size is resampled at encode time") {
  VisualEncoderConfig c;
  c.pos_grid = 3;
  std::mt19937_64 rng(7);
  VisualEncoder enc(c, rng);
  CHECK(enc.encode(random_tensor({1, 3, 32, 32}, rng)).tokens.shape() == Shape{1, 16, 32});
}

TEST_CASE("tokenizer splits words and punctuation") {
  CHECK(Vocabulary::tokenize("Long hair, SHORT  skirt.") ==
        std::vector<std::string>{"long", "hair", ",", "short", "skirt", "."});
  auto v = toy_vocab();
  CHECK(v.tokens()[0] == "<pad>");
  CHECK(v.tokens()[1] == "<unk>");
  auto ids = v.encode("xyzqq unseen hair");
  CHECK(ids[0] == Vocabulary::kUnk);
  CHECK(ids[1] == Vocabulary::kUnk);
  CHECK(ids[2] != Vocabulary::kUnk);
  CHECK_THROWS_AS(Vocabulary({"<pad>", "<unk>", "a", "a"}), FormatError);
  CHECK_THROWS_AS(Vocabulary({"a", "b"}), FormatError);
}

TEST_CASE("text encoder is deterministic, handles unknown words and has the joint width") {
  std::mt19937_64 rng(8);
  TextEncoder enc(TextEncoderConfig{}, toy_vocab(), rng);
  auto a = enc.encode("a person wearing high heels");
  auto b = enc.encode("a person wearing high heels");
  CHECK(a.shape() == Shape{1, 16});
  CHECK(max_abs_diff(a, b) == 0.0);
  auto u = enc.encode("xyzqq unseen");
  for (std::size_t i = 0; i < u.numel(); ++i) CHECK(std::isfinite(u[i]));
  CHECK(max_abs_diff(a, enc.encode("long hair")) > 1e-6);
  CHECK_THROWS_AS(enc.encode("   "), DimensionError);
  auto many = enc.encode_many({"long hair", "a person wearing high heels"});
  CHECK(many.shape() == Shape{2, 16});
  CHECK(max_abs_diff(slice(many, 0, 1, 1), a) < 1e-15);
}

TEST_CASE("prompts longer than the context are truncated") {
  TextEncoderConfig c;
  c.max_len = 3;
  std::mt19937_64 rng(9);
  TextEncoder enc(c, toy_vocab(), rng);
  CHECK(max_abs_diff(enc.encode("a person wearing high heels"), enc.encode("a person wearing")) == 0.0);
}

TEST_CASE("freeze policy sets exactly the last blocks trainable") {
  std::mt19937_64 rng(13);
  VisualEncoderConfig c;
  c.depth = 12;
  c.width = 8;
  c.heads = 2;
  VisualEncoder enc(c, rng);
  apply_freeze_policy(enc, {4, 0});
  for (std::size_t i = 0; i < 12; ++i) CHECK(all_trainable(enc.blocks()[i], i >= 8));

  apply_freeze_policy(enc, {0, 0});
  std::vector<Parameter> all;
  enc.collect(all, "v");
  for (auto& p : all) CHECK_FALSE(p.trainable());

  apply_freeze_policy(enc, {12, 0});
  std::vector<Parameter> ps;
  enc.collect(ps, "v");
  for (auto& p : ps) {
    const bool embedding = p.name.find("block") == std::string::npos;
    CHECK(p.trainable() == !embedding);
    CHECK(p.group == ParamGroup::Backbone);
  }
  CHECK_THROWS_AS(apply_freeze_policy(enc, {13, 0}), ConfigError);

  TextEncoder text(TextEncoderConfig{}, toy_vocab(), rng);
  std::vector<Parameter> tp;
  text.collect(tp, "t");
  for (auto& p : tp) CHECK_FALSE(p.trainable());
  CHECK_THROWS_AS(apply_freeze_policy(text, {0, 3}), ConfigError);
  apply_freeze_policy(text, {0, 1});
  CHECK(all_trainable(text.blocks()[0], false));
  CHECK(all_trainable(text.blocks()[1], true));
}

TEST_CASE("optimizer steps leave frozen blocks bitwise unchanged") {
  std::mt19937_64 rng(14);
  VisualEncoder enc(toy_visual(), rng);
  apply_freeze_policy(enc, {2, 0});
  std::vector<Parameter> ps;
  enc.collect(ps, "v");
  std::vector<std::vector<double>> before;
  for (auto& p : ps) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

  AdamWConfig cfg;
  cfg.lr_backbone = 1e-2;
  AdamW opt(ps, cfg);
  auto img = random_tensor({2, 3, 32, 32}, rng);
  for (int step = 0; step < 3; ++step) {
    zero_grad(ps);
    testutil::probe(enc.encode(img).tokens, 99).backward();
    opt.step(ps);
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    std::vector<double> now(ps[i].tensor.data().begin(), ps[i].tensor.data().end());
    const bool late = ps[i].name.rfind("v.block2", 0) == 0 || ps[i].name.rfind("v.block3", 0) == 0;
    if (late) {
      CHECK_MESSAGE(now != before[i], ps[i].name);
    } else {
      CHECK_MESSAGE(now == before[i], ps[i].name);
    }
  }
}
