#pragma once

#include <random>
#include <string>
#include <vector>

#include "dualpath/optim.hpp"
#include "dualpath/tensor.hpp"

namespace dualpath {

// Building blocks shared by the encoders and the dual-path model. Each module
// owns Tensor handles and appends them to a parameter list via collect().

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const;
};

struct AttentionOutput {
  Tensor output;   // [B, Lq, d]
  Tensor weights;  // [B, heads, Lq, Lk], post-softmax
};

// Scaled dot-product multi-head attention with learned Q/K/V/output maps.
struct MultiHeadAttention {
  std::size_t dim = 0;
  std::size_t heads = 1;
  Linear query, key, value, out;

  MultiHeadAttention() = default;
  // tied_gain > 0 sets key = query = tied_gain * (one random draw).
  MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng, double tied_gain = 0.0);

  // query [B,Lq,d]; key, value [B,Lk,d]. A query batch of 1 broadcasts.
  AttentionOutput operator()(const Tensor& q, const Tensor& k, const Tensor& v) const;
  void collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const;
};

// Pre-norm transformer encoder block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  LayerNorm norm1, norm2;
  MultiHeadAttention attention;
  Linear fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_dim, std::mt19937_64& rng,
                   double tied_gain = 0.0);

  AttentionOutput operator()(const Tensor& x) const;
  void collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const;
  std::vector<Tensor> tensors() const;
};

// Two-layer head: Linear -> GELU -> dropout -> Linear.
struct MlpHead {
  Linear hidden, output;

  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t hidden_dim, std::size_t out, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x, double dropout_p, std::mt19937_64* rng, bool training) const;
  void collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const;
};

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng);

}  // namespace dualpath
