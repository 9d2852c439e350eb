#include <algorithm>
#include "dualpath/nn.hpp"

#include <cmath>

#include "dualpath/errors.hpp"
#include "dualpath/ops.hpp"

namespace dualpath {

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain)
    : weight(random_normal({in, out}, gain / std::sqrt(static_cast<double>(in)), rng)),
      bias(Tensor::zeros({out}, true)) {}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const {
  out.push_back({weight, group, prefix + ".weight"});
  out.push_back({bias, group, prefix + ".bias"});
}

LayerNorm::LayerNorm(std::size_t dim) : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const {
  out.push_back({gain, group, prefix + ".gain"});
  out.push_back({bias, group, prefix + ".bias"});
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim_, std::size_t heads_, std::mt19937_64& rng, double tied_gain)
    : dim(dim_), heads(heads_) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  query = Linear(dim, dim, rng);
  key = Linear(dim, dim, rng);
  if (tied_gain > 0.0) {
    auto q = query.weight.mutable_data();
    for (double& w : q) w *= tied_gain;
    std::copy(q.begin(), q.end(), key.weight.mutable_data().begin());
  }
  value = Linear(dim, dim, rng);
  out = Linear(dim, dim, rng);
}

AttentionOutput MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v) const {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(2) != dim || k.dim(2) != dim || v.dim(2) != dim ||
      k.dim(0) != v.dim(0) || k.dim(1) != v.dim(1)) {
    throw DimensionError("attention inputs " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()) + " do not match width " + std::to_string(dim));
  }
  const std::size_t B = k.dim(0), Lk = k.dim(1), Lq = q.dim(1);
  const std::size_t hd = dim / heads;
  Tensor qq = q;
  if (q.dim(0) != B) {
    if (q.dim(0) != 1) throw DimensionError("attention query batch must be 1 or " + std::to_string(B));
    qq = add(Tensor::zeros({B, Lq, dim}), q);
  }
  auto split = [&](const Tensor& x, std::size_t L) { return permute(reshape(x, {B, L, heads, hd}), {0, 2, 1, 3}); };
  Tensor qh = split(query(qq), Lq);   // [B,h,Lq,hd]
  Tensor kh = split(key(k), Lk);      // [B,h,Lk,hd]
  Tensor vh = split(value(v), Lk);    // [B,h,Lk,hd]
  Tensor scores = scale(matmul(qh, transpose(kh, 2, 3)), 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor weights = softmax(scores, -1);  // [B,h,Lq,Lk]
  Tensor ctx = reshape(permute(matmul(weights, vh), {0, 2, 1, 3}), {B, Lq, dim});
  return {out(ctx), weights};
}

void MultiHeadAttention::collect(std::vector<Parameter>& params, const std::string& prefix, ParamGroup group) const {
  query.collect(params, prefix + ".query", group);
  key.collect(params, prefix + ".key", group);
  value.collect(params, prefix + ".value", group);
  out.collect(params, prefix + ".out", group);
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_dim, std::mt19937_64& rng,
                                   double tied_gain)
    : norm1(dim), norm2(dim), attention(dim, heads, rng, tied_gain), fc1(dim, mlp_dim, rng), fc2(mlp_dim, dim, rng) {}

AttentionOutput TransformerBlock::operator()(const Tensor& x) const {
  Tensor h = norm1(x);
  auto att = attention(h, h, h);
  Tensor y = add(x, att.output);
  Tensor m = fc2(gelu(fc1(norm2(y))));
  return {add(y, m), att.weights};
}

void TransformerBlock::collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const {
  norm1.collect(out, prefix + ".norm1", group);
  attention.collect(out, prefix + ".attn", group);
  norm2.collect(out, prefix + ".norm2", group);
  fc1.collect(out, prefix + ".fc1", group);
  fc2.collect(out, prefix + ".fc2", group);
}

std::vector<Tensor> TransformerBlock::tensors() const {
  std::vector<Parameter> ps;
  collect(ps, "", ParamGroup::Backbone);
  std::vector<Tensor> out;
  for (auto& p : ps) out.push_back(p.tensor);
  return out;
}

MlpHead::MlpHead(std::size_t in, std::size_t hidden_dim, std::size_t out, std::mt19937_64& rng)
    : hidden(in, hidden_dim, rng), output(hidden_dim, out, rng) {}

Tensor MlpHead::operator()(const Tensor& x, double dropout_p, std::mt19937_64* rng, bool training) const {
  Tensor h = gelu(hidden(x));
  if (training && dropout_p > 0.0) {
    if (!rng) throw StateError("dropout requested without an RNG");
    h = dropout(h, dropout_p, *rng, true);
  }
  return output(h);
}

void MlpHead::collect(std::vector<Parameter>& out, const std::string& prefix, ParamGroup group) const {
  hidden.collect(out, prefix + ".hidden", group);
  output.collect(out, prefix + ".output", group);
}

}  // namespace dualpath
