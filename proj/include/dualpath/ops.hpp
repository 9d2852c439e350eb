#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dualpath/tensor.hpp"

namespace dualpath {

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact (erf) formulation.
Tensor gelu(const Tensor& x);

// [..,m,k] x [..,k,n]. Batch extents must match, or either operand is 2-D.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..,in] * weight[in,out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
// Subgradient routed to the first maximal element.
Tensor max(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

// Stride-1 cross-correlation: x[B,C,H,W], weight[O,C,k,k], bias[O], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

// Row gather: table[V,e], ids -> [len(ids), e].
Tensor embedding(const Tensor& table, std::span<const int> ids);

inline constexpr int kIgnoreIndex = -100;

// Mean negative log-likelihood over rows whose label != ignore_index.
// An all-ignored batch yields 0 with zero gradient.
Tensor cross_entropy_ignore(const Tensor& logits, std::span<const int> labels,
                            int ignore_index = kIgnoreIndex);

}  // namespace dualpath
