#include "dualpath/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dualpath/errors.hpp"

namespace dualpath {

namespace {

std::size_t norm_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// View of a tensor as [outer, n, inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::vector<double>& grad_of(const Tensor& t) { return t.node()->grad_buffer(); }

// ---- broadcasting -------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // element strides per output axis, 0 if broadcast
  enum class Kind { Same, BSuffix, ASuffix, General } kind = Kind::General;
  std::size_t inner = 0;  // suffix length for the suffix kinds
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.kind = Broadcast::Kind::Same;
    return p;
  }
  if (is_suffix(b, a)) {
    p.out = a;
    p.kind = Broadcast::Kind::BSuffix;
    p.inner = shape_numel(b);
    return p;
  }
  if (is_suffix(a, b)) {
    p.out = b;
    p.kind = Broadcast::Kind::ASuffix;
    p.inner = shape_numel(a);
    return p;
  }
  std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ea = 1, eb = 1, ia = 0, ib = 0;
    bool has_a = i + a.size() >= r, has_b = i + b.size() >= r;
    if (has_a) {
      ia = i + a.size() - r;
      ea = a[ia];
    }
    if (has_b) {
      ib = i + b.size() - r;
      eb = b[ib];
    }
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    p.out[i] = std::max(ea, eb);
    if (has_a && ea != 1) p.stride_a[i] = sa[ia];
    if (has_b && eb != 1) p.stride_b[i] = sb[ib];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t total = shape_numel(p.out);
  switch (p.kind) {
    case Broadcast::Kind::Same:
      for (std::size_t i = 0; i < total; ++i) f(i, i, i);
      return;
    case Broadcast::Kind::BSuffix:
      for (std::size_t i = 0; i < total; ++i) f(i, i, i % p.inner);
      return;
    case Broadcast::Kind::ASuffix:
      for (std::size_t i = 0; i < total; ++i) f(i, i % p.inner, i);
      return;
    case Broadcast::Kind::General:
      break;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast(a.shape(), b.shape(), "add");
  std::vector<double> out(shape_numel(plan.out));
  auto da = a.data(), db = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = da[ia] + db[ib]; });
  return make_result(plan.out, std::move(out), {&a, &b}, [a, b, plan](const detail::Node& n) {
    const auto& g = n.grad;
    if (a.requires_grad()) {
      auto& ga = grad_of(a);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += g[o]; });
    }
    if (b.requires_grad()) {
      auto& gb = grad_of(b);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t ib) { gb[ib] += g[o]; });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast(a.shape(), b.shape(), "sub");
  std::vector<double> out(shape_numel(plan.out));
  auto da = a.data(), db = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = da[ia] - db[ib]; });
  return make_result(plan.out, std::move(out), {&a, &b}, [a, b, plan](const detail::Node& n) {
    const auto& g = n.grad;
    if (a.requires_grad()) {
      auto& ga = grad_of(a);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += g[o]; });
    }
    if (b.requires_grad()) {
      auto& gb = grad_of(b);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t ib) { gb[ib] -= g[o]; });
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast(a.shape(), b.shape(), "mul");
  std::vector<double> out(shape_numel(plan.out));
  auto da = a.data(), db = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = da[ia] * db[ib]; });
  return make_result(plan.out, std::move(out), {&a, &b}, [a, b, plan](const detail::Node& n) {
    const auto& g = n.grad;
    auto da = a.data(), db = b.data();
    if (a.requires_grad()) {
      auto& ga = grad_of(a);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { ga[ia] += g[o] * db[ib]; });
    }
    if (b.requires_grad()) {
      auto& gb = grad_of(b);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { gb[ib] += g[o] * da[ia]; });
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
  return make_result(x.shape(), std::move(out), {&x}, [x, factor](const detail::Node& n) {
    auto& gx = grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] + value;
  return make_result(x.shape(), std::move(out), {&x}, [x](const detail::Node& n) {
    auto& gx = grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = dx[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_result(x.shape(), std::move(out), {&x}, [x](const detail::Node& n) {
    auto& gx = grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      double y = n.data[i];
      gx[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor relu(const Tensor& x) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > 0 ? dx[i] : 0.0;
  return make_result(x.shape(), std::move(out), {&x}, [x](const detail::Node& n) {
    auto& gx = grad_of(x);
    auto dx = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (dx[i] > 0) gx[i] += n.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * dx[i] * (1.0 + std::erf(dx[i] * inv_sqrt2));
  }
  return make_result(x.shape(), std::move(out), {&x}, [x](const detail::Node& n) {
    auto& gx = grad_of(x);
    auto dx = x.data();
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      double v = dx[i];
      double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---- matmul ---------------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
// b is transposed once so the inner loop is a contiguous axpy.
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double gv = gi[j];
      const double* bj = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) ci[p] += gv * bj[p];
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  Shape batch_a(sa.begin(), sa.end() - 2), batch_b(sb.begin(), sb.end() - 2);
  if (k != kb) {
    throw DimensionError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
  }
  Shape batch;
  if (batch_a == batch_b || batch_b.empty()) {
    batch = batch_a;
  } else if (batch_a.empty()) {
    batch = batch_b;
  } else {
    throw DimensionError("matmul batch extents incompatible: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t nb = shape_numel(batch);
  const bool a_batched = !batch_a.empty(), b_batched = !batch_b.empty();
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(nb * m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (!b_batched && a_batched) {
    gemm_nn(pa, pb, out.data(), nb * m, k, n);
  } else {
    for (std::size_t i = 0; i < nb; ++i) {
      gemm_nn(pa + (a_batched ? i * m * k : 0), pb + (b_batched ? i * k * n : 0), out.data() + i * m * n, m, k, n);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&a, &b},
                     [a, b, nb, m, k, n, a_batched, b_batched](const detail::Node& node) {
                       const double* g = node.grad.data();
                       const double* pa = a.data().data();
                       const double* pb = b.data().data();
                       if (a.requires_grad()) {
                         double* ga = grad_of(a).data();
                         if (!b_batched && a_batched) {
                           gemm_nt(g, pb, ga, nb * m, k, n);
                         } else {
                           for (std::size_t i = 0; i < nb; ++i) {
                             gemm_nt(g + i * m * n, pb + (b_batched ? i * k * n : 0), ga + (a_batched ? i * m * k : 0), m, k, n);
                           }
                         }
                       }
                       if (b.requires_grad()) {
                         double* gb = grad_of(b).data();
                         if (!b_batched && a_batched) {
                           gemm_tn(pa, g, gb, nb * m, k, n);
                         } else {
                           for (std::size_t i = 0; i < nb; ++i) {
                             gemm_tn(pa + (a_batched ? i * m * k : 0), g + i * m * n, gb + (b_batched ? i * k * n : 0), m, k, n);
                           }
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.back() != sw[0]) {
    throw DimensionError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t in = sw[0], outd = sw[1];
  const std::size_t rows = x.numel() / in;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != outd)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(sw));
  }
  Shape out_shape = sx;
  out_shape.back() = outd;
  std::vector<double> out(rows * outd, 0.0);
  if (has_bias) {
    auto db = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(db.begin(), db.end(), out.begin() + static_cast<std::ptrdiff_t>(r * outd));
  }
  gemm_nn(x.data().data(), weight.data().data(), out.data(), rows, in, outd);
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), inputs,
                     [x, weight, bias, rows, in, outd, has_bias](const detail::Node& node) {
                       const double* g = node.grad.data();
                       if (x.requires_grad()) gemm_nt(g, weight.data().data(), grad_of(x).data(), rows, in, outd);
                       if (weight.requires_grad()) gemm_tn(x.data().data(), g, grad_of(weight).data(), rows, in, outd);
                       if (has_bias && bias.requires_grad()) {
                         auto& gb = grad_of(bias);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
                         }
                       }
                     });
}

// ---- normalization --------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = dx[base];
      for (std::size_t i = 1; i < sp.n; ++i) mx = std::max(mx, dx[base + i * sp.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        double e = std::exp(dx[base + i * sp.inner] - mx);
        out[base + i * sp.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {&x}, [x, sp](const detail::Node& node) {
    auto& gx = grad_of(x);
    const auto& y = node.data;
    const auto& g = node.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) dot += g[base + i * sp.inner] * y[base + i * sp.inner];
        for (std::size_t i = 0; i < sp.n; ++i) {
          const std::size_t j = base + i * sp.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (d == 0) throw DimensionError("layer_norm over zero-extent axis");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto dx = x.data(), dg = gain.data(), db = bias.data();
  std::vector<double> out(dx.size());
  std::vector<double> xhat(dx.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = dx.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      double h = (row[i] - mu) * is;
      xhat[r * d + i] = h;
      out[r * d + i] = h * dg[i] + db[i];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                     [x, gain, bias, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node& node) {
                       const auto& g = node.grad;
                       auto dg = gain.data();
                       if (gain.requires_grad()) {
                         auto& gg = grad_of(gain);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
                       }
                       if (bias.requires_grad()) {
                         auto& gb = grad_of(bias);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
                       }
                       if (x.requires_grad()) {
                         auto& gx = grad_of(x);
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double mean_dh = 0.0, mean_dh_h = 0.0;
                           for (std::size_t i = 0; i < d; ++i) {
                             double dh = g[r * d + i] * dg[i];
                             mean_dh += dh;
                             mean_dh_h += dh * xhat[r * d + i];
                           }
                           mean_dh *= inv_d;
                           mean_dh_h *= inv_d;
                           for (std::size_t i = 0; i < d; ++i) {
                             double dh = g[r * d + i] * dg[i];
                             gx[r * d + i] += inv_std[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h);
                           }
                         }
                       }
                     });
}

// ---- reductions -----------------------------------------------------------

namespace {

Shape reduced_shape(const Shape& s, std::size_t ax, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[ax] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

Tensor reduce_sum(const Tensor& x, int axis, bool keepdim, double factor) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  auto dx = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.n; ++i)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += dx[(o * sp.n + i) * sp.inner + in];
  if (factor != 1.0) {
    for (auto& v : out) v *= factor;
  }
  return make_result(reduced_shape(x.shape(), ax, keepdim), std::move(out), {&x},
                     [x, sp, factor](const detail::Node& node) {
                       auto& gx = grad_of(x);
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t i = 0; i < sp.n; ++i)
                           for (std::size_t in = 0; in < sp.inner; ++in)
                             gx[(o * sp.n + i) * sp.inner + in] += node.grad[o * sp.inner + in] * factor;
                     });
}

}  // namespace

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce_sum(x, axis, keepdim, 1.0); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t n = x.dim(axis);
  return reduce_sum(x, axis, keepdim, 1.0 / static_cast<double>(n));
}

Tensor max(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  auto dx = x.data();
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t best = o * sp.n * sp.inner + in;
      for (std::size_t i = 1; i < sp.n; ++i) {
        std::size_t j = (o * sp.n + i) * sp.inner + in;
        if (dx[j] > dx[best]) best = j;
      }
      out[o * sp.inner + in] = dx[best];
      arg[o * sp.inner + in] = best;
    }
  }
  return make_result(reduced_shape(x.shape(), ax, keepdim), std::move(out), {&x},
                     [x, arg = std::move(arg)](const detail::Node& node) {
                       auto& gx = grad_of(x);
                       for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += node.grad[i];
                     });
}

Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {&x}, [x](const detail::Node& node) {
    auto& gx = grad_of(x);
    for (auto& g : gx) g += node.grad[0];
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {&x}, [x](const detail::Node& node) {
    auto& gx = grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw DimensionError("permute order rank mismatch for " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw DimensionError("permute order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(r);
  auto in_strides = contiguous_strides(s);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  const std::size_t total = x.numel();
  // src_index[o] maps each output element to its source element.
  std::vector<std::size_t> src_index(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    src_index[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  auto dx = x.data();
  std::vector<double> out(total);
  for (std::size_t o = 0; o < total; ++o) out[o] = dx[src_index[o]];
  return make_result(std::move(out_shape), std::move(out), {&x},
                     [x, src_index = std::move(src_index)](const detail::Node& node) {
                       auto& gx = grad_of(x);
                       for (std::size_t o = 0; o < src_index.size(); ++o) gx[src_index[o]] += node.grad[o];
                     });
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const std::size_t a = norm_axis(axis_a, x.rank()), b = norm_axis(axis_b, x.rank());
  std::vector<std::size_t> order(x.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::swap(order[a], order[b]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& s0 = parts.front().shape();
  const std::size_t ax = norm_axis(axis, s0.size());
  std::size_t total_n = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat rank mismatch: " + shape_str(s0) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) {
        throw DimensionError("concat extent mismatch: " + shape_str(s0) + " vs " + shape_str(s));
      }
    }
    total_n += s[ax];
  }
  Shape out_shape = s0;
  out_shape[ax] = total_n;
  const auto sp = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.shape()[ax];
    auto dp = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(dp.begin() + static_cast<std::ptrdiff_t>(o * n * sp.inner), n * sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * sp.n + offset) * sp.inner));
    }
    offset += n;
  }
  return make_result(std::move(out_shape), std::move(out), parts, [parts, ax, sp](const detail::Node& node) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.shape()[ax];
      if (p.requires_grad()) {
        auto& gp = grad_of(p);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < n * sp.inner; ++i)
            gp[o * n * sp.inner + i] += node.grad[(o * sp.n + offset) * sp.inner + i];
      }
      offset += n;
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  if (length == 0 || start + length > sp.n) {
    throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") outside axis of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  auto dx = x.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(dx.begin() + static_cast<std::ptrdiff_t>((o * sp.n + start) * sp.inner), length * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  }
  return make_result(std::move(out_shape), std::move(out), {&x}, [x, sp, start, length](const detail::Node& node) {
    auto& gx = grad_of(x);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < length * sp.inner; ++i)
        gx[(o * sp.n + start) * sp.inner + i] += node.grad[o * length * sp.inner + i];
  });
}

// ---- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3]) {
    throw DimensionError("conv2d: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t B = sx[0], C = sx[1], H = sx[2], W = sx[3];
  const std::size_t O = sw[0], K = sw[2];
  if (H + 2 * padding < K || W + 2 * padding < K) throw DimensionError("conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != O) throw DimensionError("conv2d: bias does not match output channels");
  const std::size_t Ho = H + 2 * padding - K + 1, Wo = W + 2 * padding - K + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  auto dx = x.data(), dw = weight.data();
  std::vector<double> out(B * O * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = has_bias ? bias.data()[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < K; ++u) {
              auto y = static_cast<std::ptrdiff_t>(i + u) - pad;
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < K; ++v) {
                auto xx = static_cast<std::ptrdiff_t>(j + v) - pad;
                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += dw[((o * C + c) * K + u) * K + v] *
                       dx[((b * C + c) * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(xx)];
              }
            }
          out[((b * O + o) * Ho + i) * Wo + j] = acc;
        }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({B, O, Ho, Wo}, std::move(out), inputs,
                     [x, weight, bias, has_bias, B, C, H, W, O, K, Ho, Wo, pad](const detail::Node& node) {
                       const auto& g = node.grad;
                       auto dx = x.data(), dw = weight.data();
                       std::vector<double>* gx = x.requires_grad() ? &grad_of(x) : nullptr;
                       std::vector<double>* gw = weight.requires_grad() ? &grad_of(weight) : nullptr;
                       std::vector<double>* gb = has_bias && bias.requires_grad() ? &grad_of(bias) : nullptr;
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t o = 0; o < O; ++o)
                           for (std::size_t i = 0; i < Ho; ++i)
                             for (std::size_t j = 0; j < Wo; ++j) {
                               const double go = g[((b * O + o) * Ho + i) * Wo + j];
                               if (gb) (*gb)[o] += go;
                               for (std::size_t c = 0; c < C; ++c)
                                 for (std::size_t u = 0; u < K; ++u) {
                                   auto y = static_cast<std::ptrdiff_t>(i + u) - pad;
                                   if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
                                   for (std::size_t v = 0; v < K; ++v) {
                                     auto xx = static_cast<std::ptrdiff_t>(j + v) - pad;
                                     if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                                     const std::size_t wi = ((o * C + c) * K + u) * K + v;
                                     const std::size_t xi = ((b * C + c) * H + static_cast<std::size_t>(y)) * W +
                                                            static_cast<std::size_t>(xx);
                                     if (gw) (*gw)[wi] += go * dx[xi];
                                     if (gx) (*gx)[xi] += go * dw[wi];
                                   }
                                 }
                             }
                     });
}

// ---- stochastic / lookup --------------------------------------------------

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? s : 0.0;
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * mask[i];
  return make_result(x.shape(), std::move(out), {&x}, [x, mask = std::move(mask)](const detail::Node& node) {
    auto& gx = grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * mask[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("embedding lookup with no ids");
  const std::size_t V = table.dim(0), e = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  for (int id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw DimensionError("embedding id " + std::to_string(id) + " outside table of " + std::to_string(V));
    }
  }
  auto dt = table.data();
  std::vector<double> out(rows.size() * e);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(dt.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rows[r]) * e), e,
                out.begin() + static_cast<std::ptrdiff_t>(r * e));
  }
  return make_result({rows.size(), e}, std::move(out), {&table}, [table, rows, e](const detail::Node& node) {
    auto& gt = grad_of(table);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < e; ++j) gt[static_cast<std::size_t>(rows[r]) * e + j] += node.grad[r * e + j];
  });
}

// ---- loss -----------------------------------------------------------------

Tensor cross_entropy_ignore(const Tensor& logits, std::span<const int> labels, int ignore_index) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [B,K] logits, got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(B) + " rows");
  }
  std::size_t count = 0;
  for (int y : labels) {
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw LabelError("label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    }
    ++count;
  }
  auto dl = logits.data();
  std::vector<double> probs(B * K, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] == ignore_index) continue;
    const double* row = dl.data() + b * K;
    double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[b]];
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(row[k] - lse);
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result({1}, {loss}, {&logits},
                     [logits, ys = std::move(ys), probs = std::move(probs), count, K, ignore_index](const detail::Node& node) {
                       auto& gl = grad_of(logits);
                       if (count == 0) return;
                       const double s = node.grad[0] / static_cast<double>(count);
                       for (std::size_t b = 0; b < ys.size(); ++b) {
                         if (ys[b] == ignore_index) continue;
                         for (std::size_t k = 0; k < K; ++k) gl[b * K + k] += s * probs[b * K + k];
                         gl[b * K + static_cast<std::size_t>(ys[b])] -= s;
                       }
                     });
}

}  // namespace dualpath
