/**
 * Copyright 2026 The Sevcl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors of rank
// <= 3 in 64-bit floating point.
//
// A Graph is a tape: every op whose output depends on a tensor that requires a
// gradient is appended in execution order, and backward() replays the tape in
// reverse. Every reduction runs in a fixed sequential order so results are
// bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sevcl/errors.hpp"

namespace sevcl::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string name;
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Shared handle to a tensor node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape.empty() || shape.size() > 3) {
      fail(ErrorKind::kShapeMismatch, "tensor rank must be 1..3, got " + shape_str(shape));
    }
    if (values.size() != ad::numel(shape)) {
      fail(ErrorKind::kShapeMismatch, "data length " + std::to_string(values.size()) +
                                          " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = ad::numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double item() const { return node_->value.at(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros when nothing has flowed in yet.
  std::span<const double> grad() const { return node_->grad_buffer(); }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const std::string& name() const { return node_->name; }
  Tensor& named(std::string name) {
    node_->name = std::move(name);
    return *this;
  }

  /// Independent copy of values (no gradient, no history).
  Tensor clone() const {
    Tensor t = from(shape(), node_->value, requires_grad());
    t.node_->name = node_->name;
    return t;
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Kernels. All reductions iterate in ascending index order.

namespace kernels {

/// C (m x n) (+)= op(A) (m x k) * op(B) (k x n), where op transposes when the
/// flag is set. Each output element accumulates over k in ascending order.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate) {
  // op(A)(i, p) lives at a[i * sa_i + p * sa_p]; no copy is needed for A.
  const std::size_t sa_i = trans_a ? 1 : k;
  const std::size_t sa_p = trans_a ? m : 1;
  if (trans_b) {
    // b is stored n x k; the tiles below want rows of op(B) contiguous.
    thread_local std::vector<double> b_buf;
    if (b_buf.size() < k * n) b_buf.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) b_buf[p * n + j] = b[j * k + p];
    b = b_buf.data();
  }
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  // Register tiles of kRows x (2 * kLanes); within a tile each element still
  // accumulates over p in ascending order, matching the plain loop below.
#if defined(__AVX512F__)
  constexpr std::size_t kLanes = 8;
  constexpr std::size_t kRows = 8;
#else
  constexpr std::size_t kLanes = 4;
  constexpr std::size_t kRows = 4;
#endif
  using vec = double __attribute__((vector_size(kLanes * sizeof(double))));
  constexpr std::size_t kCols = 2 * kLanes;
  const std::size_t m_tiles = m - m % kRows;
  const std::size_t n_tiles = n - n % kCols;
  for (std::size_t i = 0; i < m_tiles; i += kRows) {
    for (std::size_t j = 0; j < n_tiles; j += kCols) {
      vec acc[kRows][2];
      for (std::size_t r = 0; r < kRows; ++r) {
        std::memcpy(&acc[r][0], c + (i + r) * n + j, sizeof(vec));
        std::memcpy(&acc[r][1], c + (i + r) * n + j + kLanes, sizeof(vec));
      }
      const double* ai = a + i * sa_i;
      for (std::size_t p = 0; p < k; ++p) {
        vec b0;
        vec b1;
        std::memcpy(&b0, b + p * n + j, sizeof(vec));
        std::memcpy(&b1, b + p * n + j + kLanes, sizeof(vec));
        const double* ap = ai + p * sa_p;
        for (std::size_t r = 0; r < kRows; ++r) {
          const double av = ap[r * sa_i];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        std::memcpy(c + (i + r) * n + j, &acc[r][0], sizeof(vec));
        std::memcpy(c + (i + r) * n + j + kLanes, &acc[r][1], sizeof(vec));
      }
    }
  }
  auto plain = [&](std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* __restrict crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * sa_i + p * sa_p];
        const double* __restrict brow = b + p * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  };
  plain(0, m_tiles, n_tiles, n);  // right edge
  plain(m_tiles, m, 0, n);        // bottom edge
}

/// Dot product with four interleaved partial sums.
inline double dot(const double* x, const double* y, std::size_t n) {
  using v4d = double __attribute__((vector_size(32)));
  v4d acc{0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    v4d xv;
    v4d yv;
    std::memcpy(&xv, x + i, sizeof(v4d));
    std::memcpy(&yv, y + i, sizeof(v4d));
    acc += xv * yv;
  }
  double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

inline double gelu(double x) { return x * (0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0))); }

}  // namespace kernels

// ---------------------------------------------------------------------------

class Graph {
 public:
  Graph() = default;
  /// A graph built with `record_ops == false` only computes values.
  explicit Graph(bool record_ops) : recording_(record_ops) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool consumed() const { return consumed_; }
  std::size_t size() const { return tape_.size(); }

  /// op(A) * op(B). A may carry leading dims (rank 3 is flattened to rows);
  /// B must be a matrix.
  Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
    if (b.rank() != 2 || (trans_a && a.rank() != 2)) {
      fail(ErrorKind::kShapeMismatch, "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t a_rows = a.numel() / a.shape().back();
    const std::size_t a_cols = a.shape().back();
    const std::size_t m = trans_a ? a_cols : a_rows;
    const std::size_t k = trans_a ? a_rows : a_cols;
    const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
    const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
    if (k != kb) {
      fail(ErrorKind::kShapeMismatch, "matmul " + shape_str(a.shape()) + (trans_a ? "^T" : "") +
                                          " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
    }
    Shape out_shape = trans_a ? Shape{m, n} : a.shape();
    out_shape.back() = n;
    Tensor out = Tensor::zeros(out_shape);
    kernels::gemm(trans_a, trans_b, m, n, k, a.data().data(), b.data().data(),
                  out.mutable_data().data(), false);
    record(out, {a, b}, [=, an = a.shared(), bn = b.shared()](detail::Node& self) {
      const double* dc = self.grad.data();
      if (an->requires_grad) {
        double* da = an->grad_buffer().data();
        if (!trans_a) {
          kernels::gemm(false, !trans_b, m, k, n, dc, bn->value.data(), da, true);
        } else {
          kernels::gemm(trans_b, true, k, m, n, bn->value.data(), dc, da, true);
        }
      }
      if (bn->requires_grad) {
        double* db = bn->grad_buffer().data();
        if (!trans_b) {
          kernels::gemm(!trans_a, false, k, n, m, an->value.data(), dc, db, true);
        } else {
          kernels::gemm(true, trans_a, n, k, m, dc, an->value.data(), db, true);
        }
      }
    });
    return out;
  }

  /// A + B where B's shape equals A's or is a suffix of it (broadcast over the
  /// leading dims of A).
  Tensor add(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!suffix) {
      fail(ErrorKind::kShapeMismatch, "add " + shape_str(sa) + " + " + shape_str(sb));
    }
    const std::size_t inner = b.numel();
    const std::size_t outer = a.numel() / inner;
    Tensor out = Tensor::from(sa, std::vector<double>(a.data().begin(), a.data().end()));
    auto od = out.mutable_data();
    auto bd = b.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) od[o * inner + i] += bd[i];
    record(out, {a, b}, [=, an = a.shared(), bn = b.shared()](detail::Node& self) {
      if (an->requires_grad) {
        auto da = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        auto db = bn->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) db[i] += self.grad[o * inner + i];
      }
    });
    return out;
  }

  Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
    record(out, {a}, [=, an = a.shared()](detail::Node& self) {
      auto da = an->grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * c;
    });
    return out;
  }

  /// Exact (erf) GELU. The derivative Phi(x) + x * phi(x) is assembled during
  /// the forward pass.
  Tensor gelu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    auto od = out.mutable_data();
    auto ad = a.data();
    const bool keep = recording_ && a.requires_grad();
    auto slope = std::make_shared<std::vector<double>>(keep ? od.size() : 0);
    for (std::size_t i = 0; i < od.size(); ++i) {
      const double x = ad[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      od[i] = x * cdf;
      if (keep) (*slope)[i] = cdf + x * std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    }
    record(out, {a}, [an = a.shared(), slope](detail::Node& self) {
      auto da = an->grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * (*slope)[i];
    });
    return out;
  }

  /// Softmax over the last dimension.
  Tensor softmax_rows(const Tensor& a) {
    const std::size_t width = a.shape().back();
    const std::size_t rows = a.numel() / width;
    Tensor out = Tensor::zeros(a.shape());
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = ad.data() + r * width;
      double* y = od.data() + r * width;
      double mx = x[0];
      for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
      }
      for (std::size_t j = 0; j < width; ++j) y[j] /= sum;
    }
    record(out, {a}, [=, an = a.shared()](detail::Node& self) {
      auto da = an->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * width;
        const double* dy = self.grad.data() + r * width;
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < width; ++j) da[r * width + j] += y[j] * (dy[j] - dot);
      }
    });
    return out;
  }

  /// Row-wise layer normalization with biased variance, then gain and bias.
  Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const std::size_t width = a.shape().back();
    if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
      fail(ErrorKind::kShapeMismatch, "layer_norm " + shape_str(a.shape()) + " with gain " +
                                          shape_str(gain.shape()) + " bias " + shape_str(bias.shape()));
    }
    if (!(eps > 0.0)) fail(ErrorKind::kInvalidArgument, "layer_norm eps must be positive");
    const std::size_t rows = a.numel() / width;
    Tensor out = Tensor::zeros(a.shape());
    auto xhat = std::make_shared<std::vector<double>>(a.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    auto ad = a.data();
    auto od = out.mutable_data();
    auto g = gain.data();
    auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = ad.data() + r * width;
      double mean = 0.0;
      for (std::size_t j = 0; j < width; ++j) mean += x[j];
      mean /= static_cast<double>(width);
      double var = 0.0;
      for (std::size_t j = 0; j < width; ++j) var += (x[j] - mean) * (x[j] - mean);
      var /= static_cast<double>(width);
      const double rs = 1.0 / std::sqrt(var + eps);
      (*rstd)[r] = rs;
      for (std::size_t j = 0; j < width; ++j) {
        const double xh = (x[j] - mean) * rs;
        (*xhat)[r * width + j] = xh;
        od[r * width + j] = xh * g[j] + b[j];
      }
    }
    record(out, {a, gain, bias},
           [=, an = a.shared(), gn = gain.shared(), bn = bias.shared()](detail::Node& self) {
             const double inv_w = 1.0 / static_cast<double>(width);
             std::vector<double> dxh(width);
             for (std::size_t r = 0; r < rows; ++r) {
               const double* dy = self.grad.data() + r * width;
               const double* xh = xhat->data() + r * width;
               if (gn->requires_grad) {
                 auto dg = gn->grad_buffer();
                 for (std::size_t j = 0; j < width; ++j) dg[j] += dy[j] * xh[j];
               }
               if (bn->requires_grad) {
                 auto db = bn->grad_buffer();
                 for (std::size_t j = 0; j < width; ++j) db[j] += dy[j];
               }
               if (an->requires_grad) {
                 double sum_d = 0.0;
                 double sum_dx = 0.0;
                 for (std::size_t j = 0; j < width; ++j) {
                   dxh[j] = dy[j] * gn->value[j];
                   sum_d += dxh[j];
                   sum_dx += dxh[j] * xh[j];
                 }
                 auto da = an->grad_buffer();
                 const double rs = (*rstd)[r];
                 for (std::size_t j = 0; j < width; ++j) {
                   da[r * width + j] += rs * (dxh[j] - sum_d * inv_w - xh[j] * sum_dx * inv_w);
                 }
               }
             }
           });
    return out;
  }

  /// Rows of `table` (V x d) selected by `indices`, giving (indices.size() x d).
  Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> indices) {
    if (table.rank() != 2) {
      fail(ErrorKind::kShapeMismatch, "embedding table must be a matrix, got " + shape_str(table.shape()));
    }
    const std::size_t vocab = table.dim(0);
    const std::size_t width = table.dim(1);
    auto ids = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
    Tensor out = Tensor::zeros({ids->size(), width});
    auto od = out.mutable_data();
    auto td = table.data();
    for (std::size_t i = 0; i < ids->size(); ++i) {
      if ((*ids)[i] >= vocab) {
        fail(ErrorKind::kShapeMismatch, "index " + std::to_string((*ids)[i]) + " out of range for table " +
                                            shape_str(table.shape()));
      }
      std::copy_n(td.data() + (*ids)[i] * width, width, od.data() + i * width);
    }
    record(out, {table}, [=, tn = table.shared()](detail::Node& self) {
      auto dt = tn->grad_buffer();
      for (std::size_t i = 0; i < ids->size(); ++i)
        for (std::size_t j = 0; j < width; ++j) dt[(*ids)[i] * width + j] += self.grad[i * width + j];
    });
    return out;
  }

  /// Multi-head causal self-attention over q, k, v of shape (batch*seq, d).
  /// Rows are grouped into `batch` sequences of length `seq`; position t of a
  /// sequence attends to positions 0..t of the same sequence only.
  Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                          std::size_t seq, std::size_t heads) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() ||
        q.dim(0) != batch * seq || heads == 0 || q.dim(1) % heads != 0) {
      fail(ErrorKind::kShapeMismatch, "attention q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                                          " v" + shape_str(v.shape()));
    }
    const std::size_t d = q.dim(1);
    const std::size_t hd = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    // Row-stochastic attention weights per (batch, head), zero above the diagonal.
    auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq, 0.0);
    Tensor out = Tensor::zeros(q.shape());
    // Head slices are copied into contiguous seq x hd blocks so the products run
    // through gemm.
    auto gather = [=](const double* src, std::size_t b, std::size_t h, double* dst) {
      for (std::size_t t = 0; t < seq; ++t) {
        std::copy_n(src + (b * seq + t) * d + h * hd, hd, dst + t * hd);
      }
    };
    auto scatter_add = [=](const double* src, std::size_t b, std::size_t h, double* dst) {
      for (std::size_t t = 0; t < seq; ++t) {
        double* row = dst + (b * seq + t) * d + h * hd;
        for (std::size_t c = 0; c < hd; ++c) row[c] += src[t * hd + c];
      }
    };
    {
      std::vector<double> qh(seq * hd), kh(seq * hd), vh(seq * hd), oh(seq * hd);
      double* od = out.mutable_data().data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          double* P = probs->data() + (b * heads + h) * seq * seq;
          gather(q.data().data(), b, h, qh.data());
          gather(k.data().data(), b, h, kh.data());
          gather(v.data().data(), b, h, vh.data());
          kernels::gemm(false, true, seq, seq, hd, qh.data(), kh.data(), P, false);
          for (std::size_t t = 0; t < seq; ++t) {
            double* p = P + t * seq;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= t; ++j) {
              p[j] *= sc;
              mx = std::max(mx, p[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= t; ++j) {
              p[j] = std::exp(p[j] - mx);
              sum += p[j];
            }
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j <= t; ++j) p[j] *= inv;
            std::fill(p + t + 1, p + seq, 0.0);
          }
          kernels::gemm(false, false, seq, hd, seq, P, vh.data(), oh.data(), false);
          scatter_add(oh.data(), b, h, od);
        }
      }
    }
    record(out, {q, k, v},
           [=, qn = q.shared(), kn = k.shared(), vn = v.shared()](detail::Node& self) {
             double* dq = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
             double* dk = kn->requires_grad ? kn->grad_buffer().data() : nullptr;
             double* dv = vn->requires_grad ? vn->grad_buffer().data() : nullptr;
             std::vector<double> qh(seq * hd), kh(seq * hd), vh(seq * hd), doh(seq * hd), tmp(seq * hd);
             std::vector<double> ds(seq * seq);
             for (std::size_t b = 0; b < batch; ++b) {
               for (std::size_t h = 0; h < heads; ++h) {
                 const double* P = probs->data() + (b * heads + h) * seq * seq;
                 gather(self.grad.data(), b, h, doh.data());
                 if (dv) {
                   kernels::gemm(true, false, seq, hd, seq, P, doh.data(), tmp.data(), false);
                   scatter_add(tmp.data(), b, h, dv);
                 }
                 if (!dq && !dk) continue;
                 gather(vn->value.data(), b, h, vh.data());
                 kernels::gemm(false, true, seq, seq, hd, doh.data(), vh.data(), ds.data(), false);
                 for (std::size_t t = 0; t < seq; ++t) {
                   const double* p = P + t * seq;
                   double* row = ds.data() + t * seq;
                   double weighted = 0.0;
                   for (std::size_t j = 0; j <= t; ++j) weighted += p[j] * row[j];
                   for (std::size_t j = 0; j <= t; ++j) row[j] = p[j] * (row[j] - weighted) * sc;
                   std::fill(row + t + 1, row + seq, 0.0);
                 }
                 if (dq) {
                   gather(kn->value.data(), b, h, kh.data());
                   kernels::gemm(false, false, seq, hd, seq, ds.data(), kh.data(), tmp.data(), false);
                   scatter_add(tmp.data(), b, h, dq);
                 }
                 if (dk) {
                   gather(qn->value.data(), b, h, qh.data());
                   kernels::gemm(true, false, seq, hd, seq, ds.data(), qh.data(), tmp.data(), false);
                   scatter_add(tmp.data(), b, h, dk);
                 }
               }
             }
           });
    return out;
  }

  /// Mean negative log-likelihood over positions whose mask is 1:
  /// -(1 / sum(mask)) * sum_t mask_t * log softmax(logits_t)[target_t].
  Tensor cross_entropy_masked(const Tensor& logits, std::span<const std::size_t> targets,
                              std::span<const double> mask) {
    if (logits.rank() != 2 || targets.size() != logits.dim(0) || mask.size() != logits.dim(0)) {
      fail(ErrorKind::kShapeMismatch, "cross_entropy logits " + shape_str(logits.shape()) + " targets " +
                                          std::to_string(targets.size()) + " mask " +
                                          std::to_string(mask.size()));
    }
    const std::size_t rows = logits.dim(0);
    const std::size_t width = logits.dim(1);
    double active = 0.0;
    for (double m : mask) active += m;
    if (active <= 0.0) fail(ErrorKind::kAllMasked, "loss mask has no active position");
    const double weight = 1.0 / active;
    auto probs = std::make_shared<std::vector<double>>(rows * width, 0.0);
    auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
    auto msk = std::make_shared<std::vector<double>>(mask.begin(), mask.end());
    const double* ld = logits.data().data();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      if ((*msk)[r] == 0.0) continue;
      if ((*tgt)[r] >= width) {
        fail(ErrorKind::kShapeMismatch, "target " + std::to_string((*tgt)[r]) + " out of range");
      }
      const double* x = ld + r * width;
      double mx = x[0];
      for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < width; ++j) sum += std::exp(x[j] - mx);
      const double log_z = mx + std::log(sum);
      double* p = probs->data() + r * width;
      for (std::size_t j = 0; j < width; ++j) p[j] = std::exp(x[j] - log_z);
      total += (*msk)[r] * (log_z - x[(*tgt)[r]]);
    }
    Tensor out = Tensor::scalar(total * weight);
    record(out, {logits}, [=, ln = logits.shared()](detail::Node& self) {
      auto dl = ln->grad_buffer();
      const double g = self.grad[0] * weight;
      for (std::size_t r = 0; r < rows; ++r) {
        if ((*msk)[r] == 0.0) continue;
        const double* p = probs->data() + r * width;
        const double f = g * (*msk)[r];
        for (std::size_t j = 0; j < width; ++j) dl[r * width + j] += f * p[j];
        dl[r * width + (*tgt)[r]] -= f;
      }
    });
    return out;
  }

  /// Populates gradients of every requires_grad tensor reachable from `loss`.
  void backward(const Tensor& loss) {
    if (consumed_) fail(ErrorKind::kAlreadyConsumed, "backward already ran on this graph");
    if (loss.numel() != 1) fail(ErrorKind::kNonScalarLoss, "loss has shape " + shape_str(loss.shape()));
    consumed_ = true;
    if (!loss.requires_grad()) return;
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      detail::Node& node = **it;
      if (!node.grad.empty() && node.backward) node.backward(node);
    }
    // Release intermediate buffers; leaves keep their gradients.
    tape_.clear();
  }

 private:
  void record(Tensor& out, std::initializer_list<Tensor> inputs, std::function<void(detail::Node&)> fn) {
    if (!recording_) return;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return;
    if (consumed_) fail(ErrorKind::kAlreadyConsumed, "graph already consumed by backward");
    out.set_requires_grad(true);
    out.node()->backward = std::move(fn);
    tape_.push_back(out.shared());
  }

  std::vector<std::shared_ptr<detail::Node>> tape_;
  bool consumed_ = false;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// Global-norm clipping followed by one bias-corrected Adam update. Returns the
/// pre-clip gradient norm. Throws NonFiniteGradient (touching nothing) if any
/// gradient entry is NaN or infinite.
inline double adam_step(std::span<Tensor> params, AdamState& state, double lr,
                        const AdamConfig& cfg = {}) {
  if (!(lr > 0.0)) fail(ErrorKind::kInvalidArgument, "learning rate must be positive");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::kShapeMismatch, "optimizer state does not match parameter list");
  }
  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        fail(ErrorKind::kNonFiniteGradient, "non-finite gradient in '" + p.name() + "'");
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  return norm;
}

}  // namespace sevcl::ad
