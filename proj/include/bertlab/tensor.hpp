#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bertlab/rng.hpp"

namespace bertlab {

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

// Dense row-major tensor. T is float in production and double in the
// gradient-verification mode.
template <typename T>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // same length as data once touched by backward
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::vector<size_t> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }
  Tensor(std::vector<size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) {
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
    }
  }

  static size_t numel_of(const std::vector<size_t>& s) {
    size_t n = 1;
    for (const size_t e : s) n *= e;
    return n;
  }
  size_t numel() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() { grad.assign(data.size(), T(0)); }
};

namespace detail {

// C (M,N) += A (M,K) * B (K,N). The i,k,j order keeps the inner loop a
// contiguous saxpy, which vectorizes without reassociation.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose_copy(const T* src, T* dst, size_t rows, size_t cols) {
  for (size_t i = 0; i < rows; ++i) {
    for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

}  // namespace detail

// Reverse-mode tape. Ops append nodes in execution order; backward walks the
// record once in reverse, accumulating gradients additively across fan-out.
// A tape is single-owner: build, run backward, discard.
template <typename T>
class Tape {
 public:
  using Var = int32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Wraps caller-owned storage (model parameters). Gradients accumulate into
  // external->grad if requires_grad is set.
  Var leaf(Tensor<T>* external) {
    Node node;
    node.tensor = external;
    node.external = external->requires_grad ? external : nullptr;
    node.tracked = external->requires_grad;
    return push(std::move(node));
  }

  // Tape-owned input with no gradient (masks, targets, frozen features).
  Var constant(Tensor<T> value) {
    Node node;
    node.owned = std::make_unique<Tensor<T>>(std::move(value));
    node.tensor = node.owned.get();
    node.tracked = false;
    return push(std::move(node));
  }

  Tensor<T>& val(Var v) { return *nodes_.at(static_cast<size_t>(v)).tensor; }
  const Tensor<T>& val(Var v) const { return *nodes_.at(static_cast<size_t>(v)).tensor; }
  size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.shape.size() == 2 && tb.shape.size() == 2 && ta.shape[1] == tb.shape[0],
            "matmul shape mismatch: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Var out = make({m, n}, tracked(a) || tracked(b));
    detail::gemm_acc(ta.data.data(), tb.data.data(), val(out).data.data(), m, k, n);
    record(out, [this, a, b, out, m, k, n] {
      const auto& g = grad_of(out);
      if (tracked(a)) {
        // dA += dC * B^T
        std::vector<T> bt(k * n);
        detail::transpose_copy(val(b).data.data(), bt.data(), k, n);
        detail::gemm_acc(g.data(), bt.data(), grad_of(a).data(), m, n, k);
      }
      if (tracked(b)) {
        // dB += A^T * dC
        std::vector<T> at(m * k);
        detail::transpose_copy(val(a).data.data(), at.data(), m, k);
        detail::gemm_acc(at.data(), g.data(), grad_of(b).data(), k, m, n);
      }
    });
    return out;
  }

  // A (M,K) x B^T where B is (N,K); used for tied-embedding decoders.
  Var matmul_nt(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.shape.size() == 2 && tb.shape.size() == 2 && ta.shape[1] == tb.shape[1],
            "matmul_nt shape mismatch: " + shape_str(ta.shape) + " x " + shape_str(tb.shape) +
                "^T");
    const size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[0];
    Var out = make({m, n}, tracked(a) || tracked(b));
    {
      std::vector<T> bt(k * n);
      detail::transpose_copy(tb.data.data(), bt.data(), n, k);
      detail::gemm_acc(ta.data.data(), bt.data(), val(out).data.data(), m, k, n);
    }
    record(out, [this, a, b, out, m, k, n] {
      const auto& g = grad_of(out);
      if (tracked(a)) {
        // dA += dC * B
        detail::gemm_acc(g.data(), val(b).data.data(), grad_of(a).data(), m, n, k);
      }
      if (tracked(b)) {
        // dB += dC^T * A
        std::vector<T> gt(m * n);
        detail::transpose_copy(g.data(), gt.data(), m, n);
        detail::gemm_acc(gt.data(), val(a).data.data(), grad_of(b).data(), n, m, k);
      }
    });
    return out;
  }

  // Batched matmul over matching leading extent: (N,r,k) x (N,k,c).
  Var bmm(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.shape.size() == 3 && tb.shape.size() == 3 && ta.shape[0] == tb.shape[0] &&
                ta.shape[2] == tb.shape[1],
            "bmm shape mismatch: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const size_t nb = ta.shape[0], r = ta.shape[1], k = ta.shape[2], c = tb.shape[2];
    Var out = make({nb, r, c}, tracked(a) || tracked(b));
    for (size_t s = 0; s < nb; ++s) {
      detail::gemm_acc(ta.data.data() + s * r * k, tb.data.data() + s * k * c,
                       val(out).data.data() + s * r * c, r, k, c);
    }
    record(out, [this, a, b, out, nb, r, k, c] {
      const auto& g = grad_of(out);
      for (size_t s = 0; s < nb; ++s) {
        const T* gs = g.data() + s * r * c;
        if (tracked(a)) {
          std::vector<T> bt(k * c);
          detail::transpose_copy(val(b).data.data() + s * k * c, bt.data(), k, c);
          detail::gemm_acc(gs, bt.data(), grad_of(a).data() + s * r * k, r, c, k);
        }
        if (tracked(b)) {
          std::vector<T> at(r * k);
          detail::transpose_copy(val(a).data.data() + s * r * k, at.data(), r, k);
          detail::gemm_acc(at.data(), gs, grad_of(b).data() + s * k * c, k, r, c);
        }
      }
    });
    return out;
  }

  // (N,r,k) x (N,c,k)^T -> (N,r,c); attention scores.
  Var bmm_nt(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.shape.size() == 3 && tb.shape.size() == 3 && ta.shape[0] == tb.shape[0] &&
                ta.shape[2] == tb.shape[2],
            "bmm_nt shape mismatch: " + shape_str(ta.shape) + " x " + shape_str(tb.shape) + "^T");
    const size_t nb = ta.shape[0], r = ta.shape[1], k = ta.shape[2], c = tb.shape[1];
    Var out = make({nb, r, c}, tracked(a) || tracked(b));
    for (size_t s = 0; s < nb; ++s) {
      std::vector<T> bt(k * c);
      detail::transpose_copy(tb.data.data() + s * c * k, bt.data(), c, k);
      detail::gemm_acc(ta.data.data() + s * r * k, bt.data(), val(out).data.data() + s * r * c,
                       r, k, c);
    }
    record(out, [this, a, b, out, nb, r, k, c] {
      const auto& g = grad_of(out);
      for (size_t s = 0; s < nb; ++s) {
        const T* gs = g.data() + s * r * c;
        if (tracked(a)) {
          detail::gemm_acc(gs, val(b).data.data() + s * c * k, grad_of(a).data() + s * r * k, r,
                           c, k);
        }
        if (tracked(b)) {
          std::vector<T> gt(r * c);
          detail::transpose_copy(gs, gt.data(), r, c);
          detail::gemm_acc(gt.data(), val(a).data.data() + s * r * k,
                           grad_of(b).data() + s * c * k, c, r, k);
        }
      }
    });
    return out;
  }

  Var add(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.shape == tb.shape, "add shape mismatch: " + shape_str(ta.shape) + " vs " +
                                      shape_str(tb.shape));
    Var out = make(ta.shape, tracked(a) || tracked(b));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) o[i] = ta.data[i] + tb.data[i];
    record(out, [this, a, b, out] {
      const auto& g = grad_of(out);
      if (tracked(a)) {
        auto& ga = grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tracked(b)) {
        auto& gb = grad_of(b);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
    return out;
  }

  // (..., d) + (d): broadcast a row vector (bias addition).
  Var add_rowvec(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(tb.shape.size() == 1 && !ta.shape.empty() && ta.shape.back() == tb.shape[0],
            "add_rowvec shape mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const size_t d = tb.shape[0];
    const size_t rows = ta.numel() / d;
    Var out = make(ta.shape, tracked(a) || tracked(b));
    auto& o = val(out).data;
    for (size_t r = 0; r < rows; ++r) {
      for (size_t j = 0; j < d; ++j) o[r * d + j] = ta.data[r * d + j] + tb.data[j];
    }
    record(out, [this, a, b, out, rows, d] {
      const auto& g = grad_of(out);
      if (tracked(a)) {
        auto& ga = grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tracked(b)) {
        auto& gb = grad_of(b);
        for (size_t r = 0; r < rows; ++r) {
          for (size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
      }
    });
    return out;
  }

  Var mul(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.shape == tb.shape, "mul shape mismatch: " + shape_str(ta.shape) + " vs " +
                                      shape_str(tb.shape));
    Var out = make(ta.shape, tracked(a) || tracked(b));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) o[i] = ta.data[i] * tb.data[i];
    record(out, [this, a, b, out] {
      const auto& g = grad_of(out);
      if (tracked(a)) {
        auto& ga = grad_of(a);
        const auto& vb = val(b).data;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
      }
      if (tracked(b)) {
        auto& gb = grad_of(b);
        const auto& va = val(a).data;
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    });
    return out;
  }

  Var scale(Var a, T s) {
    const auto& ta = val(a);
    Var out = make(ta.shape, tracked(a));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) o[i] = ta.data[i] * s;
    record(out, [this, a, out, s] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return out;
  }

  Var transpose(Var a) {
    const auto& ta = val(a);
    require(ta.shape.size() == 2, "transpose expects 2D, got " + shape_str(ta.shape));
    const size_t r = ta.shape[0], c = ta.shape[1];
    Var out = make({c, r}, tracked(a));
    detail::transpose_copy(ta.data.data(), val(out).data.data(), r, c);
    record(out, [this, a, out, r, c] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      }
    });
    return out;
  }

  Var reshape(Var a, std::vector<size_t> shape) {
    const auto& ta = val(a);
    require(Tensor<T>::numel_of(shape) == ta.numel(),
            "reshape element count mismatch: " + shape_str(ta.shape) + " -> " + shape_str(shape));
    Var out = make(shape, tracked(a));
    val(out).data = ta.data;
    record(out, [this, a, out] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
  }

  // Embedding lookup: rows of table (V, d) selected by ids.
  Var embedding(Var table, const std::vector<int32_t>& ids) {
    const auto& tt = val(table);
    require(tt.shape.size() == 2, "embedding table must be 2D, got " + shape_str(tt.shape));
    const size_t v = tt.shape[0], d = tt.shape[1];
    for (const int32_t id : ids) {
      if (id < 0 || static_cast<size_t>(id) >= v) {
        throw std::runtime_error("embedding id out of range: " + std::to_string(id) +
                                 " for table " + shape_str(tt.shape));
      }
    }
    Var out = make({ids.size(), d}, tracked(table));
    auto& o = val(out).data;
    for (size_t r = 0; r < ids.size(); ++r) {
      std::copy_n(tt.data.data() + static_cast<size_t>(ids[r]) * d, d, o.data() + r * d);
    }
    record(out, [this, table, out, ids, d] {
      if (!tracked(table)) return;
      const auto& g = grad_of(out);
      auto& gt = grad_of(table);
      for (size_t r = 0; r < ids.size(); ++r) {
        T* dst = gt.data() + static_cast<size_t>(ids[r]) * d;
        const T* src = g.data() + r * d;
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
    return out;
  }

  // Row gather on a 2D tensor (e.g. per-sequence CLS rows).
  Var gather_rows(Var a, std::vector<size_t> rows) {
    const auto& ta = val(a);
    require(ta.shape.size() == 2, "gather_rows expects 2D, got " + shape_str(ta.shape));
    const size_t d = ta.shape[1];
    for (const size_t r : rows) {
      require(r < ta.shape[0], "gather_rows index out of range");
    }
    Var out = make({rows.size(), d}, tracked(a));
    auto& o = val(out).data;
    for (size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(ta.data.data() + rows[i] * d, d, o.data() + i * d);
    }
    record(out, [this, a, out, rows, d] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t i = 0; i < rows.size(); ++i) {
        T* dst = ga.data() + rows[i] * d;
        const T* src = g.data() + i * d;
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
    return out;
  }

  // (B*L, d) -> (B*h, L, d/h)
  Var split_heads(Var a, size_t batch, size_t len, size_t heads) {
    const auto& ta = val(a);
    require(ta.shape.size() == 2 && ta.shape[0] == batch * len && ta.shape[1] % heads == 0,
            "split_heads shape mismatch: " + shape_str(ta.shape));
    const size_t d = ta.shape[1], dh = d / heads;
    Var out = make({batch * heads, len, dh}, tracked(a));
    auto& o = val(out).data;
    for (size_t b = 0; b < batch; ++b) {
      for (size_t l = 0; l < len; ++l) {
        for (size_t h = 0; h < heads; ++h) {
          std::copy_n(ta.data.data() + (b * len + l) * d + h * dh, dh,
                      o.data() + ((b * heads + h) * len + l) * dh);
        }
      }
    }
    record(out, [this, a, out, batch, len, heads, d, dh] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t b = 0; b < batch; ++b) {
        for (size_t l = 0; l < len; ++l) {
          for (size_t h = 0; h < heads; ++h) {
            const T* src = g.data() + ((b * heads + h) * len + l) * dh;
            T* dst = ga.data() + (b * len + l) * d + h * dh;
            for (size_t j = 0; j < dh; ++j) dst[j] += src[j];
          }
        }
      }
    });
    return out;
  }

  // (B*h, L, dh) -> (B*L, h*dh)
  Var merge_heads(Var a, size_t batch, size_t len, size_t heads) {
    const auto& ta = val(a);
    require(ta.shape.size() == 3 && ta.shape[0] == batch * heads && ta.shape[1] == len,
            "merge_heads shape mismatch: " + shape_str(ta.shape));
    const size_t dh = ta.shape[2], d = heads * dh;
    Var out = make({batch * len, d}, tracked(a));
    auto& o = val(out).data;
    for (size_t b = 0; b < batch; ++b) {
      for (size_t l = 0; l < len; ++l) {
        for (size_t h = 0; h < heads; ++h) {
          std::copy_n(ta.data.data() + ((b * heads + h) * len + l) * dh, dh,
                      o.data() + (b * len + l) * d + h * dh);
        }
      }
    }
    record(out, [this, a, out, batch, len, heads, d, dh] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t b = 0; b < batch; ++b) {
        for (size_t l = 0; l < len; ++l) {
          for (size_t h = 0; h < heads; ++h) {
            const T* src = g.data() + (b * len + l) * d + h * dh;
            T* dst = ga.data() + ((b * heads + h) * len + l) * dh;
            for (size_t j = 0; j < dh; ++j) dst[j] += src[j];
          }
        }
      }
    });
    return out;
  }

  // Softmax over the last extent, computed with max subtraction.
  Var softmax_lastdim(Var a) {
    const auto& ta = val(a);
    require(!ta.shape.empty(), "softmax on empty shape");
    const size_t d = ta.shape.back();
    const size_t rows = ta.numel() / d;
    Var out = make(ta.shape, tracked(a));
    auto& o = val(out).data;
    for (size_t r = 0; r < rows; ++r) {
      const T* x = ta.data.data() + r * d;
      T* y = o.data() + r * d;
      T mx = x[0];
      for (size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
      T sum = T(0);
      for (size_t j = 0; j < d; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
      }
      const T inv = T(1) / sum;
      for (size_t j = 0; j < d; ++j) y[j] *= inv;
    }
    record(out, [this, a, out, rows, d] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      const auto& y = val(out).data;
      auto& ga = grad_of(a);
      for (size_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * d;
        const T* gr = g.data() + r * d;
        T dot = T(0);
        for (size_t j = 0; j < d; ++j) dot += yr[j] * gr[j];
        T* dst = ga.data() + r * d;
        for (size_t j = 0; j < d; ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    });
    return out;
  }

  // Layer normalization over the last extent with learned gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, T eps) {
    const auto& tx = val(x);
    const auto& tg = val(gain);
    const auto& tb = val(bias);
    require(!tx.shape.empty() && tg.shape.size() == 1 && tb.shape.size() == 1 &&
                tg.shape[0] == tx.shape.back() && tb.shape[0] == tx.shape.back(),
            "layer_norm shape mismatch: " + shape_str(tx.shape) + " with gain " +
                shape_str(tg.shape) + ", bias " + shape_str(tb.shape));
    const size_t d = tx.shape.back();
    const size_t rows = tx.numel() / d;
    Var out = make(tx.shape, tracked(x) || tracked(gain) || tracked(bias));
    auto stats = std::make_shared<std::vector<T>>(rows * 2);  // mean, inv_std per row
    auto& o = val(out).data;
    for (size_t r = 0; r < rows; ++r) {
      const T* xr = tx.data.data() + r * d;
      T mean = T(0);
      for (size_t j = 0; j < d; ++j) mean += xr[j];
      mean /= static_cast<T>(d);
      T var = T(0);
      for (size_t j = 0; j < d; ++j) {
        const T c = xr[j] - mean;
        var += c * c;
      }
      var /= static_cast<T>(d);
      const T inv_std = T(1) / std::sqrt(var + eps);
      (*stats)[2 * r] = mean;
      (*stats)[2 * r + 1] = inv_std;
      T* yr = o.data() + r * d;
      for (size_t j = 0; j < d; ++j) {
        yr[j] = (xr[j] - mean) * inv_std * tg.data[j] + tb.data[j];
      }
    }
    record(out, [this, x, gain, bias, out, rows, d, stats] {
      const auto& g = grad_of(out);
      const auto& xv = val(x).data;
      const auto& gv = val(gain).data;
      for (size_t r = 0; r < rows; ++r) {
        const T mean = (*stats)[2 * r];
        const T inv_std = (*stats)[2 * r + 1];
        const T* xr = xv.data() + r * d;
        const T* gr = g.data() + r * d;
        if (tracked(gain) || tracked(bias)) {
          for (size_t j = 0; j < d; ++j) {
            const T xhat = (xr[j] - mean) * inv_std;
            if (tracked(gain)) grad_of(gain)[j] += gr[j] * xhat;
            if (tracked(bias)) grad_of(bias)[j] += gr[j];
          }
        }
        if (tracked(x)) {
          // dx = inv_std * (h - mean(h) - xhat * mean(h*xhat)), h = dy * gain
          T mean_h = T(0), mean_hx = T(0);
          for (size_t j = 0; j < d; ++j) {
            const T h = gr[j] * gv[j];
            const T xhat = (xr[j] - mean) * inv_std;
            mean_h += h;
            mean_hx += h * xhat;
          }
          mean_h /= static_cast<T>(d);
          mean_hx /= static_cast<T>(d);
          T* dst = grad_of(x).data() + r * d;
          for (size_t j = 0; j < d; ++j) {
            const T h = gr[j] * gv[j];
            const T xhat = (xr[j] - mean) * inv_std;
            dst[j] += inv_std * (h - mean_h - xhat * mean_hx);
          }
        }
      }
    });
    return out;
  }

  // Gaussian error linear unit, tanh approximation.
  Var gelu(Var a) {
    static const T kAlpha = T(0.7978845608028654);  // sqrt(2/pi)
    static const T kBeta = T(0.044715);
    const auto& ta = val(a);
    Var out = make(ta.shape, tracked(a));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) {
      const T x = ta.data[i];
      const T u = kAlpha * (x + kBeta * x * x * x);
      o[i] = T(0.5) * x * (T(1) + std::tanh(u));
    }
    record(out, [this, a, out] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      const auto& xv = val(a).data;
      auto& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) {
        const T x = xv[i];
        const T u = kAlpha * (x + kBeta * x * x * x);
        const T t = std::tanh(u);
        const T du = kAlpha * (T(1) + T(3) * kBeta * x * x);
        const T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
        ga[i] += g[i] * d;
      }
    });
    return out;
  }

  Var relu(Var a) {
    const auto& ta = val(a);
    Var out = make(ta.shape, tracked(a));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) o[i] = ta.data[i] > T(0) ? ta.data[i] : T(0);
    record(out, [this, a, out] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      const auto& xv = val(a).data;
      auto& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > T(0)) ga[i] += g[i];
      }
    });
    return out;
  }

  Var tanh_op(Var a) {
    const auto& ta = val(a);
    Var out = make(ta.shape, tracked(a));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(ta.data[i]);
    record(out, [this, a, out] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      const auto& y = val(out).data;
      auto& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
    return out;
  }

  // Inverted dropout: keeps are scaled by 1/(1-p) so evaluation is the
  // identity. p = 0 or training = false is the exact identity.
  Var dropout(Var a, double p, DetRng& rng, bool training) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout p must be in [0, 1)");
    const auto& ta = val(a);
    if (!training || p == 0.0) {
      Var out = make(ta.shape, tracked(a));
      val(out).data = ta.data;
      record(out, [this, a, out] {
        if (!tracked(a)) return;
        const auto& g = grad_of(out);
        auto& ga = grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
      return out;
    }
    auto mask = std::make_shared<std::vector<uint8_t>>(ta.numel());
    const T inv_keep = T(1.0 / (1.0 - p));
    Var out = make(ta.shape, tracked(a));
    auto& o = val(out).data;
    for (size_t i = 0; i < o.size(); ++i) {
      const bool keep = rng.real01() >= p;
      (*mask)[i] = keep;
      o[i] = keep ? ta.data[i] * inv_keep : T(0);
    }
    record(out, [this, a, out, mask, inv_keep] {
      if (!tracked(a)) return;
      const auto& g = grad_of(out);
      auto& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) {
        if ((*mask)[i]) ga[i] += g[i] * inv_keep;
      }
    });
    return out;
  }

  // Mean cross entropy of logits (N, K) against labels (N); label -1 marks
  // positions without supervision. Stable via shifted log-sum-exp.
  Var cross_entropy(Var logits, const std::vector<int32_t>& labels,
                    int32_t ignore_sentinel = -1) {
    const auto& tl = val(logits);
    require(tl.shape.size() == 2 && tl.shape[0] == labels.size(),
            "cross_entropy shape mismatch: logits " + shape_str(tl.shape) + " vs " +
                std::to_string(labels.size()) + " labels");
    const size_t n = tl.shape[0], k = tl.shape[1];
    size_t count = 0;
    for (const int32_t lab : labels) {
      if (lab == ignore_sentinel) continue;
      if (lab < 0 || static_cast<size_t>(lab) >= k) {
        throw std::runtime_error("cross_entropy label out of range: " + std::to_string(lab) +
                                 " for " + std::to_string(k) + " classes");
      }
      ++count;
    }
    if (count == 0) throw std::runtime_error("cross_entropy: no supervised positions");

    Var out = make({1}, tracked(logits));
    T total = T(0);
    for (size_t r = 0; r < n; ++r) {
      if (labels[r] == ignore_sentinel) continue;
      const T* x = tl.data.data() + r * k;
      T mx = x[0];
      for (size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
      T sum = T(0);
      for (size_t j = 0; j < k; ++j) sum += std::exp(x[j] - mx);
      total += mx + std::log(sum) - x[static_cast<size_t>(labels[r])];
    }
    val(out).data[0] = total / static_cast<T>(count);
    record(out, [this, logits, out, labels, n, k, count, ignore_sentinel] {
      if (!tracked(logits)) return;
      const T gscale = grad_of(out)[0] / static_cast<T>(count);
      const auto& xv = val(logits).data;
      auto& gl = grad_of(logits);
      for (size_t r = 0; r < n; ++r) {
        if (labels[r] == ignore_sentinel) continue;
        const T* x = xv.data() + r * k;
        T mx = x[0];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
        T sum = T(0);
        for (size_t j = 0; j < k; ++j) sum += std::exp(x[j] - mx);
        const T inv = T(1) / sum;
        T* dst = gl.data() + r * k;
        for (size_t j = 0; j < k; ++j) {
          dst[j] += gscale * std::exp(x[j] - mx) * inv;
        }
        dst[static_cast<size_t>(labels[r])] -= gscale;
      }
    });
    return out;
  }

  // Mean squared error of predictions (N, 1) or (N) against targets.
  Var mse_loss(Var pred, const std::vector<T>& targets) {
    const auto& tp = val(pred);
    require(tp.numel() == targets.size(), "mse_loss shape mismatch: " + shape_str(tp.shape) +
                                              " vs " + std::to_string(targets.size()) +
                                              " targets");
    const size_t n = targets.size();
    Var out = make({1}, tracked(pred));
    T total = T(0);
    for (size_t i = 0; i < n; ++i) {
      const T d = tp.data[i] - targets[i];
      total += d * d;
    }
    val(out).data[0] = total / static_cast<T>(n);
    record(out, [this, pred, out, targets, n] {
      if (!tracked(pred)) return;
      const T gscale = grad_of(out)[0] * T(2) / static_cast<T>(n);
      const auto& pv = val(pred).data;
      auto& gp = grad_of(pred);
      for (size_t i = 0; i < n; ++i) gp[i] += gscale * (pv[i] - targets[i]);
    });
    return out;
  }

  Var sum(Var a) {
    const auto& ta = val(a);
    Var out = make({1}, tracked(a));
    T total = T(0);
    for (const T v : ta.data) total += v;
    val(out).data[0] = total;
    record(out, [this, a, out] {
      if (!tracked(a)) return;
      const T g = grad_of(out)[0];
      auto& ga = grad_of(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
    return out;
  }

  // Reverse pass from a scalar loss. Visits every recorded node exactly once;
  // per-pass gradients are local, and leaf gradients accumulate into the
  // wrapped tensors' grad fields (repeated calls without a reset add up).
  void backward(Var loss) {
    auto& lt = val(loss);
    if (lt.numel() != 1) {
      throw std::runtime_error("backward: loss must be scalar, got shape " +
                               shape_str(lt.shape));
    }
    pass_grads_.assign(nodes_.size(), {});
    grad_of(loss)[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.tracked || pass_grads_[i].empty()) continue;
      if (node.back) node.back();
      if (node.external) {
        node.external->ensure_grad();
        auto& eg = node.external->grad;
        const auto& pg = pass_grads_[i];
        for (size_t j = 0; j < eg.size(); ++j) eg[j] += pg[j];
      }
    }
    // Mirror pass gradients onto tape-owned tensors for inspection.
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (!pass_grads_[i].empty() && nodes_[i].owned) {
        nodes_[i].owned->grad = std::move(pass_grads_[i]);
      }
    }
    pass_grads_.clear();
  }

 private:
  struct Node {
    Tensor<T>* tensor = nullptr;
    Tensor<T>* external = nullptr;  // leaf with caller-owned grad accumulation
    std::unique_ptr<Tensor<T>> owned;
    std::function<void()> back;
    bool tracked = false;
  };

  static void require(bool ok, const std::string& message) {
    if (!ok) throw std::runtime_error(message);
  }

  bool tracked(Var v) const { return nodes_[static_cast<size_t>(v)].tracked; }

  // Per-pass gradient buffer for node v, allocated on first touch.
  std::vector<T>& grad_of(Var v) {
    auto& g = pass_grads_[static_cast<size_t>(v)];
    if (g.empty()) g.assign(val(v).numel(), T(0));
    return g;
  }

  Var make(std::vector<size_t> shape, bool tracked_result) {
    Node node;
    node.owned = std::make_unique<Tensor<T>>(std::move(shape));
    node.tensor = node.owned.get();
    node.tracked = tracked_result;
    return push(std::move(node));
  }

  void record(Var v, std::function<void()> back) {
    auto& node = nodes_[static_cast<size_t>(v)];
    if (node.tracked) node.back = std::move(back);
  }

  Var push(Node&& node) {
    nodes_.push_back(std::move(node));
    return static_cast<Var>(nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::vector<std::vector<T>> pass_grads_;
};

// Compares reverse-mode gradients against central finite differences
// (f(x+eps) - f(x-eps)) / (2 eps), elementwise over the given parameters.
// Returns max |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
//
// build(with_grad) must rebuild the same graph deterministically; with
// with_grad = true it must also run backward so parameter grads populate.
// When a parameter has more coordinates than max_coords_per_param, a seeded
// uniform subset is checked.
template <typename T, typename BuildFn>
double grad_check(BuildFn&& build, std::span<Tensor<T>*> params, T eps,
                  size_t max_coords_per_param = std::numeric_limits<size_t>::max(),
                  uint64_t sample_seed = 1) {
  for (auto* p : params) p->zero_grad();
  build(true);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) {
    if (p->grad.size() != p->data.size()) {
      throw std::runtime_error("grad_check: parameter has no gradient");
    }
    analytic.push_back(p->grad);
  }

  DetRng rng(sample_seed);
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>* p = params[pi];
    std::vector<size_t> coords;
    if (p->data.size() <= max_coords_per_param) {
      coords.resize(p->data.size());
      for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < max_coords_per_param; ++i) {
        coords.push_back(static_cast<size_t>(rng.below(p->data.size())));
      }
    }
    for (const size_t c : coords) {
      const T orig = p->data[c];
      p->data[c] = orig + eps;
      const double fp = static_cast<double>(build(false));
      p->data[c] = orig - eps;
      const double fm = static_cast<double>(build(false));
      p->data[c] = orig;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[pi][c]);
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace bertlab
