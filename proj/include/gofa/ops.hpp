#pragma once

// Differentiable primitives. Every op computes its forward value eagerly and,
// when any input requires a gradient, records the adjoint rule on the tape.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gofa/tensor.hpp"

namespace gofa::ops {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

namespace detail {

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void accumulate(TensorNode<T>& into, const std::vector<T>& g, T scale = T(1)) {
  auto& dst = into.grad_buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
}

}  // namespace detail

using gofa::detail::any_requires_grad;
using gofa::detail::record;

// ---------------------------------------------------------------------------
// Linear algebra

/// (m×k)·(k×n) → m×n.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> out(Shape{m, n});
  if (m && n && k) {
    MapM<T>(out.data().data(), m, n).noalias() =
        CMapM<T>(a.data().data(), m, k) * CMapM<T>(b.data().data(), k, n);
  }
  if (any_requires_grad<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    record(out, [an, bn, m, k, n](TensorNode<T>& self) {
      CMapM<T> g(self.grad.data(), m, n);
      if (an->requires_grad) {
        MapM<T>(an->grad_buffer().data(), m, k).noalias() += g * CMapM<T>(bn->data.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        MapM<T>(bn->grad_buffer().data(), k, n).noalias() += CMapM<T>(an->data.data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out(Shape{n, m});
  MapM<T>(out.data().data(), n, m) = CMapM<T>(a.data().data(), m, n).transpose();
  if (any_requires_grad<T>({&a})) {
    auto an = a.node_ptr();
    record(out, [an, m, n](TensorNode<T>& self) {
      MapM<T>(an->grad_buffer().data(), m, n) += CMapM<T>(self.grad.data(), n, m).transpose();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  if (any_requires_grad<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    record(out, [an, bn](TensorNode<T>& self) {
      if (an->requires_grad) detail::accumulate(*an, self.grad);
      if (bn->requires_grad) detail::accumulate(*bn, self.grad);
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  if (any_requires_grad<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    record(out, [an, bn](TensorNode<T>& self) {
      if (an->requires_grad) detail::accumulate(*an, self.grad);
      if (bn->requires_grad) detail::accumulate(*bn, self.grad, T(-1));
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  if (any_requires_grad<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    record(out, [an, bn](TensorNode<T>& self) {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
      }
    });
  }
  return out;
}

/// a · c for a compile-time-free constant c.
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T c) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * c;
  if (any_requires_grad<T>({&a})) {
    auto an = a.node_ptr();
    record(out, [an, c](TensorNode<T>& self) { detail::accumulate(*an, self.grad, c); });
  }
  return out;
}

/// a · s where s is a one-element tensor (used for gates).
template <typename T>
BasicTensor<T> scale_by(const BasicTensor<T>& a, const BasicTensor<T>& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scale must have one element, got " + shape_str(s.shape()));
  const T c = s[0];
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * c;
  if (any_requires_grad<T>({&a, &s})) {
    auto an = a.node_ptr(), sn = s.node_ptr();
    record(out, [an, sn, c](TensorNode<T>& self) {
      if (an->requires_grad) detail::accumulate(*an, self.grad, c);
      if (sn->requires_grad) {
        T acc = 0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * an->data[i];
        sn->grad_buffer()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a[i]);
  if (any_requires_grad<T>({&a})) {
    auto an = a.node_ptr();
    record(out, [an](TensorNode<T>& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - self.data[i] * self.data[i]);
    });
  }
  return out;
}

/// x · sigmoid(x).
template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& a) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] / (T(1) + std::exp(-a[i]));
  if (any_requires_grad<T>({&a})) {
    auto an = a.node_ptr();
    record(out, [an](TensorNode<T>& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T x = an->data[i];
        const T s = T(1) / (T(1) + std::exp(-x));
        g[i] += self.grad[i] * (s * (T(1) + x * (T(1) - s)));
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  BasicTensor<T> out = BasicTensor<T>::scalar(acc);
  if (any_requires_grad<T>({&a})) {
    auto an = a.node_ptr();
    record(out, [an](TensorNode<T>& self) {
      auto& g = an->grad_buffer();
      for (auto& v : g) v += self.grad[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Normalization and probabilities

/// Softmax along `axis` with max subtraction.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range for " + shape_str(s));
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const std::size_t outer = x.numel() / std::max<std::size_t>(len * inner, 1);
  BasicTensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  if (any_requires_grad<T>({&x})) {
    auto xn = x.node_ptr();
    record(out, [xn, outer, inner, len](TensorNode<T>& self) {
      auto& g = xn->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += self.data[idx] * (self.grad[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

inline constexpr double kRmsEps = 1e-6;

/// x / sqrt(mean(x²) + eps) · gain over the last axis.
template <typename T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d) {
    throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) + " does not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = d ? x.numel() / d : 0;
  BasicTensor<T> out(x.shape());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += x[r * d + j] * x[r * d + j];
    inv[r] = T(1) / std::sqrt(ss / static_cast<T>(d) + static_cast<T>(kRmsEps));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] * inv[r] * gain[j];
  }
  if (any_requires_grad<T>({&x, &gain})) {
    auto xn = x.node_ptr(), gn = gain.node_ptr();
    record(out, [xn, gn, inv = std::move(inv), rows, d](TensorNode<T>& self) {
      const auto& gy = self.grad;
      if (gn->requires_grad) {
        auto& gg = gn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xn->data[r * d + j] * inv[r];
        }
      }
      if (xn->requires_grad) {
        auto& gx = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          // y_j = g_j x_j s, s = (mean(x²)+eps)^-1/2, ds/dx_k = -s³ x_k / d
          T dot = 0;
          for (std::size_t j = 0; j < d; ++j) dot += gy[r * d + j] * gn->data[j] * xn->data[r * d + j];
          const T s = inv[r];
          const T coef = s * s * s * dot / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += gy[r * d + j] * gn->data[j] * s - coef * xn->data[r * d + j];
          }
        }
      }
    });
  }
  return out;
}

/// Σ_r weight_r · (−log softmax(logits_r)[target_r]). Rows with weight 0 are skipped.
template <typename T>
BasicTensor<T> weighted_nll(const BasicTensor<T>& logits, std::span<const int> targets, std::span<const T> weights) {
  detail::require_rank(logits.shape(), 2, "weighted_nll");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n || weights.size() != n) {
    throw ShapeError("weighted_nll: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(weights.size()) + " weights for logits " + shape_str(logits.shape()));
  }
  std::vector<T> probs(n * v, T(0));
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (w[r] == T(0)) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw ShapeError("weighted_nll: target id " + std::to_string(tgt[r]) + " outside vocabulary of " +
                       std::to_string(v));
    }
    const T* row = logits.data().data() + r * v;
    const T mx = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[r * v + j] = std::exp(row[j] - mx);
      z += probs[r * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    total += w[r] * (mx + std::log(z) - row[tgt[r]]);
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(total);
  if (any_requires_grad<T>({&logits})) {
    auto ln = logits.node_ptr();
    record(out, [ln, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w), n, v](TensorNode<T>& self) {
      auto& g = ln->grad_buffer();
      const T up = self.grad[0];
      for (std::size_t r = 0; r < n; ++r) {
        if (w[r] == T(0)) continue;
        const T c = up * w[r];
        for (std::size_t j = 0; j < v; ++j) g[r * v + j] += c * probs[r * v + j];
        g[r * v + static_cast<std::size_t>(tgt[r])] -= c;
      }
    });
  }
  return out;
}

/// Mean token negative log-likelihood over positions whose target differs from ignore_index.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets, int ignore_index = -100) {
  std::vector<T> weights(targets.size(), T(0));
  std::size_t effective = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != ignore_index) {
      weights[i] = T(1);
      ++effective;
    }
  }
  if (effective == 0) throw ShapeError("cross_entropy: every position is ignored");
  for (auto& w : weights) w /= static_cast<T>(effective);
  return weighted_nll<T>(logits, targets, weights);
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Rows of `table` selected by `ids` (embedding lookup).
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const int> ids) {
  detail::require_rank(table.shape(), 2, "gather_rows");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  BasicTensor<T> out(Shape{ids.size(), d});
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[r]) + " outside " + shape_str(table.shape()));
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  if (any_requires_grad<T>({&table})) {
    auto tn = table.node_ptr();
    record(out, [tn, idx = std::move(idx), d](TensorNode<T>& self) {
      auto& g = tn->grad_buffer();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[r]) * d + j] += self.grad[r * d + j];
      }
    });
  }
  return out;
}

/// Copy of `base` with rows `ids` replaced by the rows of `src`.
template <typename T>
BasicTensor<T> scatter_rows(const BasicTensor<T>& base, std::span<const int> ids, const BasicTensor<T>& src) {
  detail::require_rank(base.shape(), 2, "scatter_rows");
  detail::require_rank(src.shape(), 2, "scatter_rows");
  const std::size_t d = base.dim(1);
  if (src.dim(1) != d || src.dim(0) != ids.size()) {
    throw ShapeError("scatter_rows: source " + shape_str(src.shape()) + " incompatible with base " +
                     shape_str(base.shape()) + " and " + std::to_string(ids.size()) + " indices");
  }
  BasicTensor<T> out(base.shape(), base.data());
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= base.dim(0)) {
      throw ShapeError("scatter_rows: index " + std::to_string(idx[r]) + " outside " + shape_str(base.shape()));
    }
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d));
  }
  if (any_requires_grad<T>({&base, &src})) {
    auto bn = base.node_ptr(), sn = src.node_ptr();
    record(out, [bn, sn, idx = std::move(idx), d](TensorNode<T>& self) {
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        std::vector<char> replaced(g.size() / std::max<std::size_t>(d, 1), 0);
        for (int i : idx) replaced[static_cast<std::size_t>(i)] = 1;
        for (std::size_t r = 0; r < replaced.size(); ++r) {
          if (replaced[r]) continue;
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r * d + j];
        }
      }
      if (sn->requires_grad) {
        auto& g = sn->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[static_cast<std::size_t>(idx[r]) * d + j];
        }
      }
    });
  }
  return out;
}

namespace detail {
inline void outer_inner(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == shape.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == shape[i];
    if (!ok) throw ShapeError("concat: shape mismatch " + shape_str(shape) + " vs " + shape_str(s));
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t outer = 0, inner = 0;
  detail::outer_inner(shape, axis, outer, inner);
  BasicTensor<T> out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner));
    }
    off += len;
  }
  bool need = false;
  if (grad_enabled<T>()) {
    for (const auto& p : parts) need = need || p.requires_grad();
  }
  if (need) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    record(out, [nodes, offsets, outer, inner, total, axis](TensorNode<T>& self) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto& n = *nodes[k];
        if (!n.requires_grad) continue;
        const std::size_t len = n.shape[axis];
        auto& g = n.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < len * inner; ++i) {
            g[o * len * inner + i] += self.grad[(o * total + offsets[k]) * inner + i];
          }
        }
      }
    });
  }
  return out;
}

/// Elements [begin, end) along `axis`.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(s));
  }
  Shape shape = s;
  shape[axis] = end - begin;
  std::size_t outer = 0, inner = 0;
  detail::outer_inner(s, axis, outer, inner);
  const std::size_t full = s[axis], len = end - begin;
  BasicTensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  }
  if (any_requires_grad<T>({&x})) {
    auto xn = x.node_ptr();
    record(out, [xn, outer, inner, full, len, begin](TensorNode<T>& self) {
      auto& g = xn->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < len * inner; ++i) g[(o * full + begin) * inner + i] += self.grad[o * len * inner + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence attention

/// Rotary position embedding applied per head to rows of x [T, H·dh].
template <typename T>
BasicTensor<T> rope(const BasicTensor<T>& x, std::span<const int> positions, std::size_t n_heads, T base = T(10000)) {
  detail::require_rank(x.shape(), 2, "rope");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (positions.size() != rows || n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0) {
    throw ShapeError("rope: incompatible input " + shape_str(x.shape()) + " with " + std::to_string(positions.size()) +
                     " positions and " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads, half = dh / 2;
  std::vector<T> cs(rows * half), sn(rows * half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const T freq = std::pow(base, -static_cast<T>(2 * i) / static_cast<T>(dh));
      const T ang = static_cast<T>(positions[r]) * freq;
      cs[r * half + i] = std::cos(ang);
      sn[r * half + i] = std::sin(ang);
    }
  }
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t o = r * d + h * dh;
      for (std::size_t i = 0; i < half; ++i) {
        const T a = x[o + 2 * i], b = x[o + 2 * i + 1];
        const T c = cs[r * half + i], s = sn[r * half + i];
        out[o + 2 * i] = a * c - b * s;
        out[o + 2 * i + 1] = a * s + b * c;
      }
    }
  }
  if (any_requires_grad<T>({&x})) {
    auto xn = x.node_ptr();
    record(out, [xn, cs = std::move(cs), sn = std::move(sn), rows, d, dh, half, n_heads](TensorNode<T>& self) {
      auto& g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t o = r * d + h * dh;
          for (std::size_t i = 0; i < half; ++i) {
            const T ga = self.grad[o + 2 * i], gb = self.grad[o + 2 * i + 1];
            const T c = cs[r * half + i], s = sn[r * half + i];
            g[o + 2 * i] += ga * c + gb * s;
            g[o + 2 * i + 1] += -ga * s + gb * c;
          }
        }
      }
    });
  }
  return out;
}

/// Contiguous row ranges [offsets[i], offsets[i+1]) of a packed batch.
struct Segments {
  std::vector<std::size_t> offsets{0};

  std::size_t count() const { return offsets.size() - 1; }
  std::size_t begin(std::size_t i) const { return offsets[i]; }
  std::size_t end(std::size_t i) const { return offsets[i + 1]; }
  std::size_t length(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  std::size_t total() const { return offsets.back(); }
  void push(std::size_t len) { offsets.push_back(offsets.back() + len); }
};

/// Multi-head causal self-attention independently inside each segment of
/// packed rows. q, k, v: [T, H·dh] → [T, H·dh].
template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                const Segments& segs, std::size_t n_heads) {
  detail::require_rank(q.shape(), 2, "causal_attention");
  detail::require_same(q.shape(), k.shape(), "causal_attention");
  detail::require_same(q.shape(), v.shape(), "causal_attention");
  const std::size_t rows = q.dim(0), d = q.dim(1);
  if (segs.total() != rows || n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("causal_attention: segments cover " + std::to_string(segs.total()) + " rows, input " +
                     shape_str(q.shape()) + ", heads " + std::to_string(n_heads));
  }
  const std::size_t dh = d / n_heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  // probabilities stored per (segment, head) as lower-triangular L×L blocks
  std::vector<std::size_t> pofs(segs.count() + 1, 0);
  for (std::size_t s = 0; s < segs.count(); ++s) pofs[s + 1] = pofs[s] + n_heads * segs.length(s) * segs.length(s);
  std::vector<T> probs(pofs.back(), T(0));
  BasicTensor<T> out(q.shape());
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  T* O = out.data().data();
  std::vector<T> row;
  for (std::size_t s = 0; s < segs.count(); ++s) {
    const std::size_t b = segs.begin(s), L = segs.length(s);
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* P = probs.data() + pofs[s] + h * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = Q + (b + i) * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = K + (b + j) * d + h * dh;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          P[i * L + j] = dot * sc;
          mx = std::max(mx, P[i * L + j]);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * L + j] = std::exp(P[i * L + j] - mx);
          z += P[i * L + j];
        }
        T* oi = O + (b + i) * d + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * L + j] /= z;
          const T p = P[i * L + j];
          const T* vj = V + (b + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  if (any_requires_grad<T>({&q, &k, &v})) {
    auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
    record(out, [qn, kn, vn, segs, probs = std::move(probs), pofs = std::move(pofs), d, dh, n_heads,
                 sc](TensorNode<T>& self) {
      const T* G = self.grad.data();
      const T* Q = qn->data.data();
      const T* K = kn->data.data();
      const T* V = vn->data.data();
      T* GQ = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
      T* GK = kn->requires_grad ? kn->grad_buffer().data() : nullptr;
      T* GV = vn->requires_grad ? vn->grad_buffer().data() : nullptr;
      std::vector<T> dp;
      for (std::size_t s = 0; s < segs.count(); ++s) {
        const std::size_t b = segs.begin(s), L = segs.length(s);
        dp.assign(L, T(0));
        for (std::size_t h = 0; h < n_heads; ++h) {
          const T* P = probs.data() + pofs[s] + h * L * L;
          for (std::size_t i = 0; i < L; ++i) {
            const T* gi = G + (b + i) * d + h * dh;
            T dot = 0;
            for (std::size_t j = 0; j <= i; ++j) {
              const T* vj = V + (b + j) * d + h * dh;
              T a = 0;
              for (std::size_t c = 0; c < dh; ++c) a += gi[c] * vj[c];
              dp[j] = a;
              dot += a * P[i * L + j];
              if (GV) {
                T* gvj = GV + (b + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) gvj[c] += P[i * L + j] * gi[c];
              }
            }
            const T* qi = Q + (b + i) * d + h * dh;
            for (std::size_t j = 0; j <= i; ++j) {
              const T ds = P[i * L + j] * (dp[j] - dot) * sc;
              if (ds == T(0)) continue;
              const T* kj = K + (b + j) * d + h * dh;
              if (GQ) {
                T* gqi = GQ + (b + i) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
              }
              if (GK) {
                T* gkj = GK + (b + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// One arc of a message-passing graph: rows of `src` send to `dst`, carrying
/// the features of edge slot `edge`.
struct Arc {
  int src = 0;
  int dst = 0;
  int edge = 0;
};

/// Token-level graph attention. Node tensors are [N·K, H·dh] (node-major,
/// token index minor); edge tensors are [E·K, H·dh]. For each destination
/// node i, token index t and head h, attention runs over arcs into i:
///   logit_a = q[i,t]·(k_node[src,t] + k_edge[e,t]) / √dh
///   out[i,t] = Σ_a softmax(logit)_a (v_node[src,t] + v_edge[e,t])
/// Token indices never mix. Nodes without incoming arcs get zero output.
/// When `weights_out` is given, it receives one probability per
/// (arc, token index, head), laid out [arc][t][h].
template <typename T>
BasicTensor<T> graph_attention(const BasicTensor<T>& q, const BasicTensor<T>& k_node, const BasicTensor<T>& v_node,
                               const BasicTensor<T>& k_edge, const BasicTensor<T>& v_edge, std::span<const Arc> arcs,
                               std::size_t tokens, std::size_t n_heads, std::vector<T>* weights_out = nullptr) {
  detail::require_rank(q.shape(), 2, "graph_attention");
  detail::require_same(q.shape(), k_node.shape(), "graph_attention");
  detail::require_same(q.shape(), v_node.shape(), "graph_attention");
  detail::require_same(k_edge.shape(), v_edge.shape(), "graph_attention");
  const std::size_t d = q.dim(1);
  if (tokens == 0 || q.dim(0) % tokens != 0 || k_edge.dim(1) != d || k_edge.dim(0) % tokens != 0 || n_heads == 0 ||
      d % n_heads != 0) {
    throw ShapeError("graph_attention: node " + shape_str(q.shape()) + " / edge " + shape_str(k_edge.shape()) +
                     " incompatible with " + std::to_string(tokens) + " tokens and " + std::to_string(n_heads) +
                     " heads");
  }
  const std::size_t n_nodes = q.dim(0) / tokens, n_edges = k_edge.dim(0) / tokens;
  const std::size_t dh = d / n_heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<std::vector<std::size_t>> incoming(n_nodes);
  for (std::size_t a = 0; a < arcs.size(); ++a) {
    const auto& arc = arcs[a];
    if (arc.src < 0 || arc.dst < 0 || arc.edge < 0 || static_cast<std::size_t>(arc.src) >= n_nodes ||
        static_cast<std::size_t>(arc.dst) >= n_nodes || static_cast<std::size_t>(arc.edge) >= n_edges) {
      throw ShapeError("graph_attention: arc " + std::to_string(a) + " references missing node or edge");
    }
    incoming[static_cast<std::size_t>(arc.dst)].push_back(a);
  }
  std::vector<Arc> arc_list(arcs.begin(), arcs.end());
  const std::size_t A = arc_list.size();
  std::vector<T> probs(A * tokens * n_heads, T(0));
  BasicTensor<T> out(q.shape());
  const T *Q = q.data().data(), *KN = k_node.data().data(), *VN = v_node.data().data();
  const T *KE = k_edge.data().data(), *VE = v_edge.data().data();
  T* O = out.data().data();
  std::vector<T> logits;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const auto& in = incoming[i];
    if (in.empty()) continue;
    logits.resize(in.size());
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t h = 0; h < n_heads; ++h) {
        const T* qi = Q + (i * tokens + t) * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t a = 0; a < in.size(); ++a) {
          const auto& arc = arc_list[in[a]];
          const T* kn = KN + (static_cast<std::size_t>(arc.src) * tokens + t) * d + h * dh;
          const T* ke = KE + (static_cast<std::size_t>(arc.edge) * tokens + t) * d + h * dh;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * (kn[c] + ke[c]);
          logits[a] = dot * sc;
          mx = std::max(mx, logits[a]);
        }
        T z = 0;
        for (auto& l : logits) {
          l = std::exp(l - mx);
          z += l;
        }
        T* oi = O + (i * tokens + t) * d + h * dh;
        for (std::size_t a = 0; a < in.size(); ++a) {
          const auto& arc = arc_list[in[a]];
          const T p = logits[a] / z;
          probs[(in[a] * tokens + t) * n_heads + h] = p;
          const T* vn = VN + (static_cast<std::size_t>(arc.src) * tokens + t) * d + h * dh;
          const T* ve = VE + (static_cast<std::size_t>(arc.edge) * tokens + t) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * (vn[c] + ve[c]);
        }
      }
    }
  }
  if (weights_out) *weights_out = probs;
  if (any_requires_grad<T>({&q, &k_node, &v_node, &k_edge, &v_edge})) {
    auto qn = q.node_ptr(), knn = k_node.node_ptr(), vnn = v_node.node_ptr();
    auto ken = k_edge.node_ptr(), ven = v_edge.node_ptr();
    record(out, [qn, knn, vnn, ken, ven, arc_list = std::move(arc_list), incoming = std::move(incoming),
                 probs = std::move(probs), tokens, n_heads, d, dh, sc, n_nodes](TensorNode<T>& self) {
      const T* G = self.grad.data();
      const T *Q = qn->data.data(), *KN = knn->data.data(), *VN = vnn->data.data();
      const T *KE = ken->data.data(), *VE = ven->data.data();
      T* GQ = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
      T* GKN = knn->requires_grad ? knn->grad_buffer().data() : nullptr;
      T* GVN = vnn->requires_grad ? vnn->grad_buffer().data() : nullptr;
      T* GKE = ken->requires_grad ? ken->grad_buffer().data() : nullptr;
      T* GVE = ven->requires_grad ? ven->grad_buffer().data() : nullptr;
      std::vector<T> dp;
      for (std::size_t i = 0; i < n_nodes; ++i) {
        const auto& in = incoming[i];
        if (in.empty()) continue;
        dp.resize(in.size());
        for (std::size_t t = 0; t < tokens; ++t) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* gi = G + (i * tokens + t) * d + h * dh;
            T dot = 0;
            for (std::size_t a = 0; a < in.size(); ++a) {
              const auto& arc = arc_list[in[a]];
              const std::size_t ns = (static_cast<std::size_t>(arc.src) * tokens + t) * d + h * dh;
              const std::size_t es = (static_cast<std::size_t>(arc.edge) * tokens + t) * d + h * dh;
              const T p = probs[(in[a] * tokens + t) * n_heads + h];
              T acc = 0;
              for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * (VN[ns + c] + VE[es + c]);
              dp[a] = acc;
              dot += p * acc;
              if (GVN) {
                for (std::size_t c = 0; c < dh; ++c) GVN[ns + c] += p * gi[c];
              }
              if (GVE) {
                for (std::size_t c = 0; c < dh; ++c) GVE[es + c] += p * gi[c];
              }
            }
            const std::size_t qs = (i * tokens + t) * d + h * dh;
            for (std::size_t a = 0; a < in.size(); ++a) {
              const auto& arc = arc_list[in[a]];
              const std::size_t ns = (static_cast<std::size_t>(arc.src) * tokens + t) * d + h * dh;
              const std::size_t es = (static_cast<std::size_t>(arc.edge) * tokens + t) * d + h * dh;
              const T p = probs[(in[a] * tokens + t) * n_heads + h];
              const T ds = p * (dp[a] - dot) * sc;
              if (GQ) {
                for (std::size_t c = 0; c < dh; ++c) GQ[qs + c] += ds * (KN[ns + c] + KE[es + c]);
              }
              if (GKN) {
                for (std::size_t c = 0; c < dh; ++c) GKN[ns + c] += ds * Q[qs + c];
              }
              if (GKE) {
                for (std::size_t c = 0; c < dh; ++c) GKE[es + c] += ds * Q[qs + c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace gofa::ops
