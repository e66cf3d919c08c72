// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "dkctx/numerics/tape.hpp"

// Differentiable operations over Var. Each op computes its forward value
// with the plain kernels and records a backward closure when any input
// needs a gradient.

namespace dkctx {

namespace detail {

inline Tape& same_tape(std::initializer_list<Var> vs, const char* op) {
  Tape* t = vs.begin()->tape;
  for (Var v : vs)
    if (v.tape != t) throw Error(std::string(op) + ": operands recorded on different tapes");
  return *t;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) { kernels::require_same(a, b, op); }

inline bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rank() == 2 && a.rank() == 2 && b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
}

}  // namespace detail

/// a + b. b may be a single row broadcast over the rows of a (bias add).
inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (detail::is_row_broadcast(av, bv)) {
    Tensor y = av;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bv(0, j);
    return t.push(std::move(y), t.any_needs_grad({a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
      const Tensor& g = tp.upstream(self);
      tp.accumulate(a, g);
      Tensor gb = Tensor::zeros(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      tp.accumulate(b, gb);
    });
  }
  Tensor y = kernels::add(av, bv);
  return t.push(std::move(y), t.any_needs_grad({a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  return t.push(kernels::scale(a.value(), c), t.needs_grad(a), [a = a.id, c](Tape& tp, std::size_t self) {
    tp.accumulate(a, kernels::scale(tp.upstream(self), c));
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

/// a - b, same broadcasting rule as add.
inline Var sub(Var a, Var b) { return add(a, neg(b)); }

/// Elementwise product of equal-shaped operands.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "mul");
  detail::check_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return t.push(std::move(y), t.any_needs_grad({a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor ga = g, gb = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= tp.value(b)[i];
      gb[i] *= tp.value(a)[i];
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

/// Scales row i of a [n x m] by w(i, 0) where w is [n x 1].
inline Var scale_rows(Var a, Var w) {
  Tape& t = detail::same_tape({a, w}, "scale_rows");
  const Tensor& av = a.value();
  const Tensor& wv = w.value();
  if (wv.rows() != av.rows() || wv.cols() != 1)
    throw ShapeError("scale_rows: shape " + shape_str(av.shape()) + " incompatible with " + shape_str(wv.shape()));
  Tensor y = av;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) *= wv(i, 0);
  return t.push(std::move(y), t.any_needs_grad({a, w}), [a = a.id, w = w.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& av = tp.value(a);
    const Tensor& wv = tp.value(w);
    Tensor ga = g;
    Tensor gw = Tensor::zeros(wv.rows(), 1);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) {
        ga(i, j) *= wv(i, 0);
        gw(i, 0) += g(i, j) * av(i, j);
      }
    tp.accumulate(a, ga);
    tp.accumulate(w, gw);
  });
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "matmul");
  return t.push(kernels::matmul(a.value(), b.value()), t.any_needs_grad({a, b}),
                [a = a.id, b = b.id](Tape& tp, std::size_t self) {
                  const Tensor& g = tp.upstream(self);
                  if (tp.needs_grad(Var{&tp, a})) tp.accumulate(a, kernels::matmul_nt(g, tp.value(b)));
                  if (tp.needs_grad(Var{&tp, b})) tp.accumulate(b, kernels::matmul_tn(tp.value(a), g));
                });
}

/// a b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "matmul_nt");
  return t.push(kernels::matmul_nt(a.value(), b.value()), t.any_needs_grad({a, b}),
                [a = a.id, b = b.id](Tape& tp, std::size_t self) {
                  const Tensor& g = tp.upstream(self);
                  if (tp.needs_grad(Var{&tp, a})) tp.accumulate(a, kernels::matmul(g, tp.value(b)));
                  if (tp.needs_grad(Var{&tp, b})) tp.accumulate(b, kernels::matmul_tn(g, tp.value(a)));
                });
}

/// x W + b for x [n x in], W [in x out], b [1 x out].
inline Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = *parts.front().tape;
  std::vector<const Tensor*> vals;
  std::vector<std::size_t> ids, widths;
  bool needs = false;
  for (Var p : parts) {
    if (p.tape != &t) throw Error("concat: operands recorded on different tapes");
    vals.push_back(&p.value());
    ids.push_back(p.id);
    widths.push_back(p.cols());
    needs = needs || t.needs_grad(p);
  }
  Tensor y = kernels::concat_cols(vals);
  return t.push(std::move(y), needs, [ids, widths](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(Var{&tp, ids[k]})) {
        Tensor gk = Tensor::zeros(g.rows(), widths[k]);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk(i, j) = g(i, off + j);
        tp.accumulate(ids[k], gk);
      }
      off += widths[k];
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t m = parts.front().cols();
  std::size_t total = 0;
  bool needs = false;
  std::vector<std::size_t> ids, heights;
  for (Var p : parts) {
    if (p.cols() != m)
      throw ShapeError("concat_rows: shape " + shape_str(parts.front().value().shape()) + " incompatible with " +
                       shape_str(p.value().shape()));
    total += p.rows();
    ids.push_back(p.id);
    heights.push_back(p.rows());
    needs = needs || t.needs_grad(p);
  }
  Tensor y = Tensor::zeros(total, m);
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), y.values().begin() + off * m);
    off += p.rows();
  }
  return t.push(std::move(y), needs, [ids, heights, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(Var{&tp, ids[k]})) {
        Tensor gk = Tensor::zeros(heights[k], m);
        std::copy(g.values().begin() + off * m, g.values().begin() + (off + heights[k]) * m, gk.values().begin());
        tp.accumulate(ids[k], gk);
      }
      off += heights[k];
    }
  });
}

/// Columns [begin, end).
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_str(av.shape()));
  Tensor y = Tensor::zeros(av.rows(), end - begin);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) y(i, j - begin) = av(i, j);
  Tape& t = *a.tape;
  return t.push(std::move(y), t.needs_grad(a), [a = a.id, begin, end](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor ga(tp.value(a).shape());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = begin; j < end; ++j) ga(i, j) = g(i, j - begin);
    tp.accumulate(a, ga);
  });
}

/// Rows of a selected by index (repeats allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  const Tensor& av = a.value();
  const std::size_t m = av.cols();
  Tensor y = Tensor::zeros(idx.size(), m);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.rows())
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of " + shape_str(av.shape()));
    std::copy_n(av.values().begin() + idx[i] * m, m, y.values().begin() + i * m);
  }
  Tape& t = *a.tape;
  return t.push(std::move(y), t.needs_grad(a), [a = a.id, idx = std::move(idx), m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor ga(tp.value(a).shape());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) ga(idx[i], j) += g(i, j);
    tp.accumulate(a, ga);
  });
}

/// Output has `rows` rows; row idx[i] accumulates row i of a.
inline Var scatter_add_rows(Var a, std::vector<std::size_t> idx, std::size_t rows) {
  const Tensor& av = a.value();
  if (idx.size() != av.rows())
    throw ShapeError("scatter_add_rows: " + std::to_string(idx.size()) + " indices for " + shape_str(av.shape()));
  const std::size_t m = av.cols();
  Tensor y = Tensor::zeros(rows, m);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw ShapeError("scatter_add_rows: index " + std::to_string(idx[i]) + " >= " + std::to_string(rows));
    for (std::size_t j = 0; j < m; ++j) y(idx[i], j) += av(i, j);
  }
  Tape& t = *a.tape;
  return t.push(std::move(y), t.needs_grad(a), [a = a.id, idx = std::move(idx), m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor ga(tp.value(a).shape());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) ga(i, j) = g(idx[i], j);
    tp.accumulate(a, ga);
  });
}

/// Row i comes from a when take_a[i], else from b.
inline Var row_select(const std::vector<bool>& take_a, Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "row_select");
  detail::check_same_shape(a.value(), b.value(), "row_select");
  if (take_a.size() != a.rows()) throw ShapeError("row_select: mask length mismatch with " + shape_str(a.value().shape()));
  Tensor y = b.value();
  const std::size_t m = y.cols();
  for (std::size_t i = 0; i < take_a.size(); ++i)
    if (take_a[i])
      for (std::size_t j = 0; j < m; ++j) y(i, j) = a.value()(i, j);
  return t.push(std::move(y), t.any_needs_grad({a, b}), [a = a.id, b = b.id, take_a](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (take_a[i] ? ga : gb)(i, j) = g(i, j);
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

namespace detail {

// Elementwise op given value and derivative as functions of (x, y).
template <typename F, typename D>
Var unary(Var a, F f, D df) {
  Tape& t = *a.tape;
  Tensor y(a.value().shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(a.value()[i]);
  return t.push(std::move(y), t.needs_grad(a), [a = a.id, df](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(self);
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * df(x[i], y[i]);
    tp.accumulate(a, ga);
  });
}

}  // namespace detail

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// tanh approximation of GELU.
inline Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

/// Row-wise softmax; masked-out columns receive exactly zero weight.
inline Var softmax_rows(Var a, const std::vector<bool>* col_mask = nullptr) {
  Tape& t = *a.tape;
  Tensor y = kernels::softmax_rows(a.value(), col_mask);
  return t.push(std::move(y), t.needs_grad(a), [a = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(a, ga);
  });
}

/// Softmax of a column vector [E x 1] within groups: entries sharing
/// segment id s are normalized together. Every segment id must be < segments.
inline Var segment_softmax(Var a, std::vector<std::size_t> seg, std::size_t segments) {
  const Tensor& av = a.value();
  if (av.cols() != 1 || seg.size() != av.rows())
    throw ShapeError("segment_softmax: expected [" + std::to_string(seg.size()) + "x1], got " + shape_str(av.shape()));
  std::vector<double> mx(segments, -INFINITY), z(segments, 0.0);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] >= segments) throw ShapeError("segment_softmax: segment id out of range");
    mx[seg[i]] = std::max(mx[seg[i]], av(i, 0));
  }
  Tensor y(av.shape());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    y(i, 0) = std::exp(av(i, 0) - mx[seg[i]]);
    z[seg[i]] += y(i, 0);
  }
  for (std::size_t i = 0; i < seg.size(); ++i) y(i, 0) /= z[seg[i]];
  Tape& t = *a.tape;
  return t.push(std::move(y), t.needs_grad(a), [a = a.id, seg = std::move(seg), segments](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    std::vector<double> dot(segments, 0.0);
    for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += g(i, 0) * y(i, 0);
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < seg.size(); ++i) ga(i, 0) = y(i, 0) * (g(i, 0) - dot[seg[i]]);
    tp.accumulate(a, ga);
  });
}

/// Sum of all elements, as a [1 x 1].
inline Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.push(Tensor::scalar(s), t.needs_grad(a), [a = a.id](Tape& tp, std::size_t self) {
    Tensor ga(tp.value(a).shape(), tp.upstream(self)[0]);
    tp.accumulate(a, ga);
  });
}

inline Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor " + shape_str(a.value().shape()));
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// L2 norm of each row, [n x 1]. The gradient at a zero row is zero.
inline Var row_norm(Var a) {
  const Tensor& av = a.value();
  Tensor y = Tensor::zeros(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) y(i, 0) = l2_norm(av.row_span(i));
  Tape& t = *a.tape;
  return t.push(std::move(y), t.needs_grad(a), [a = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(self);
    Tensor ga(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (y(i, 0) == 0.0) continue;
      for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = g(i, 0) * x(i, j) / y(i, 0);
    }
    tp.accumulate(a, ga);
  });
}

/// Per-row layer normalization with learned gain and bias ([1 x m] each).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
  Tape& t = detail::same_tape({x, gamma, beta}, "layer_norm");
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  if (gamma.value().cols() != m || beta.value().cols() != m)
    throw ShapeError("layer_norm: shape " + shape_str(xv.shape()) + " incompatible with " +
                     shape_str(gamma.value().shape()));
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += xv(i, j);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
  }
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y(i, j) = xhat(i, j) * gamma.value()(0, j) + beta.value()(0, j);
  return t.push(std::move(y), t.any_needs_grad({x, gamma, beta}),
                [x = x.id, g_id = gamma.id, b_id = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& tp, std::size_t self) {
                  const Tensor& g = tp.upstream(self);
                  const Tensor& gam = tp.value(g_id);
                  const std::size_t n = g.rows(), m = g.cols();
                  Tensor gg = Tensor::zeros(1, m), gb = Tensor::zeros(1, m), gx(g.shape());
                  for (std::size_t i = 0; i < n; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                      gg(0, j) += g(i, j) * xhat(i, j);
                      gb(0, j) += g(i, j);
                      const double dxh = g(i, j) * gam(0, j);
                      s1 += dxh;
                      s2 += dxh * xhat(i, j);
                    }
                    for (std::size_t j = 0; j < m; ++j) {
                      const double dxh = g(i, j) * gam(0, j);
                      gx(i, j) = inv_std[i] / static_cast<double>(m) *
                                 (static_cast<double>(m) * dxh - s1 - xhat(i, j) * s2);
                    }
                  }
                  tp.accumulate(x, gx);
                  tp.accumulate(g_id, gg);
                  tp.accumulate(b_id, gb);
                });
}

/// Mean softmax cross-entropy of logits [n x C] against class targets.
inline Var cross_entropy(Var logits, std::vector<std::size_t> targets) {
  const Tensor& lv = logits.value();
  if (targets.size() != lv.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + shape_str(lv.shape()));
  if (targets.empty()) throw ShapeError("cross_entropy: no rows");
  Tensor p = kernels::softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= lv.cols()) throw ShapeError("cross_entropy: target out of range");
    double mx = -INFINITY;
    for (std::size_t j = 0; j < lv.cols(); ++j) mx = std::max(mx, lv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < lv.cols(); ++j) z += std::exp(lv(i, j) - mx);
    loss += std::log(z) + mx - lv(i, targets[i]);
  }
  const double n = static_cast<double>(targets.size());
  Tape& t = *logits.tape;
  return t.push(Tensor::scalar(loss / n), t.needs_grad(logits),
                [l = logits.id, p = std::move(p), targets = std::move(targets), n](Tape& tp, std::size_t self) {
                  const double g = tp.upstream(self)[0];
                  Tensor gl = p;
                  for (std::size_t i = 0; i < targets.size(); ++i) gl(i, targets[i]) -= 1.0;
                  tp.accumulate(l, kernels::scale(gl, g / n));
                });
}

/// Mean binary cross-entropy with logits over all elements; targets in {0,1}.
inline Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& lv = logits.value();
  kernels::require_same(lv, targets, "bce_with_logits");
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double x = lv[i], y = targets[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x y
    loss += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
  }
  const double n = static_cast<double>(lv.size());
  Tape& t = *logits.tape;
  return t.push(Tensor::scalar(loss / n), t.needs_grad(logits), [l = logits.id, targets, n](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    const Tensor& x = tp.value(l);
    Tensor gl(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gl[i] = (1.0 / (1.0 + std::exp(-x[i])) - targets[i]) * g / n;
    tp.accumulate(l, gl);
  });
}

}  // namespace dkctx
