#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "tape/numcore/linalg.hpp"
#include "tape/numcore/ops.hpp"
#include "tape/numcore/tensor.hpp"

// Reverse-mode differentiation over Tensor values.
//
// A Graph owns every node created by the ops below. Nodes are appended in
// evaluation order, so the node list is already a topological order and
// backward() is a single reverse sweep.
namespace tape::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* g = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

class Graph {
 public:
  // Receives the gradient flowing into this node; pushes into parents via accumulate().
  using BackwardFn = std::function<void(Graph&, const Tensor&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, nullptr, "leaf"});
    return Var{this, nodes_.size() - 1};
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op node; `fn` is kept only if some parent needs a gradient.
  Var record(Tensor value, const char* op, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p, op);
      needs = needs || nodes_[p.id].requires_grad;
    }
    needs = needs && recording_;
    nodes_.push_back(Node{std::move(value), Tensor(), needs, needs ? std::move(fn) : nullptr, op});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // While false, ops compute values only (inference mode).
  void set_recording(bool on) noexcept { recording_ = on; }
  bool recording() const noexcept { return recording_; }

  void accumulate(std::size_t id, Tensor g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!g.all_finite()) {
      throw NumericError(std::string("non-finite gradient produced in backward of op '") + current_op_ +
                         "'");
    }
    if (g.shape() != n.value.shape()) {
      throw DimensionError(std::string("gradient shape ") + shape_str(g.shape()) +
                           " does not match node shape " + shape_str(n.value.shape()) +
                           " (op " + n.op + ")");
    }
    if (n.grad.size() == 0) {
      n.grad = std::move(g);
    } else {
      auto dst = n.grad.data_mut();
      const auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  /// Gradient of the last backward() output with respect to `v`; zeros if
  /// `v` did not contribute.
  Tensor grad(Var v) const {
    check_owner(v, "grad");
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Tensor::zeros(n.value.shape());
    return n.grad;
  }

  /// Seeds d(out)/d(out) = 1 and sweeps the graph in reverse. Intermediate
  /// gradients are released as soon as they have been propagated.
  void backward(Var out) {
    check_owner(out, "backward");
    if (nodes_[out.id].value.size() != 1) {
      throw ContractError("backward: output must be scalar, got shape " +
                          shape_str(nodes_[out.id].value.shape()));
    }
    if (!nodes_[out.id].requires_grad) return;
    accumulate(out.id, Tensor(nodes_[out.id].value.shape(), 1.0));
    for (std::size_t id = out.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.fn || n.grad.size() == 0) continue;
      current_op_ = n.op;
      Tensor g = std::move(n.grad);
      n.grad = Tensor();
      n.fn(*this, g);
    }
    current_op_ = "backward";
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor();
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    BackwardFn fn;
    const char* op;
  };

  void check_owner(Var v, const char* op) const {
    if (v.g != this || v.id >= nodes_.size()) {
      throw ContractError(std::string("variable from another graph passed to ") + op);
    }
  }

  std::vector<Node> nodes_;
  bool recording_ = true;
  const char* current_op_ = "backward";
};

inline const Tensor& Var::value() const { return g->value(id); }

// Disables recording for the lifetime of the guard.
class NoGradGuard {
 public:
  explicit NoGradGuard(Graph& g) : g_(g), prev_(g.recording()) { g_.set_recording(false); }
  ~NoGradGuard() { g_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph& g_;
  bool prev_;
};

namespace detail {

inline Graph& same_graph(Var a, Var b, const char* op) {
  if (a.g != b.g || a.g == nullptr) {
    throw ContractError(std::string("operands of ") + op + " belong to different graphs");
  }
  return *a.g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "add");
  return g.record(tape::add(a.value(), b.value()), "add", {a, b},
                  [a, b](Graph& gr, const Tensor& go) {
                    gr.accumulate(a.id, sum_to_shape(go, a.shape()));
                    gr.accumulate(b.id, sum_to_shape(go, b.shape()));
                  });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "sub");
  return g.record(tape::sub(a.value(), b.value()), "sub", {a, b},
                  [a, b](Graph& gr, const Tensor& go) {
                    gr.accumulate(a.id, sum_to_shape(go, a.shape()));
                    gr.accumulate(b.id, sum_to_shape(tape::scale(go, -1.0), b.shape()));
                  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "mul");
  return g.record(tape::mul(a.value(), b.value()), "mul", {a, b},
                  [a, b](Graph& gr, const Tensor& go) {
                    if (gr.requires_grad(a.id))
                      gr.accumulate(a.id, sum_to_shape(tape::mul(go, b.value()), a.shape()));
                    if (gr.requires_grad(b.id))
                      gr.accumulate(b.id, sum_to_shape(tape::mul(go, a.value()), b.shape()));
                  });
}

inline Var scale(Var a, double s) {
  return a.g->record(tape::scale(a.value(), s), "scale", {a},
                     [a, s](Graph& gr, const Tensor& go) { gr.accumulate(a.id, tape::scale(go, s)); });
}

inline Var exp(Var a) {
  Tensor y = map(a.value(), [](double v) { return std::exp(v); });
  return a.g->record(y, "exp", {a}, [a, y](Graph& gr, const Tensor& go) {
    gr.accumulate(a.id, tape::mul(go, y));
  });
}

inline Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return a.g->record(map(a.value(), [](double v) { return std::log(v); }), "log", {a},
                     [a](Graph& gr, const Tensor& go) {
                       gr.accumulate(a.id, tape::detail::broadcast_binary(go, a.value(),
                                                                    [](double g, double x) { return g / x; }));
                     });
}

inline Var relu(Var a) {
  return a.g->record(map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), "relu", {a},
                     [a](Graph& gr, const Tensor& go) {
                       gr.accumulate(a.id, tape::detail::broadcast_binary(go, a.value(), [](double g, double x) {
                                       return x > 0.0 ? g : 0.0;
                                     }));
                     });
}

// Exact (erf) GeLU.
inline Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double kInvSqrt2Pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  Tensor y = map(a.value(), [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return a.g->record(std::move(y), "gelu", {a}, [a, kInvSqrt2Pi](Graph& gr, const Tensor& go) {
    gr.accumulate(a.id, tape::detail::broadcast_binary(go, a.value(), [kInvSqrt2Pi](double g, double x) {
                    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    return g * (cdf + x * pdf);
                  }));
  });
}

// ---------------------------------------------------------------------------
// Products

/// y = x W over the last axis of x; leading axes are flattened into rows.
/// With `transpose_w` the weight is stored (out, in), as for tied heads.
inline Var linear(Var x, Var w, bool transpose_w = false) {
  Graph& g = detail::same_graph(x, w, "linear");
  const Shape& xs = x.shape();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xs.empty()) {
    throw DimensionError("linear: bad shapes " + shape_str(xs) + " and " + shape_str(wv.shape()));
  }
  const std::size_t in = transpose_w ? wv.dim(1) : wv.dim(0);
  const std::size_t out = transpose_w ? wv.dim(0) : wv.dim(1);
  if (xs.back() != in) {
    throw DimensionError("linear: input " + shape_str(xs) + " does not match weight " +
                         shape_str(wv.shape()));
  }
  const std::size_t rows = x.value().size() / in;
  std::vector<double> y(rows * out, 0.0);
  kernel::gemm_acc(false, transpose_w, rows, out, in, x.value().data().data(), in,
                   wv.data().data(), transpose_w ? in : out, y.data(), out);
  Shape ys = xs;
  ys.back() = out;
  return g.record(Tensor::from_raw(ys, std::move(y)), "linear", {x, w},
                  [x, w, rows, in, out, transpose_w](Graph& gr, const Tensor& go) {
                    const double* gp = go.data().data();
                    if (gr.requires_grad(x.id)) {
                      // dx = go * op(W)^T
                      std::vector<double> dx(rows * in, 0.0);
                      kernel::gemm_acc(false, !transpose_w, rows, in, out, gp, out,
                                       w.value().data().data(), transpose_w ? in : out, dx.data(), in);
                      gr.accumulate(x.id, Tensor::from_raw(x.shape(), std::move(dx)));
                    }
                    if (gr.requires_grad(w.id)) {
                      std::vector<double> dw(in * out, 0.0);
                      if (!transpose_w) {
                        // dW = x^T go   (in x out)
                        kernel::gemm_acc(true, false, in, out, rows, x.value().data().data(), in, gp,
                                         out, dw.data(), out);
                      } else {
                        // dW = go^T x   (out x in)
                        kernel::gemm_acc(true, false, out, in, rows, gp, out, x.value().data().data(),
                                         in, dw.data(), in);
                      }
                      gr.accumulate(w.id, Tensor::from_raw(w.shape(), std::move(dw)));
                    }
                  });
}

/// Batched op(a) op(b) over the last two axes, leading axes broadcast.
inline Var bmm(Var a, Var b, bool trans_a = false, bool trans_b = false) {
  Graph& g = detail::same_graph(a, b, "bmm");
  return g.record(tape::bmm(a.value(), b.value(), trans_a, trans_b), "bmm", {a, b},
                  [a, b, trans_a, trans_b](Graph& gr, const Tensor& go) {
                    const Tensor& av = a.value();
                    const Tensor& bv = b.value();
                    if (gr.requires_grad(a.id)) {
                      Tensor da = trans_a ? tape::bmm(bv, go, trans_b, true)
                                          : tape::bmm(go, bv, false, !trans_b);
                      gr.accumulate(a.id, sum_to_shape(da, av.shape()));
                    }
                    if (gr.requires_grad(b.id)) {
                      Tensor db = trans_b ? tape::bmm(go, av, true, trans_a)
                                          : tape::bmm(av, go, !trans_a, false);
                      gr.accumulate(b.id, sum_to_shape(db, bv.shape()));
                    }
                  });
}

/// y[..., r] = sum_l a[..., l] e[..., l, r]: one row-vector times matrix per
/// leading index. Leading axes must match exactly.
inline Var vecmat(Var a, Var e) {
  Graph& g = detail::same_graph(a, e, "vecmat");
  const Shape& as = a.shape();
  const Shape& es = e.shape();
  if (as.empty() || es.size() != as.size() + 1 || !std::equal(as.begin(), as.end() - 1, es.begin()) ||
      es[es.size() - 2] != as.back()) {
    throw DimensionError("vecmat: shapes " + shape_str(as) + " and " + shape_str(es) + " do not match");
  }
  const std::size_t L = as.back(), R = es.back();
  const std::size_t n = a.value().size() / L;
  std::vector<double> y(n * R, 0.0);
  {
    const double* ap = a.value().data().data();
    const double* ep = e.value().data().data();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t l = 0; l < L; ++l) {
        const double x = ap[t * L + l];
        const double* row = ep + (t * L + l) * R;
        for (std::size_t r = 0; r < R; ++r) y[t * R + r] += x * row[r];
      }
  }
  Shape ys = as;
  ys.back() = R;
  return g.record(Tensor::from_raw(ys, std::move(y)), "vecmat", {a, e},
                  [a, e, n, L, R](Graph& gr, const Tensor& go) {
                    const double* ap = a.value().data().data();
                    const double* ep = e.value().data().data();
                    const double* gp = go.data().data();
                    if (gr.requires_grad(a.id)) {
                      std::vector<double> da(n * L, 0.0);
                      for (std::size_t t = 0; t < n; ++t)
                        for (std::size_t l = 0; l < L; ++l) {
                          double s = 0.0;
                          for (std::size_t r = 0; r < R; ++r) s += gp[t * R + r] * ep[(t * L + l) * R + r];
                          da[t * L + l] = s;
                        }
                      gr.accumulate(a.id, Tensor::from_raw(a.shape(), std::move(da)));
                    }
                    if (gr.requires_grad(e.id)) {
                      std::vector<double> de(n * L * R);
                      for (std::size_t t = 0; t < n; ++t)
                        for (std::size_t l = 0; l < L; ++l)
                          for (std::size_t r = 0; r < R; ++r)
                            de[(t * L + l) * R + r] = ap[t * L + l] * gp[t * R + r];
                      gr.accumulate(e.id, Tensor::from_raw(e.shape(), std::move(de)));
                    }
                  });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

inline Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshape(std::move(shape));
  return a.g->record(std::move(y), "reshape", {a}, [a](Graph& gr, const Tensor& go) {
    gr.accumulate(a.id, go.reshape(a.shape()));
  });
}

inline Var permute(Var a, std::vector<std::size_t> axes) {
  Tensor y = tape::permute(a.value(), axes);
  return a.g->record(std::move(y), "permute", {a}, [a, axes](Graph& gr, const Tensor& go) {
    gr.accumulate(a.id, tape::permute(go, inverse_axes(axes)));
  });
}

inline Var sum_axis(Var a, std::size_t axis) {
  const std::size_t len = a.dim(axis);
  return a.g->record(tape::sum_axis(a.value(), axis), "sum_axis", {a},
                     [a, axis, len](Graph& gr, const Tensor& go) {
                       gr.accumulate(a.id, expand_axis(go, axis, len));
                     });
}

inline Var expand(Var a, std::size_t axis, std::size_t count) {
  return a.g->record(expand_axis(a.value(), axis, count), "expand", {a},
                     [a, axis](Graph& gr, const Tensor& go) {
                       gr.accumulate(a.id, tape::sum_axis(go, axis));
                     });
}

inline Var sum(Var a) {
  return a.g->record(Tensor::scalar(tape::sum(a.value())), "sum", {a},
                     [a](Graph& gr, const Tensor& go) {
                       gr.accumulate(a.id, Tensor(a.shape(), go.item()));
                     });
}

inline Var mean(Var a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return scale(sum(a), inv);
}

/// Rows of `table` (V, C) picked by `ids`; result shape lead + (C).
inline Var gather_rows(Var table, const std::vector<std::size_t>& ids, Shape lead) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw DimensionError("gather_rows: table must be rank 2, got " + shape_str(t.shape()));
  if (shape_numel(lead) != ids.size()) throw DimensionError("gather_rows: id count does not match shape");
  const std::size_t V = t.dim(0), C = t.dim(1);
  std::vector<double> y(ids.size() * C);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= V) {
      throw ContractError("gather_rows: id " + std::to_string(ids[k]) + " out of range for " +
                          std::to_string(V) + " rows");
    }
    std::copy_n(t.data().data() + ids[k] * C, C, y.data() + k * C);
  }
  lead.push_back(C);
  return table.g->record(Tensor::from_raw(lead, std::move(y)), "gather_rows", {table},
                         [table, ids, C](Graph& gr, const Tensor& go) {
                           Tensor d = Tensor::zeros(table.shape());
                           auto dp = d.data_mut();
                           for (std::size_t k = 0; k < ids.size(); ++k)
                             for (std::size_t c = 0; c < C; ++c) dp[ids[k] * C + c] += go[k * C + c];
                           gr.accumulate(table.id, std::move(d));
                         });
}

// ---------------------------------------------------------------------------
// Fused layers

/// Softmax over the last axis restricted to mask != 0 (mask broadcast).
inline Var masked_softmax(Var x, const Tensor& mask, bool allow_empty_rows = false) {
  Tensor y = tape::masked_softmax(x.value(), mask, x.value().rank() - 1, allow_empty_rows);
  return x.g->record(y, "masked_softmax", {x}, [x, y](Graph& gr, const Tensor& go) {
    const std::size_t len = y.shape().back();
    const std::size_t rows = y.size() / len;
    std::vector<double> dx(y.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * len;
      double dot = 0.0;
      for (std::size_t l = 0; l < len; ++l) dot += go[base + l] * y[base + l];
      for (std::size_t l = 0; l < len; ++l) dx[base + l] = y[base + l] * (go[base + l] - dot);
    }
    gr.accumulate(x.id, Tensor::from_raw(x.shape(), std::move(dx)));
  });
}

/// LayerNorm over the last axis with affine gamma, beta (both shape (C)).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Shape& xs = x.shape();
  const std::size_t C = xs.back();
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw DimensionError("layer_norm: affine parameters must have shape (" + std::to_string(C) + ")");
  }
  const std::size_t rows = x.value().size() / C;
  std::vector<double> xhat(x.value().size()), y(x.value().size()), rstd(rows);
  const auto xv = x.value().data();
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += row[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(C);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (row[c] - mu) * rstd[r];
      y[r * C + c] = xhat[r * C + c] * gv[c] + bv[c];
    }
  }
  Graph& g = *x.g;
  return g.record(Tensor::from_raw(xs, std::move(y)), "layer_norm", {x, gamma, beta},
                  [x, gamma, beta, C, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Graph& gr, const Tensor& go) {
                    const auto gv = gamma.value().data();
                    if (gr.requires_grad(x.id)) {
                      std::vector<double> dx(rows * C);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                          const double dxh = go[r * C + c] * gv[c];
                          s1 += dxh;
                          s2 += dxh * xhat[r * C + c];
                        }
                        s1 /= static_cast<double>(C);
                        s2 /= static_cast<double>(C);
                        for (std::size_t c = 0; c < C; ++c) {
                          const double dxh = go[r * C + c] * gv[c];
                          dx[r * C + c] = rstd[r] * (dxh - s1 - xhat[r * C + c] * s2);
                        }
                      }
                      gr.accumulate(x.id, Tensor::from_raw(x.shape(), std::move(dx)));
                    }
                    if (gr.requires_grad(gamma.id) || gr.requires_grad(beta.id)) {
                      std::vector<double> dg(C, 0.0), db(C, 0.0);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < C; ++c) {
                          dg[c] += go[r * C + c] * xhat[r * C + c];
                          db[c] += go[r * C + c];
                        }
                      gr.accumulate(gamma.id, Tensor::from_raw({C}, std::move(dg)));
                      gr.accumulate(beta.id, Tensor::from_raw({C}, std::move(db)));
                    }
                  });
}

/// Weighted softmax cross-entropy over the last axis of `logits`:
///   sum_k w_k * -log softmax(logits_k)[target_k] / sum_k w_k
/// Positions with zero weight contribute nothing (and get zero gradient).
/// Returns 0 if every weight is zero.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& targets,
                         const std::vector<double>& weights) {
  const std::size_t V = logits.shape().back();
  const std::size_t rows = logits.value().size() / V;
  if (targets.size() != rows || weights.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows but " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(weights.size()) + " weights");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ContractError("cross_entropy: negative weight");
    wsum += w;
  }
  const double norm = wsum > 0.0 ? 1.0 / wsum : 0.0;
  std::vector<double> prob(logits.value().size(), 0.0);
  double loss = 0.0;
  const auto lv = logits.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0) continue;
    if (targets[r] >= V) throw ContractError("cross_entropy: target out of range");
    const double* row = lv.data() + r * V;
    double mx = row[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      prob[r * V + v] = std::exp(row[v] - mx);
      z += prob[r * V + v];
    }
    for (std::size_t v = 0; v < V; ++v) prob[r * V + v] /= z;
    loss += weights[r] * (std::log(z) + mx - row[targets[r]]);
  }
  return logits.g->record(Tensor::scalar(loss * norm), "cross_entropy", {logits},
                          [logits, targets, weights, prob = std::move(prob), norm, V, rows](
                              Graph& gr, const Tensor& go) {
                            const double s = go.item() * norm;
                            std::vector<double> d(rows * V, 0.0);
                            for (std::size_t r = 0; r < rows; ++r) {
                              if (weights[r] == 0.0) continue;
                              const double w = s * weights[r];
                              for (std::size_t v = 0; v < V; ++v) d[r * V + v] = w * prob[r * V + v];
                              d[r * V + targets[r]] -= w;
                            }
                            gr.accumulate(logits.id, Tensor::from_raw(logits.shape(), std::move(d)));
                          });
}

}  // namespace tape::ad
