#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lacmfer/tensor.hpp"

namespace lacmfer {

/// Handle to a node in a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over 2-D tensors. Values are computed eagerly when a node
/// is recorded; backward() walks the tape in reverse creation order, which makes
/// gradient accumulation deterministic (two passes over the same graph are
/// bit-identical). Nodes live in a deque, so references returned by value()
/// stay valid while further nodes are recorded.
///
/// Broadcasting is limited to what the primitives need: the second operand of
/// add/sub/mul may be a (1x1) scalar or a (1xC) row vector against an (RxC)
/// left operand.
class Graph {
 public:
  /// Differentiable leaf (parameter or input being differentiated).
  Var leaf(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Non-differentiable node (data, masks, selector matrices).
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  /// Gradient of the last backward() root w.r.t. this node. Only nodes that
  /// require grad carry one.
  const Tensor& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!n.requires_grad) throw Error("grad: node does not require gradients");
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // --- primitive catalog ---

  Var add(Var a, Var b) { return add_like(a, b, +1.0, "add"); }
  Var sub(Var a, Var b) { return add_like(a, b, -1.0, "sub"); }

  Var scalar_mul(Var a, double c) {
    Tensor out = val(a);
    for (double& x : out.data) x *= c;
    return push(std::move(out), needs_grad(a), [ia = a.id, c](Graph& g, int self) {
      g.accumulate_scaled(ia, g.nodes_[self].grad.data, c);
    });
  }

  /// Elementwise product; b may be scalar or row-broadcast.
  Var mul(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    Broadcast mode = broadcast_mode(av, bv, "mul");
    Tensor out = av;
    apply_broadcast(out.data, av, bv, mode, [](double x, double y) { return x * y; });
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [ia = a.id, ib = b.id, mode](Graph& g, int self) {
                  const Tensor& gv = g.nodes_[self].grad;
                  const Tensor& av = g.nodes_[ia].value;
                  const Tensor& bv = g.nodes_[ib].value;
                  if (g.nodes_[ia].requires_grad) {
                    std::vector<double> ga(gv.data.size());
                    Tensor tmp = av;
                    g.apply_broadcast(ga, gv, bv, mode, [](double x, double y) { return x * y; });
                    g.accumulate(ia, ga);
                  }
                  if (g.nodes_[ib].requires_grad) {
                    // reduce g*a onto b's shape
                    std::vector<double> gb(bv.data.size(), 0.0);
                    std::size_t r = av.rows(), c = av.cols();
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) {
                        double t = gv.data[i * c + j] * av.data[i * c + j];
                        if (mode == Broadcast::kNone)
                          gb[i * c + j] += t;
                        else if (mode == Broadcast::kRow)
                          gb[j] += t;
                        else
                          gb[0] += t;
                      }
                    g.accumulate(ib, gb);
                  }
                });
  }

  Var matmul(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_2d(av, "matmul");
    require_2d(bv, "matmul");
    if (av.cols() != bv.rows())
      throw ShapeError("matmul: " + av.shape_str() + " vs " + bv.shape_str());
    std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double x = av.data[i * k + p];
        if (x == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += x * bv.data[p * n + j];
      }
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [ia = a.id, ib = b.id, m, k, n](Graph& g, int self) {
                  const std::vector<double>& gv = g.nodes_[self].grad.data;
                  const std::vector<double>& av = g.nodes_[ia].value.data;
                  const std::vector<double>& bv = g.nodes_[ib].value.data;
                  if (g.nodes_[ia].requires_grad) {
                    std::vector<double> ga(m * k, 0.0);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        double gij = gv[i * n + j];
                        if (gij == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[p * n + j];
                      }
                    g.accumulate(ia, ga);
                  }
                  if (g.nodes_[ib].requires_grad) {
                    std::vector<double> gb(k * n, 0.0);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double aip = av[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gv[i * n + j];
                      }
                    g.accumulate(ib, gb);
                  }
                });
  }

  Var transpose(Var a) {
    const Tensor& av = val(a);
    require_2d(av, "transpose");
    std::size_t r = av.rows(), c = av.cols();
    Tensor out = Tensor::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = av.data[i * c + j];
    return push(std::move(out), needs_grad(a), [ia = a.id, r, c](Graph& g, int self) {
      const std::vector<double>& gv = g.nodes_[self].grad.data;
      std::vector<double> ga(r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = gv[j * r + i];
      g.accumulate(ia, ga);
    });
  }

  /// Concatenate 2-D tensors along axis 0 (rows) or 1 (columns).
  Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    std::size_t fixed = axis == 0 ? val(parts[0]).cols() : val(parts[0]).rows();
    std::size_t total = 0;
    bool req = false;
    for (Var p : parts) {
      const Tensor& t = val(p);
      require_2d(t, "concat");
      std::size_t f = axis == 0 ? t.cols() : t.rows();
      if (f != fixed)
        throw ShapeError("concat: mismatched extents " + t.shape_str() + " vs " +
                         val(parts[0]).shape_str());
      total += axis == 0 ? t.rows() : t.cols();
      req = req || needs_grad(p);
    }
    std::size_t out_r = axis == 0 ? total : fixed;
    std::size_t out_c = axis == 0 ? fixed : total;
    Tensor out = Tensor::zeros({out_r, out_c});
    std::size_t off = 0;
    std::vector<int> ids;
    std::vector<std::size_t> offs;
    for (Var p : parts) {
      const Tensor& t = val(p);
      ids.push_back(p.id);
      offs.push_back(off);
      for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) {
          if (axis == 0)
            out.data[(off + i) * out_c + j] = t.data[i * t.cols() + j];
          else
            out.data[i * out_c + (off + j)] = t.data[i * t.cols() + j];
        }
      off += axis == 0 ? t.rows() : t.cols();
    }
    return push(std::move(out), req, [ids, offs, axis, out_c](Graph& g, int self) {
      const std::vector<double>& gv = g.nodes_[self].grad.data;
      for (std::size_t q = 0; q < ids.size(); ++q) {
        if (!g.nodes_[ids[q]].requires_grad) continue;
        const Tensor& t = g.nodes_[ids[q]].value;
        std::vector<double> ga(t.numel());
        for (std::size_t i = 0; i < t.rows(); ++i)
          for (std::size_t j = 0; j < t.cols(); ++j) {
            if (axis == 0)
              ga[i * t.cols() + j] = gv[(offs[q] + i) * out_c + j];
            else
              ga[i * t.cols() + j] = gv[i * out_c + (offs[q] + j)];
          }
        g.accumulate(ids[q], ga);
      }
    });
  }

  /// Column range [c0, c1) of a 2-D tensor.
  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& av = val(a);
    require_2d(av, "slice");
    if (c0 >= c1 || c1 > av.cols())
      throw ShapeError("slice: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") invalid for " + av.shape_str());
    std::size_t r = av.rows(), c = av.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({r, w});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = av.data[i * c + c0 + j];
    return push(std::move(out), needs_grad(a), [ia = a.id, r, c, c0, w](Graph& g, int self) {
      const std::vector<double>& gv = g.nodes_[self].grad.data;
      std::vector<double> ga(r * c, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * c + c0 + j] = gv[i * w + j];
      g.accumulate(ia, ga);
    });
  }

  /// relu'(0) is defined as 0.
  Var relu(Var a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  }
  Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
  }
  Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
  }
  /// sqrt adjoint at exactly 0 is defined as 0 (deterministic subgradient,
  /// same convention as relu).
  Var sqrt(Var a) {
    return unary(a, [](double x) { return std::sqrt(x); },
                 [](double x, double y) { return x == 0.0 ? 0.0 : 0.5 / y; });
  }
  /// abs adjoint at 0 is 0.
  Var abs(Var a) {
    return unary(a, [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  }

  Var sum(Var a) {
    const Tensor& av = val(a);
    double s = 0.0;
    for (double x : av.data) s += x;
    return push(Tensor::scalar(s), needs_grad(a), [ia = a.id](Graph& g, int self) {
      double gs = g.nodes_[self].grad.data[0];
      std::vector<double> ga(g.nodes_[ia].value.numel(), gs);
      g.accumulate(ia, ga);
    });
  }

  Var mean(Var a) {
    const Tensor& av = val(a);
    if (av.numel() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double x : av.data) s += x;
    double inv = 1.0 / static_cast<double>(av.numel());
    return push(Tensor::scalar(s * inv), needs_grad(a), [ia = a.id, inv](Graph& g, int self) {
      double gs = g.nodes_[self].grad.data[0] * inv;
      std::vector<double> ga(g.nodes_[ia].value.numel(), gs);
      g.accumulate(ia, ga);
    });
  }

  /// Row-wise softmax of a (BxK) tensor, computed with max subtraction.
  Var softmax(Var a) {
    const Tensor& av = val(a);
    require_2d(av, "softmax");
    std::size_t r = av.rows(), c = av.cols();
    if (c == 0) throw ShapeError("softmax: zero columns");
    Tensor out = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      double mx = av.data[i * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, av.data[i * c + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        double e = std::exp(av.data[i * c + j] - mx);
        out.data[i * c + j] = e;
        z += e;
      }
      for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] /= z;
    }
    return push(std::move(out), needs_grad(a), [ia = a.id, r, c](Graph& g, int self) {
      const std::vector<double>& gv = g.nodes_[self].grad.data;
      const std::vector<double>& p = g.nodes_[self].value.data;
      std::vector<double> ga(r * c);
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gv[i * c + j] * p[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          ga[i * c + j] = p[i * c + j] * (gv[i * c + j] - dot);
      }
      g.accumulate(ia, ga);
    });
  }

  /// Scalar Euclidean norm over all entries; adjoint at the origin is 0.
  Var l2_norm(Var a) {
    const Tensor& av = val(a);
    double s = 0.0;
    for (double x : av.data) s += x * x;
    double norm = std::sqrt(s);
    return push(Tensor::scalar(norm), needs_grad(a), [ia = a.id, norm](Graph& g, int self) {
      double gs = g.nodes_[self].grad.data[0];
      const std::vector<double>& x = g.nodes_[ia].value.data;
      std::vector<double> ga(x.size(), 0.0);
      if (norm > 0.0)
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] = gs * x[i] / norm;
      g.accumulate(ia, ga);
    });
  }

  /// Reverse pass from a scalar root. Resets all gradients first.
  void backward(Var root) {
    const Node& rn = nodes_[check(root)];
    if (rn.value.numel() != 1)
      throw ShapeError("backward: root must be scalar, got " + rn.value.shape_str());
    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad = Tensor::zeros(n.value.shape);
      }
    }
    if (!rn.requires_grad) return;
    nodes_[root.id].grad.data[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backprop) n.backprop(*this, i);
    }
  }

 private:
  enum class Broadcast { kNone, kRow, kScalar };

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backprop;
  };

  std::deque<Node> nodes_;

  int check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw Error("invalid graph handle");
    return v.id;
  }
  const Tensor& val(Var v) const { return nodes_[check(v)].value; }
  bool needs_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  static void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
  }

  Var push(Tensor value, bool req, std::function<void(Graph&, int)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = req;
    if (req) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) const {
    require_2d(a, op);
    require_2d(b, op);
    if (a.same_shape(b)) return Broadcast::kNone;
    if (b.numel() == 1) return Broadcast::kScalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
    throw ShapeError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
  }

  template <class F>
  void apply_broadcast(std::vector<double>& out, const Tensor& a, const Tensor& b,
                       Broadcast mode, F f) const {
    std::size_t r = a.rows(), c = a.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double bv = mode == Broadcast::kNone ? b.data[i * c + j]
                    : mode == Broadcast::kRow ? b.data[j]
                                              : b.data[0];
        out[i * c + j] = f(a.data[i * c + j], bv);
      }
  }

  Var add_like(Var a, Var b, double sign, const char* op) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    Broadcast mode = broadcast_mode(av, bv, op);
    Tensor out = av;
    apply_broadcast(out.data, av, bv, mode, [sign](double x, double y) { return x + sign * y; });
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [ia = a.id, ib = b.id, sign, mode](Graph& g, int self) {
                  const Tensor& gv = g.nodes_[self].grad;
                  if (g.nodes_[ia].requires_grad) g.accumulate(ia, gv.data);
                  if (g.nodes_[ib].requires_grad) {
                    const Tensor& bval = g.nodes_[ib].value;
                    std::vector<double> gb(bval.numel(), 0.0);
                    std::size_t r = gv.rows(), c = gv.cols();
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) {
                        double t = sign * gv.data[i * c + j];
                        if (mode == Broadcast::kNone)
                          gb[i * c + j] += t;
                        else if (mode == Broadcast::kRow)
                          gb[j] += t;
                        else
                          gb[0] += t;
                      }
                    g.accumulate(ib, gb);
                  }
                });
  }

  template <class FwdF, class AdjF>
  Var unary(Var a, FwdF fwd, AdjF adj) {
    const Tensor& av = val(a);
    Tensor out = av;
    for (double& x : out.data) x = fwd(x);
    return push(std::move(out), needs_grad(a), [ia = a.id, adj](Graph& g, int self) {
      const std::vector<double>& gv = g.nodes_[self].grad.data;
      const std::vector<double>& x = g.nodes_[ia].value.data;
      const std::vector<double>& y = g.nodes_[self].value.data;
      std::vector<double> ga(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] = gv[i] * adj(x[i], y[i]);
      g.accumulate(ia, ga);
    });
  }

  void accumulate(int id, const std::vector<double>& contrib) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    for (std::size_t i = 0; i < contrib.size(); ++i) n.grad.data[i] += contrib[i];
  }
  void accumulate_scaled(int id, const std::vector<double>& contrib, double c) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    for (std::size_t i = 0; i < contrib.size(); ++i) n.grad.data[i] += c * contrib[i];
  }
};

/// Names of the differentiable primitives the graph provides.
inline const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {
      "add",  "sub", "scalar_mul", "mul",  "matmul", "transpose", "concat",  "slice",
      "relu", "exp", "log",        "sqrt", "sum",    "mean",      "softmax", "l2_norm",
      "abs"};
  return names;
}

}  // namespace lacmfer
