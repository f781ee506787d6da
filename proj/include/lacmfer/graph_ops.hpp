#pragma once

#include <vector>

#include "lacmfer/autograd.hpp"

namespace lacmfer {

// Compositions over the primitive catalog. These carry exact adjoints by
// construction, so everything built from them stays finite-difference checkable.

inline Var ones_const(Graph& g, std::size_t r, std::size_t c) {
  return g.constant(Tensor::full({r, c}, 1.0));
}

/// Row sums of an (RxC) tensor as an (Rx1) column.
inline Var row_sums(Graph& g, Var x) {
  return g.matmul(x, ones_const(g, g.value(x).cols(), 1));
}

/// Column sums as a (1xC) row.
inline Var col_sums(Graph& g, Var x) {
  return g.matmul(ones_const(g, 1, g.value(x).rows()), x);
}

/// Gathers rows by index via a constant selector matrix; adjoints scatter back.
inline Var row_gather(Graph& g, Var x, const std::vector<int>& idx) {
  std::size_t b = g.value(x).rows();
  Tensor sel = Tensor::zeros({idx.size(), b});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= b)
      throw IndexError("row_gather: index " + std::to_string(idx[i]) + " out of range");
    sel.at(i, static_cast<std::size_t>(idx[i])) = 1.0;
  }
  return g.matmul(g.constant(std::move(sel)), x);
}

/// Single entry (r,c) as a (1x1) scalar node.
inline Var pick(Graph& g, Var m, std::size_t r, std::size_t c) {
  const Tensor& v = g.value(m);
  Tensor mask = Tensor::zeros(v.shape);
  mask.at(r, c) = 1.0;
  return g.sum(g.mul(m, g.constant(std::move(mask))));
}

/// 1/x elementwise for strictly positive x, as exp(-log x).
inline Var reciprocal(Graph& g, Var x) {
  return g.exp(g.scalar_mul(g.log(x), -1.0));
}

/// Squared Euclidean distances between rows of a (Bx d) and b (Bt x d),
/// clamped at 0 to absorb rounding for near-coincident rows.
inline Var pairwise_sqdist(Graph& g, Var a, Var b) {
  std::size_t ra = g.value(a).rows(), rb = g.value(b).rows();
  Var na = row_sums(g, g.mul(a, a));                       // (ra x 1)
  Var nb = row_sums(g, g.mul(b, b));                       // (rb x 1)
  Var cross = g.matmul(a, g.transpose(b));                 // (ra x rb)
  Var d = g.add(g.add(g.matmul(na, ones_const(g, 1, rb)),
                      g.matmul(ones_const(g, ra, 1), g.transpose(nb))),
                g.scalar_mul(cross, -2.0));
  return g.relu(d);
}

/// max(log p, -30), the clamp used by every cross-entropy in the project.
inline Var clamped_log(Graph& g, Var p) {
  Var shifted = g.add(g.log(p), g.constant_scalar(30.0));
  return g.sub(g.relu(shifted), g.constant_scalar(30.0));
}

/// Per-row cross-entropy -log p[label] against integer labels, as a (Bx1) column.
inline Var ce_rows(Graph& g, Var probs, const std::vector<int>& labels) {
  const Tensor& p = g.value(probs);
  if (labels.size() != p.rows())
    throw ShapeError("ce_rows: " + std::to_string(labels.size()) + " labels for " +
                     p.shape_str());
  Tensor onehot = Tensor::zeros(p.shape);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= p.cols())
      throw IndexError("ce_rows: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(p.cols()) + " classes");
    onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  Var picked = row_sums(g, g.mul(clamped_log(g, probs), g.constant(std::move(onehot))));
  return g.scalar_mul(picked, -1.0);
}

/// Lowest-index argmax of a value row.
inline std::size_t argmax_row(const Tensor& t, std::size_t row) {
  std::size_t c = t.cols(), best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (t.at(row, j) > t.at(row, best)) best = j;
  return best;
}

inline double max_row(const Tensor& t, std::size_t row) {
  return t.at(row, argmax_row(t, row));
}

}  // namespace lacmfer
