#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lacmfer/graph_ops.hpp"

namespace lacmfer {

/// Cross-view consistency variants selectable for the beta slot of the
/// training objective.
enum class ConsistencyMode { kMcc, kKl, kL1, kMse };

inline ConsistencyMode consistency_mode_from_string(const std::string& s) {
  if (s == "mcc") return ConsistencyMode::kMcc;
  if (s == "kl") return ConsistencyMode::kKl;
  if (s == "l1") return ConsistencyMode::kL1;
  if (s == "mse") return ConsistencyMode::kMse;
  throw ConfigError("consistency_mode: unknown mode '" + s + "'");
}

inline std::string to_string(ConsistencyMode m) {
  switch (m) {
    case ConsistencyMode::kMcc: return "mcc";
    case ConsistencyMode::kKl: return "kl";
    case ConsistencyMode::kL1: return "l1";
    case ConsistencyMode::kMse: return "mse";
  }
  return "?";
}

/// Multi-view prediction consistency matrix: P_G' * P_L over a target batch.
/// Entries are non-negative and sum to the batch size.
inline Var mpc_g(Graph& g, Var p_g, Var p_l) {
  const Tensor& a = g.value(p_g);
  const Tensor& b = g.value(p_l);
  if (a.cols() != b.cols() || a.rows() != b.rows())
    throw ShapeError("mpc: " + a.shape_str() + " vs " + b.shape_str());
  return g.matmul(g.transpose(p_g), p_l);
}

inline Tensor mpc(const Tensor& p_g, const Tensor& p_l) {
  Graph g;
  return g.value(mpc_g(g, g.constant(p_g), g.constant(p_l)));
}

namespace detail {

/// Column-normalizes the entrywise-absolute matrix; all-zero columns stay zero.
/// Zero column sums get a +1 constant before the reciprocal, which leaves
/// those (all-zero) columns untouched and keeps log off zero.
inline Var column_normalized_abs(Graph& g, Var m) {
  Var a = g.abs(m);
  Var sums = col_sums(g, a);  // (1 x K)
  const Tensor& sv = g.value(sums);
  Tensor adjust = Tensor::zeros(sv.shape);
  for (std::size_t j = 0; j < sv.cols(); ++j)
    if (sv.at(0, j) == 0.0) adjust.at(0, j) = 1.0;
  Var safe = g.add(sums, g.constant(std::move(adjust)));
  return g.mul(a, reciprocal(g, safe));  // row-broadcast column scaling
}

}  // namespace detail

/// Multi-view clustering consistency loss:
/// (S(||M||-I) + S(||M'||-I)) / (2K) with column normalization and S the sum
/// of absolute entries. Zero iff both normalized matrices equal the identity.
inline Var mcc_loss_g(Graph& g, Var m, int num_classes) {
  const Tensor& mv = g.value(m);
  if (mv.rows() != static_cast<std::size_t>(num_classes) || mv.cols() != mv.rows())
    throw ShapeError("mcc_loss: matrix " + mv.shape_str() + " is not " +
                     std::to_string(num_classes) + "x" + std::to_string(num_classes));
  Var eye = g.constant(Tensor::identity(static_cast<std::size_t>(num_classes)));
  Var s1 = g.sum(g.abs(g.sub(detail::column_normalized_abs(g, m), eye)));
  Var s2 = g.sum(g.abs(g.sub(detail::column_normalized_abs(g, g.transpose(m)), eye)));
  return g.scalar_mul(g.add(s1, s2), 1.0 / (2.0 * static_cast<double>(num_classes)));
}

inline double mcc_loss(const Tensor& m, int num_classes) {
  Graph g;
  return g.value(mcc_loss_g(g, g.constant(m), num_classes)).scalar_value();
}

/// Consistency between the two branches' predictions under the selected mode.
/// kl is the symmetrised KL divergence (half the sum of both directions),
/// l1/mse are means over all entries, mcc goes through the MPC matrix.
inline Var consistency_loss_g(Graph& g, Var p_g, Var p_l, ConsistencyMode mode) {
  const Tensor& a = g.value(p_g);
  const Tensor& b = g.value(p_l);
  if (!a.same_shape(b))
    throw ShapeError("consistency_loss: " + a.shape_str() + " vs " + b.shape_str());
  switch (mode) {
    case ConsistencyMode::kMcc:
      return mcc_loss_g(g, mpc_g(g, p_g, p_l), static_cast<int>(a.cols()));
    case ConsistencyMode::kKl: {
      // 0.5*(KL(p||q)+KL(q||p)) = 0.5*sum((p-q)*(log p - log q)), per-sample mean
      Var diff = g.sub(p_g, p_l);
      Var logdiff = g.sub(clamped_log(g, p_g), clamped_log(g, p_l));
      return g.scalar_mul(g.sum(g.mul(diff, logdiff)), 0.5 / static_cast<double>(a.rows()));
    }
    case ConsistencyMode::kL1:
      return g.mean(g.abs(g.sub(p_g, p_l)));
    case ConsistencyMode::kMse: {
      Var d = g.sub(p_g, p_l);
      return g.mean(g.mul(d, d));
    }
  }
  throw ConfigError("consistency_loss: unknown mode");
}

inline double consistency_loss(const Tensor& p_g, const Tensor& p_l, ConsistencyMode mode) {
  Graph g;
  return g.value(consistency_loss_g(g, g.constant(p_g), g.constant(p_l), mode)).scalar_value();
}

/// Multi-view vote: a sample passes iff both branches agree on the argmax and
/// at least one branch's confidence exceeds tau. Pseudo labels are one-hot at
/// the agreed argmax and are treated as constants downstream.
struct VoteResult {
  std::vector<bool> passed;
  std::vector<int> label;  // agreed argmax; valid where passed
  int pass_count = 0;
};

inline VoteResult vote(const Tensor& p_g, const Tensor& p_l, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau: must be in (0,1]");
  if (!p_g.same_shape(p_l))
    throw ShapeError("vote: " + p_g.shape_str() + " vs " + p_l.shape_str());
  VoteResult r;
  r.passed.resize(p_g.rows());
  r.label.resize(p_g.rows(), -1);
  for (std::size_t i = 0; i < p_g.rows(); ++i) {
    std::size_t ag = argmax_row(p_g, i);
    std::size_t al = argmax_row(p_l, i);
    bool ok = ag == al && (p_g.at(i, ag) > tau || p_l.at(i, al) > tau);
    r.passed[i] = ok;
    if (ok) {
      r.label[i] = static_cast<int>(ag);
      ++r.pass_count;
    }
  }
  return r;
}

/// Multi-view voting loss: cross-entropy of both branches against the voted
/// pseudo labels, summed over passing samples and divided by the full batch
/// size. Returns nullopt when no sample passes (contribution 0).
inline std::optional<Var> mvv_loss_g(Graph& g, Var p_g, Var p_l, const VoteResult& votes) {
  const Tensor& pv = g.value(p_g);
  if (votes.passed.size() != pv.rows())
    throw ShapeError("mvv_loss: vote result of size " + std::to_string(votes.passed.size()) +
                     " for batch " + pv.shape_str());
  if (votes.pass_count == 0) return std::nullopt;
  std::vector<int> idx;
  std::vector<int> labels;
  for (std::size_t i = 0; i < votes.passed.size(); ++i)
    if (votes.passed[i]) {
      idx.push_back(static_cast<int>(i));
      labels.push_back(votes.label[i]);
    }
  Var ce_g = g.sum(ce_rows(g, row_gather(g, p_g, idx), labels));
  Var ce_l = g.sum(ce_rows(g, row_gather(g, p_l, idx), labels));
  return g.scalar_mul(g.add(ce_g, ce_l), 1.0 / static_cast<double>(pv.rows()));
}

inline double mvv_loss(const Tensor& p_g, const Tensor& p_l, const VoteResult& votes) {
  Graph g;
  std::optional<Var> l = mvv_loss_g(g, g.constant(p_g), g.constant(p_l), votes);
  return l ? g.value(*l).scalar_value() : 0.0;
}

/// Separate pseudo labeling: each branch independently self-trains on its own
/// confident predictions; per-branch sums are divided by the full batch size.
/// The ablation alternative to the voting loss.
inline std::optional<Var> spl_loss_g(Graph& g, Var p_g, Var p_l, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau: must be in (0,1]");
  const Tensor& a = g.value(p_g);
  Var total;
  bool have = false;
  for (Var p : {p_g, p_l}) {
    const Tensor& pv = g.value(p);
    std::vector<int> idx;
    std::vector<int> labels;
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      std::size_t am = argmax_row(pv, i);
      if (pv.at(i, am) > tau) {
        idx.push_back(static_cast<int>(i));
        labels.push_back(static_cast<int>(am));
      }
    }
    if (idx.empty()) continue;
    Var ce = g.scalar_mul(g.sum(ce_rows(g, row_gather(g, p, idx), labels)),
                          1.0 / static_cast<double>(a.rows()));
    total = have ? g.add(total, ce) : ce;
    have = true;
  }
  if (!have) return std::nullopt;
  return total;
}

inline double spl_loss(const Tensor& p_g, const Tensor& p_l, double tau) {
  Graph g;
  std::optional<Var> l = spl_loss_g(g, g.constant(p_g), g.constant(p_l), tau);
  return l ? g.value(*l).scalar_value() : 0.0;
}

}  // namespace lacmfer
