#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <tuple>
#include <vector>

#include "lacmfer/graph_ops.hpp"

namespace lacmfer {

/// Mixture-of-Gaussians kernel. Per evaluation, the base bandwidth is the
/// median pairwise squared distance over the union of the two batches
/// (fallback 1.0 when the median is not positive), and one Gaussian
/// k(x,y) = exp(-|x-y|^2 / (2*base*mult)) is averaged per multiplier.
struct KernelConfig {
  std::vector<double> bandwidth_multipliers = {0.25, 0.5, 1.0, 2.0, 4.0};

  void validate() const {
    if (bandwidth_multipliers.empty())
      throw ConfigError("kernel.bandwidth_multipliers: need at least one multiplier");
    for (double m : bandwidth_multipliers)
      if (!(m > 0.0)) throw ConfigError("kernel.bandwidth_multipliers: must be positive");
  }
};

/// A batch prepared for alignment: features, simplex weights over the unmasked
/// samples, per-sample class attribute (real label for sources, pseudo label
/// for the target) and the reliability mask.
struct WeightedBatchFeatures {
  Tensor features;               // (B x d)
  std::vector<double> weights;   // simplex over unmasked samples
  std::vector<int> class_attr;   // in [0, K)
  std::vector<bool> reliable;    // participation mask
  bool is_target = false;
  int domain_id = -1;
};

namespace detail {

/// Index zeroed by the hardness measure: the real class for source samples,
/// otherwise the lowest-index maximum.
inline std::size_t hardness_zero_index(const Tensor& probs, std::size_t row,
                                       std::optional<int> real_class) {
  if (real_class) {
    if (*real_class < 0 || static_cast<std::size_t>(*real_class) >= probs.cols())
      throw IndexError("hardness: real_class " + std::to_string(*real_class) +
                       " out of range for " + std::to_string(probs.cols()) + " classes");
    return static_cast<std::size_t>(*real_class);
  }
  return argmax_row(probs, row);
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t q = v.size();
  if (q == 0) return 0.0;
  return q % 2 == 1 ? v[q / 2] : 0.5 * (v[q / 2 - 1] + v[q / 2]);
}

}  // namespace detail

/// Instantaneous hardness of one prediction row: zero the known/most likely
/// entry, then take the Euclidean norm of what remains.
inline double hardness(const std::vector<double>& p_row, std::optional<int> real_class) {
  Tensor t = Tensor::row(p_row);
  std::size_t zi = detail::hardness_zero_index(t, 0, real_class);
  double s = 0.0;
  for (std::size_t j = 0; j < p_row.size(); ++j)
    if (j != zi) s += p_row[j] * p_row[j];
  return std::sqrt(s);
}

/// Normalizes hardness values to a simplex; uniform fallback when all are zero.
inline std::vector<double> relative_weights(const std::vector<double>& omega) {
  if (omega.empty()) throw EmptyBatchError("relative_weights: empty batch");
  double total = 0.0;
  for (double w : omega) {
    if (w < 0.0) throw ConfigError("relative_weights: negative hardness");
    total += w;
  }
  std::vector<double> h(omega.size());
  if (total == 0.0) {
    std::fill(h.begin(), h.end(), 1.0 / static_cast<double>(omega.size()));
  } else {
    for (std::size_t i = 0; i < omega.size(); ++i) h[i] = omega[i] / total;
  }
  return h;
}

// --- graph-level building blocks ---

/// Batch hardness as a (Bx1) column. The zeroed positions come from values
/// (or labels) and are held constant; the surviving entries stay differentiable.
inline Var hardness_g(Graph& g, Var probs, const std::vector<int>* real_class) {
  const Tensor& pv = g.value(probs);
  if (real_class && real_class->size() != pv.rows())
    throw ShapeError("hardness: " + std::to_string(real_class->size()) + " labels for " +
                     pv.shape_str());
  Tensor mask = Tensor::full(pv.shape, 1.0);
  for (std::size_t i = 0; i < pv.rows(); ++i) {
    std::optional<int> rc;
    if (real_class) rc = (*real_class)[i];
    mask.at(i, detail::hardness_zero_index(pv, i, rc)) = 0.0;
  }
  Var masked = g.mul(probs, g.constant(std::move(mask)));
  return g.sqrt(row_sums(g, g.mul(masked, masked)));
}

/// Omega -> simplex weights on the graph; constant uniform fallback when the
/// total is exactly zero.
inline Var simplex_weights_g(Graph& g, Var omega) {
  const Tensor& ov = g.value(omega);
  if (ov.numel() == 0) throw EmptyBatchError("simplex_weights: empty batch");
  double total = 0.0;
  for (double v : ov.data) total += v;
  if (total == 0.0)
    return g.constant(Tensor::full(ov.shape, 1.0 / static_cast<double>(ov.numel())));
  return g.mul(omega, reciprocal(g, g.sum(omega)));
}

inline Var uniform_weights_g(Graph& g, std::size_t n) {
  return g.constant(Tensor::full({n, 1}, 1.0 / static_cast<double>(n)));
}

/// Median pairwise squared distance over the union of both batches, as a graph
/// node so the bandwidth stays differentiable. d_ss/d_tt contribute their upper
/// triangles, d_st all entries. Constant 1.0 when the median is not positive.
inline Var median_bandwidth_g(Graph& g, Var d_ss, Var d_tt, Var d_st) {
  struct Cand {
    double v;
    int block;
    std::size_t r, c;
  };
  std::vector<Cand> cands;
  const Tensor& ss = g.value(d_ss);
  const Tensor& tt = g.value(d_tt);
  const Tensor& st = g.value(d_st);
  for (std::size_t i = 0; i < ss.rows(); ++i)
    for (std::size_t j = i + 1; j < ss.cols(); ++j) cands.push_back({ss.at(i, j), 0, i, j});
  for (std::size_t i = 0; i < tt.rows(); ++i)
    for (std::size_t j = i + 1; j < tt.cols(); ++j) cands.push_back({tt.at(i, j), 1, i, j});
  for (std::size_t i = 0; i < st.rows(); ++i)
    for (std::size_t j = 0; j < st.cols(); ++j) cands.push_back({st.at(i, j), 2, i, j});
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return std::tie(a.v, a.block, a.r, a.c) < std::tie(b.v, b.block, b.r, b.c);
  });
  std::size_t q = cands.size();
  auto block_var = [&](int b) { return b == 0 ? d_ss : b == 1 ? d_tt : d_st; };
  auto value_at = [&](std::size_t k) { return cands[k].v; };
  double median = q == 0 ? 0.0
                  : q % 2 == 1 ? value_at(q / 2)
                               : 0.5 * (value_at(q / 2 - 1) + value_at(q / 2));
  if (!(median > 0.0)) return g.constant_scalar(1.0);
  if (q % 2 == 1) {
    const Cand& m = cands[q / 2];
    return pick(g, block_var(m.block), m.r, m.c);
  }
  const Cand& lo = cands[q / 2 - 1];
  const Cand& hi = cands[q / 2];
  return g.scalar_mul(
      g.add(pick(g, block_var(lo.block), lo.r, lo.c), pick(g, block_var(hi.block), hi.r, hi.c)),
      0.5);
}

/// Squared RKHS distance between the weighted mean embeddings of two batches,
/// expanded by the kernel trick: w_s'K_ss w_s + w_t'K_tt w_t - 2 w_s'K_st w_t.
inline Var weighted_mmd_g(Graph& g, Var feats_s, Var weights_s, Var feats_t, Var weights_t,
                          const KernelConfig& kernel) {
  kernel.validate();
  const Tensor& fs = g.value(feats_s);
  const Tensor& ft = g.value(feats_t);
  if (fs.cols() != ft.cols())
    throw ShapeError("weighted_mmd: feature dims " + fs.shape_str() + " vs " + ft.shape_str());
  if (fs.rows() == 0 || ft.rows() == 0)
    throw EmptyBatchError("weighted_mmd: empty batch");

  Var d_ss = pairwise_sqdist(g, feats_s, feats_s);
  Var d_tt = pairwise_sqdist(g, feats_t, feats_t);
  Var d_st = pairwise_sqdist(g, feats_s, feats_t);
  Var inv_base = reciprocal(g, median_bandwidth_g(g, d_ss, d_tt, d_st));

  auto kernel_mean = [&](Var d) {
    Var acc;
    const auto& mults = kernel.bandwidth_multipliers;
    for (std::size_t m = 0; m < mults.size(); ++m) {
      Var k = g.exp(g.scalar_mul(g.mul(d, g.scalar_mul(inv_base, 1.0 / (2.0 * mults[m]))), -1.0));
      acc = m == 0 ? k : g.add(acc, k);
    }
    return g.scalar_mul(acc, 1.0 / static_cast<double>(mults.size()));
  };
  auto quad = [&](Var wl, Var k, Var wr) {
    return g.matmul(g.matmul(g.transpose(wl), k), wr);
  };
  Var t_ss = quad(weights_s, kernel_mean(d_ss), weights_s);
  Var t_tt = quad(weights_t, kernel_mean(d_tt), weights_t);
  Var t_st = quad(weights_s, kernel_mean(d_st), weights_t);
  return g.add(g.add(t_ss, t_tt), g.scalar_mul(t_st, -2.0));
}

/// Weights of a cluster, renormalized to a simplex within the cluster
/// (uniform when the cluster's weight mass is exactly zero).
inline Var cluster_weights_g(Graph& g, Var weights, const std::vector<int>& idx) {
  Var sub = row_gather(g, weights, idx);
  double total = 0.0;
  for (double v : g.value(sub).data) total += v;
  if (total == 0.0)
    return g.constant(Tensor::full({idx.size(), 1}, 1.0 / static_cast<double>(idx.size())));
  return g.mul(sub, reciprocal(g, g.sum(sub)));
}

struct ClusterAlignment {
  std::optional<Var> loss;
  int contributing_classes = 0;
};

/// Per class k: pull the source cluster toward same-labelled target samples and
/// push it from the differently-labelled pool; average over classes that
/// contributed at least one term. May be negative.
inline ClusterAlignment cluster_alignment_g(Graph& g, Var feats_s, Var weights_s,
                                            const std::vector<int>& src_labels, Var feats_t,
                                            Var weights_t, const std::vector<int>& tgt_pseudo,
                                            const KernelConfig& kernel, int num_classes) {
  ClusterAlignment result;
  Var acc;
  bool have = false;
  for (int k = 0; k < num_classes; ++k) {
    std::vector<int> src_idx;
    for (std::size_t i = 0; i < src_labels.size(); ++i)
      if (src_labels[i] == k) src_idx.push_back(static_cast<int>(i));
    if (src_idx.empty()) continue;
    std::vector<int> same_idx, diff_idx;
    for (std::size_t i = 0; i < tgt_pseudo.size(); ++i)
      (tgt_pseudo[i] == k ? same_idx : diff_idx).push_back(static_cast<int>(i));

    bool contributed = false;
    Var sf = row_gather(g, feats_s, src_idx);
    Var sw = cluster_weights_g(g, weights_s, src_idx);
    if (!same_idx.empty()) {
      Var term = weighted_mmd_g(g, sf, sw, row_gather(g, feats_t, same_idx),
                                cluster_weights_g(g, weights_t, same_idx), kernel);
      acc = have ? g.add(acc, term) : term;
      have = true;
      contributed = true;
    }
    if (!diff_idx.empty()) {
      Var term = weighted_mmd_g(g, sf, sw, row_gather(g, feats_t, diff_idx),
                                cluster_weights_g(g, weights_t, diff_idx), kernel);
      Var neg = g.scalar_mul(term, -1.0);
      acc = have ? g.add(acc, neg) : neg;
      have = true;
      contributed = true;
    }
    if (contributed) ++result.contributing_classes;
  }
  if (have)
    result.loss = g.scalar_mul(acc, 1.0 / static_cast<double>(result.contributing_classes));
  return result;
}

// --- full inter-domain loss ---

struct InterOptions {
  double lambda = 0.02;
  double epsilon = 0.4;
  bool epsilon_filter = true;     // when off, every sample participates
  bool hardness_weighting = true; // when off, uniform weights (traditional MMD)
  KernelConfig kernel;
  int num_classes = 0;
};

struct InterDiagnostics {
  std::array<double, 2> sid = {0.0, 0.0};  // summed over sources; [global, local]
  std::array<double, 2> cid = {0.0, 0.0};
  int skipped_terms = 0;
  std::array<int, 2> target_survivors = {0, 0};
  std::vector<std::array<int, 2>> source_survivors;  // per source
};

/// One branch of one batch on the graph.
struct AlignBranch {
  Var feats;
  Var probs;
};

struct AlignSource {
  std::array<AlignBranch, 2> branch;  // [global, local]
  std::vector<int> labels;
};

struct AlignTarget {
  std::array<AlignBranch, 2> branch;
};

namespace detail {

inline std::vector<int> reliable_rows(const Tensor& probs, const InterOptions& opt) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    if (!opt.epsilon_filter || max_row(probs, i) > opt.epsilon)
      idx.push_back(static_cast<int>(i));
  return idx;
}

}  // namespace detail

/// Sum over sources of the sample-level terms plus lambda times the
/// cluster-level terms, both branches, with reliability masking and weights
/// recomputed on the survivors. Skipped terms contribute nothing and are
/// counted in the diagnostics. Returns nullopt when every term was skipped.
inline std::optional<Var> inter_domain_loss_g(Graph& g, const std::vector<AlignSource>& sources,
                                              const AlignTarget& target, const InterOptions& opt,
                                              InterDiagnostics* diag = nullptr) {
  if (sources.empty()) throw EmptyBatchError("inter_domain_loss: no source batches");
  if (opt.num_classes < 2) throw ConfigError("inter_domain_loss: num_classes must be >= 2");
  InterDiagnostics local_diag;
  InterDiagnostics& d = diag ? *diag : local_diag;
  d.source_survivors.assign(sources.size(), {0, 0});

  // Target side per branch: mask, gather, weights, pseudo labels.
  struct TargetSide {
    bool empty = true;
    Var feats, probs, weights;
    std::vector<int> pseudo;
  };
  std::array<TargetSide, 2> tgt;
  for (int m = 0; m < 2; ++m) {
    const Tensor& pv = g.value(target.branch[m].probs);
    std::vector<int> idx = detail::reliable_rows(pv, opt);
    d.target_survivors[m] = static_cast<int>(idx.size());
    if (idx.empty()) continue;
    tgt[m].empty = false;
    tgt[m].feats = row_gather(g, target.branch[m].feats, idx);
    tgt[m].probs = row_gather(g, target.branch[m].probs, idx);
    Var omega = hardness_g(g, tgt[m].probs, nullptr);
    tgt[m].weights = opt.hardness_weighting ? simplex_weights_g(g, omega)
                                            : uniform_weights_g(g, idx.size());
    const Tensor& tp = g.value(tgt[m].probs);
    for (std::size_t i = 0; i < tp.rows(); ++i)
      tgt[m].pseudo.push_back(static_cast<int>(argmax_row(tp, i)));
  }

  Var total;
  bool have = false;
  bool want_cid = opt.lambda != 0.0;
  for (std::size_t n = 0; n < sources.size(); ++n) {
    for (int m = 0; m < 2; ++m) {
      const Tensor& pv = g.value(sources[n].branch[m].probs);
      std::vector<int> idx = detail::reliable_rows(pv, opt);
      d.source_survivors[n][m] = static_cast<int>(idx.size());
      if (idx.empty() || tgt[m].empty) {
        d.skipped_terms += want_cid ? 2 : 1;
        continue;
      }
      Var sfeats = row_gather(g, sources[n].branch[m].feats, idx);
      Var sprobs = row_gather(g, sources[n].branch[m].probs, idx);
      std::vector<int> slabels;
      for (int i : idx) slabels.push_back(sources[n].labels[static_cast<std::size_t>(i)]);
      Var omega = hardness_g(g, sprobs, &slabels);
      Var sweights = opt.hardness_weighting ? simplex_weights_g(g, omega)
                                            : uniform_weights_g(g, idx.size());

      Var sid = weighted_mmd_g(g, sfeats, sweights, tgt[m].feats, tgt[m].weights, opt.kernel);
      d.sid[m] += g.value(sid).scalar_value();
      total = have ? g.add(total, sid) : sid;
      have = true;

      if (want_cid) {
        ClusterAlignment ca =
            cluster_alignment_g(g, sfeats, sweights, slabels, tgt[m].feats, tgt[m].weights,
                                tgt[m].pseudo, opt.kernel, opt.num_classes);
        if (ca.loss) {
          d.cid[m] += g.value(*ca.loss).scalar_value();
          total = g.add(total, g.scalar_mul(*ca.loss, opt.lambda));
        } else {
          ++d.skipped_terms;
        }
      }
    }
  }
  if (!have) return std::nullopt;
  return total;
}

// --- value-level surface (wraps the graph implementation over constants) ---

namespace detail {

struct GatheredBatch {
  Tensor feats;
  std::vector<double> weights;
  std::vector<int> classes;
};

inline GatheredBatch apply_mask(const WeightedBatchFeatures& b) {
  GatheredBatch out;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < b.features.rows(); ++i)
    if (b.reliable.empty() || b.reliable[i]) idx.push_back(i);
  out.feats = Tensor::zeros({idx.size(), b.features.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < b.features.cols(); ++j)
      out.feats.at(i, j) = b.features.at(idx[i], j);
    if (!b.weights.empty()) out.weights.push_back(b.weights[idx[i]]);
    if (!b.class_attr.empty()) out.classes.push_back(b.class_attr[idx[i]]);
  }
  return out;
}

}  // namespace detail

/// Hardness-weighted MMD between two batches; nullopt when either side is
/// empty after reliability masking (the AlignmentSkipped signal).
inline std::optional<double> weighted_mmd(const WeightedBatchFeatures& src,
                                          const WeightedBatchFeatures& tgt,
                                          const KernelConfig& kernel) {
  detail::GatheredBatch s = detail::apply_mask(src);
  detail::GatheredBatch t = detail::apply_mask(tgt);
  if (s.feats.rows() == 0 || t.feats.rows() == 0) return std::nullopt;
  Graph g;
  Var loss = weighted_mmd_g(g, g.constant(s.feats), g.constant(Tensor::column(s.weights)),
                            g.constant(t.feats), g.constant(Tensor::column(t.weights)), kernel);
  return g.value(loss).scalar_value();
}

/// Cluster-level alignment value; nullopt when no class contributes a term.
inline std::optional<double> cluster_alignment(const WeightedBatchFeatures& src,
                                               const WeightedBatchFeatures& tgt,
                                               const KernelConfig& kernel, int num_classes) {
  detail::GatheredBatch s = detail::apply_mask(src);
  detail::GatheredBatch t = detail::apply_mask(tgt);
  if (s.feats.rows() == 0 || t.feats.rows() == 0) return std::nullopt;
  Graph g;
  ClusterAlignment ca = cluster_alignment_g(
      g, g.constant(s.feats), g.constant(Tensor::column(s.weights)), s.classes,
      g.constant(t.feats), g.constant(Tensor::column(t.weights)), t.classes, kernel,
      num_classes);
  if (!ca.loss) return std::nullopt;
  return g.value(*ca.loss).scalar_value();
}

/// One domain's batch for the value-level inter-domain loss.
struct InterDomainBatch {
  Tensor f_g, p_g;  // global branch features and predictions
  Tensor f_l, p_l;  // local branch
  std::vector<int> labels;  // empty for the target
};

inline double inter_domain_loss(const std::vector<InterDomainBatch>& sources,
                                const InterDomainBatch& target, const InterOptions& opt,
                                InterDiagnostics* diag = nullptr) {
  Graph g;
  std::vector<AlignSource> src_vars;
  for (const InterDomainBatch& s : sources) {
    AlignSource a;
    a.branch[0] = {g.constant(s.f_g), g.constant(s.p_g)};
    a.branch[1] = {g.constant(s.f_l), g.constant(s.p_l)};
    a.labels = s.labels;
    src_vars.push_back(std::move(a));
  }
  AlignTarget tgt_vars;
  tgt_vars.branch[0] = {g.constant(target.f_g), g.constant(target.p_g)};
  tgt_vars.branch[1] = {g.constant(target.f_l), g.constant(target.p_l)};
  std::optional<Var> loss = inter_domain_loss_g(g, src_vars, tgt_vars, opt, diag);
  return loss ? g.value(*loss).scalar_value() : 0.0;
}

/// Traditional MMD with uniform weights (plain double-loop route, no graph).
/// Serves as the reference the weighted form must reduce to, and as the raw
/// distribution-shift metric for datasets.
inline double traditional_mmd(const Tensor& a, const Tensor& b, const KernelConfig& kernel) {
  kernel.validate();
  if (a.cols() != b.cols())
    throw ShapeError("traditional_mmd: feature dims " + a.shape_str() + " vs " + b.shape_str());
  if (a.rows() == 0 || b.rows() == 0) throw EmptyBatchError("traditional_mmd: empty batch");
  auto sqdist = [](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) {
      double d = x.at(i, k) - y.at(j, k);
      s += d * d;
    }
    return s;
  };
  std::vector<double> pairs;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.rows(); ++j) pairs.push_back(sqdist(a, i, a, j));
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = i + 1; j < b.rows(); ++j) pairs.push_back(sqdist(b, i, b, j));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) pairs.push_back(sqdist(a, i, b, j));
  double base = detail::median_of(pairs);
  if (!(base > 0.0)) base = 1.0;
  auto kmix = [&](double d2) {
    double s = 0.0;
    for (double m : kernel.bandwidth_multipliers) s += std::exp(-d2 / (2.0 * base * m));
    return s / static_cast<double>(kernel.bandwidth_multipliers.size());
  };
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j) saa += kmix(sqdist(a, i, a, j));
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) sbb += kmix(sqdist(b, i, b, j));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) sab += kmix(sqdist(a, i, b, j));
  double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
  return saa / (na * na) + sbb / (nb * nb) - 2.0 * sab / (na * nb);
}

}  // namespace lacmfer
