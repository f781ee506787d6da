#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lacmfer/alignment.hpp"
#include "lacmfer/consistency.hpp"
#include "lacmfer/grad_check.hpp"
#include "lacmfer/training.hpp"

namespace lacmfer {

struct LossCheck {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
};

namespace detail {

/// A small random instance: tiny architecture, random parameters, two labeled
/// source batches and one unlabeled target batch. tau/epsilon are low so votes
/// and reliability survivors are non-vacuous at a freshly initialized network.
struct SuiteInstance {
  ArchConfig arch;
  ModelParams params;
  std::vector<Tensor> source_x;
  std::vector<std::vector<int>> source_y;
  Tensor target_x;
  double tau = 0.3;
  InterOptions inter;
  double alpha = 0.1, beta = 0.5, gamma = 0.1;
};

inline SuiteInstance make_suite_instance(std::uint64_t seed) {
  SuiteInstance ins;
  ins.arch.input_dim = 2;
  ins.arch.embed_dim = 8;
  ins.arch.global_hidden = 6;
  ins.arch.local_hidden_per_region = 2;
  ins.arch.num_classes = 3;
  ins.params = init_params(ins.arch, seed);
  Rng rng(mix_seed(seed, 0x7375697465ULL));
  auto random_batch = [&](std::size_t n) {
    Tensor x = Tensor::zeros({n, ins.arch.input_dim});
    for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
    return x;
  };
  for (int n = 0; n < 2; ++n) {
    ins.source_x.push_back(random_batch(7));
    std::vector<int> y;
    for (int i = 0; i < 7; ++i)
      y.push_back(static_cast<int>(rng.index(ins.arch.num_classes)));
    ins.source_y.push_back(std::move(y));
  }
  ins.target_x = random_batch(8);
  ins.inter.lambda = 0.05;
  ins.inter.epsilon = 0.35;
  ins.inter.epsilon_filter = true;
  ins.inter.hardness_weighting = true;
  ins.inter.num_classes = static_cast<int>(ins.arch.num_classes);
  return ins;
}

/// Relu preactivations of every two-layer net in the forward pass, plain math.
/// Finite differences go bad when a preactivation sits within the step of a
/// relu kink, so instances are rejected unless all preacts clear a margin.
inline void append_relu_preacts(const ModelParams& p, const Tensor& x, std::vector<double>& out) {
  auto dense_pre = [](const Tensor& in, const DenseLayer& l) {
    Tensor z = Tensor::zeros({in.rows(), l.w.cols()});
    for (std::size_t i = 0; i < in.rows(); ++i)
      for (std::size_t k = 0; k < in.cols(); ++k)
        for (std::size_t j = 0; j < l.w.cols(); ++j)
          z.at(i, j) += in.at(i, k) * l.w.at(k, j);
    for (std::size_t i = 0; i < in.rows(); ++i)
      for (std::size_t j = 0; j < l.w.cols(); ++j) z.at(i, j) += l.b.at(0, j);
    return z;
  };
  auto two_layer_out = [&](const Tensor& in, const TwoLayer& t) {
    Tensor z1 = dense_pre(in, t.l1);
    out.insert(out.end(), z1.data.begin(), z1.data.end());
    for (double& v : z1.data) v = v > 0.0 ? v : 0.0;
    return dense_pre(z1, t.l2);
  };
  Tensor e = two_layer_out(x, p.encoder);
  two_layer_out(e, p.aligner_g);
  std::size_t rd = p.arch.region_dim();
  for (int r = 0; r < 4; ++r) {
    Tensor chunk = Tensor::zeros({e.rows(), rd});
    for (std::size_t i = 0; i < e.rows(); ++i)
      for (std::size_t j = 0; j < rd; ++j) chunk.at(i, j) = e.at(i, r * rd + j);
    two_layer_out(chunk, p.aligner_l[static_cast<std::size_t>(r)]);
  }
}

/// Deterministic rejection sampling: re-salt the instance until the discrete
/// structure is both non-vacuous (votes pass, reliability survivors on every
/// side) and stable under the finite-difference step (confidence and argmax
/// margins, preacts away from relu kinks).
inline SuiteInstance admissible_instance(std::uint64_t seed, int k) {
  constexpr double kMargin = 1e-3;
  for (int salt = 0; salt < 1000; ++salt) {
    SuiteInstance ins =
        make_suite_instance(mix_seed(seed, static_cast<std::uint64_t>(k) * 1009 + salt));

    std::vector<double> preacts;
    bool ok = true;
    std::vector<BranchOutputs> outs;
    for (const Tensor& x : ins.source_x) {
      append_relu_preacts(ins.params, x, preacts);
      outs.push_back(forward(ins.params, x));
    }
    append_relu_preacts(ins.params, ins.target_x, preacts);
    BranchOutputs tout = forward(ins.params, ins.target_x);
    for (double z : preacts)
      if (std::fabs(z) < kMargin) ok = false;
    if (!ok) continue;

    auto check_branch = [&](const Tensor& probs, bool is_target) {
      int survivors = 0;
      for (std::size_t i = 0; i < probs.rows() && ok; ++i) {
        std::size_t am = argmax_row(probs, i);
        double top = probs.at(i, am);
        if (std::fabs(top - ins.inter.epsilon) < kMargin) ok = false;
        if (top > ins.inter.epsilon) ++survivors;
        if (is_target) {
          if (std::fabs(top - ins.tau) < kMargin) ok = false;
          double second = -1.0;
          for (std::size_t j = 0; j < probs.cols(); ++j)
            if (j != am) second = std::max(second, probs.at(i, j));
          if (top - second < kMargin) ok = false;
        }
      }
      if (survivors < 2) ok = false;
    };
    for (const BranchOutputs& o : outs) {
      check_branch(o.p_g, false);
      check_branch(o.p_l, false);
    }
    check_branch(tout.p_g, true);
    check_branch(tout.p_l, true);
    if (!ok) continue;

    // entries of |P_G - P_L| feed an abs kink in the l1 mode
    for (std::size_t i = 0; i < tout.p_g.numel() && ok; ++i)
      if (std::fabs(tout.p_g.data[i] - tout.p_l.data[i]) < 0.5 * kMargin) ok = false;
    if (!ok) continue;

    if (vote(tout.p_g, tout.p_l, ins.tau).pass_count < 1) continue;
    return ins;
  }
  throw Error("gradient suite: no admissible instance for seed " + std::to_string(seed));
}

struct SuiteForward {
  std::vector<BranchVars> sources;
  BranchVars target;
};

inline SuiteForward suite_forward(Graph& g, const SuiteInstance& ins,
                                  const std::vector<Var>& leaves) {
  ParamVars pv;
  pv.ordered = leaves;
  SuiteForward f;
  for (const Tensor& x : ins.source_x) f.sources.push_back(forward_on_graph(g, pv, ins.arch, x));
  f.target = forward_on_graph(g, pv, ins.arch, ins.target_x);
  return f;
}

/// Sum over sources of the sample-level alignment term for one branch,
/// with masking and hardness weights recomputed as in training.
inline Var suite_sid(Graph& g, const SuiteInstance& ins, const SuiteForward& f, int branch) {
  auto branch_of = [&](const BranchVars& b) {
    return branch == 0 ? AlignBranch{b.f_g, b.p_g} : AlignBranch{b.f_l, b.p_l};
  };
  AlignBranch tb = branch_of(f.target);
  std::vector<int> tidx = detail::reliable_rows(g.value(tb.probs), ins.inter);
  Var tf = row_gather(g, tb.feats, tidx);
  Var tp = row_gather(g, tb.probs, tidx);
  Var tw = simplex_weights_g(g, hardness_g(g, tp, nullptr));
  Var acc;
  for (std::size_t n = 0; n < f.sources.size(); ++n) {
    AlignBranch sb = branch_of(f.sources[n]);
    std::vector<int> sidx = detail::reliable_rows(g.value(sb.probs), ins.inter);
    std::vector<int> labels;
    for (int i : sidx) labels.push_back(ins.source_y[n][static_cast<std::size_t>(i)]);
    Var sf = row_gather(g, sb.feats, sidx);
    Var sp = row_gather(g, sb.probs, sidx);
    Var sw = simplex_weights_g(g, hardness_g(g, sp, &labels));
    Var term = weighted_mmd_g(g, sf, sw, tf, tw, ins.inter.kernel);
    acc = n == 0 ? term : g.add(acc, term);
  }
  return acc;
}

inline Var suite_cid(Graph& g, const SuiteInstance& ins, const SuiteForward& f) {
  AlignBranch tb{f.target.f_g, f.target.p_g};
  std::vector<int> tidx = detail::reliable_rows(g.value(tb.probs), ins.inter);
  Var tf = row_gather(g, tb.feats, tidx);
  Var tp = row_gather(g, tb.probs, tidx);
  Var tw = simplex_weights_g(g, hardness_g(g, tp, nullptr));
  std::vector<int> pseudo;
  for (std::size_t i = 0; i < g.value(tp).rows(); ++i)
    pseudo.push_back(static_cast<int>(argmax_row(g.value(tp), i)));
  Var acc;
  bool have = false;
  for (std::size_t n = 0; n < f.sources.size(); ++n) {
    AlignBranch sb{f.sources[n].f_g, f.sources[n].p_g};
    std::vector<int> sidx = detail::reliable_rows(g.value(sb.probs), ins.inter);
    std::vector<int> labels;
    for (int i : sidx) labels.push_back(ins.source_y[n][static_cast<std::size_t>(i)]);
    Var sf = row_gather(g, sb.feats, sidx);
    Var sp = row_gather(g, sb.probs, sidx);
    Var sw = simplex_weights_g(g, hardness_g(g, sp, &labels));
    ClusterAlignment ca = cluster_alignment_g(g, sf, sw, labels, tf, tw, pseudo,
                                              ins.inter.kernel, ins.inter.num_classes);
    if (!ca.loss) continue;
    acc = have ? g.add(acc, *ca.loss) : *ca.loss;
    have = true;
  }
  if (!have) throw Error("gradient suite: every cluster term was empty");
  return acc;
}

inline Var suite_inter(Graph& g, const SuiteInstance& ins, const SuiteForward& f) {
  std::vector<AlignSource> src;
  for (std::size_t n = 0; n < f.sources.size(); ++n) {
    AlignSource a;
    a.branch[0] = {f.sources[n].f_g, f.sources[n].p_g};
    a.branch[1] = {f.sources[n].f_l, f.sources[n].p_l};
    a.labels = ins.source_y[n];
    src.push_back(std::move(a));
  }
  AlignTarget tgt;
  tgt.branch[0] = {f.target.f_g, f.target.p_g};
  tgt.branch[1] = {f.target.f_l, f.target.p_l};
  std::optional<Var> v = inter_domain_loss_g(g, src, tgt, ins.inter);
  if (!v) throw Error("gradient suite: inter loss fully skipped");
  return *v;
}

inline Var suite_sup(Graph& g, const SuiteInstance& ins, const SuiteForward& f) {
  std::vector<SourceForward> sup;
  for (std::size_t n = 0; n < f.sources.size(); ++n)
    sup.push_back({f.sources[n].p_g, f.sources[n].p_l, ins.source_y[n]});
  return supervised_loss_g(g, sup);
}

}  // namespace detail

/// Finite-difference verification of every named loss, end to end through the
/// model. Votes are precomputed per instance and treated as constants inside
/// both the analytic and the perturbed evaluations (the stop-gradient
/// contract of the voting loss).
inline std::vector<LossCheck> run_gradient_suite(int instances = 10, double step = 1e-5,
                                                 double tolerance = 1e-4,
                                                 std::uint64_t seed = 20240801) {
  using detail::SuiteInstance;
  struct NamedLoss {
    std::string name;
    std::function<Var(Graph&, const SuiteInstance&, const detail::SuiteForward&,
                      const VoteResult&)>
        build;
  };
  std::vector<NamedLoss> losses = {
      {"L_sup",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult&) {
         return detail::suite_sup(g, ins, f);
       }},
      {"L_sid_global",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult&) {
         return detail::suite_sid(g, ins, f, 0);
       }},
      {"L_sid_local",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult&) {
         return detail::suite_sid(g, ins, f, 1);
       }},
      {"L_cid",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult&) {
         return detail::suite_cid(g, ins, f);
       }},
      {"L_inter",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult&) {
         return detail::suite_inter(g, ins, f);
       }},
      {"L_mcc",
       [](Graph& g, const SuiteInstance&, const detail::SuiteForward& f, const VoteResult&) {
         return consistency_loss_g(g, f.target.p_g, f.target.p_l, ConsistencyMode::kMcc);
       }},
      {"L_kl",
       [](Graph& g, const SuiteInstance&, const detail::SuiteForward& f, const VoteResult&) {
         return consistency_loss_g(g, f.target.p_g, f.target.p_l, ConsistencyMode::kKl);
       }},
      {"L_l1",
       [](Graph& g, const SuiteInstance&, const detail::SuiteForward& f, const VoteResult&) {
         return consistency_loss_g(g, f.target.p_g, f.target.p_l, ConsistencyMode::kL1);
       }},
      {"L_mse",
       [](Graph& g, const SuiteInstance&, const detail::SuiteForward& f, const VoteResult&) {
         return consistency_loss_g(g, f.target.p_g, f.target.p_l, ConsistencyMode::kMse);
       }},
      {"L_mvv",
       [](Graph& g, const SuiteInstance&, const detail::SuiteForward& f, const VoteResult& v) {
         std::optional<Var> l = mvv_loss_g(g, f.target.p_g, f.target.p_l, v);
         if (!l) throw Error("gradient suite: no voting passers");
         return *l;
       }},
      {"L_spl",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult&) {
         std::optional<Var> l = spl_loss_g(g, f.target.p_g, f.target.p_l, ins.tau);
         if (!l) throw Error("gradient suite: no confident samples for spl");
         return *l;
       }},
      {"L_total",
       [](Graph& g, const SuiteInstance& ins, const detail::SuiteForward& f, const VoteResult& v) {
         Var total = detail::suite_sup(g, ins, f);
         total = g.add(total, g.scalar_mul(detail::suite_inter(g, ins, f), ins.alpha));
         total = g.add(total, g.scalar_mul(consistency_loss_g(g, f.target.p_g, f.target.p_l,
                                                              ConsistencyMode::kMcc),
                                           ins.beta));
         if (std::optional<Var> mvv = mvv_loss_g(g, f.target.p_g, f.target.p_l, v))
           total = g.add(total, g.scalar_mul(*mvv, ins.gamma));
         return total;
       }},
  };

  std::vector<LossCheck> out;
  for (const NamedLoss& loss : losses) {
    LossCheck check;
    check.name = loss.name;
    for (int k = 0; k < instances; ++k) {
      SuiteInstance ins = detail::admissible_instance(seed, k);
      // Votes from the unperturbed forward pass, frozen for the whole check.
      VoteResult votes;
      {
        BranchOutputs t = forward(ins.params, ins.target_x);
        votes = vote(t.p_g, t.p_l, ins.tau);
      }
      std::vector<ParamRef> refs;
      ins.params.for_each([&](const std::string& name, Tensor& t) { refs.push_back({name, &t}); });
      GradCheckReport rep = grad_check(
          refs,
          [&](Graph& g, const std::vector<Var>& leaves) {
            detail::SuiteForward f = detail::suite_forward(g, ins, leaves);
            return loss.build(g, ins, f, votes);
          },
          step, tolerance);
      check.max_rel_err = std::max(check.max_rel_err, rep.worst);
    }
    check.passed = check.max_rel_err < tolerance;
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace lacmfer
