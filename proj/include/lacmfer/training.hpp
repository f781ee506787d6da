#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacmfer/alignment.hpp"
#include "lacmfer/config.hpp"
#include "lacmfer/consistency.hpp"
#include "lacmfer/data.hpp"
#include "lacmfer/eval.hpp"
#include "lacmfer/model.hpp"

namespace lacmfer {

/// One source batch already pushed through the model.
struct SourceForward {
  Var p_g, p_l;
  std::vector<int> labels;
};

/// Mean source loss: per source, batch-mean cross-entropy of both branches
/// against the real labels, averaged over the N sources.
inline Var supervised_loss_g(Graph& g, const std::vector<SourceForward>& sources) {
  if (sources.empty()) throw EmptyBatchError("supervised_loss: no source batches");
  Var acc;
  for (std::size_t n = 0; n < sources.size(); ++n) {
    Var term = g.add(g.mean(ce_rows(g, sources[n].p_l, sources[n].labels)),
                     g.mean(ce_rows(g, sources[n].p_g, sources[n].labels)));
    acc = n == 0 ? term : g.add(acc, term);
  }
  return g.scalar_mul(acc, 1.0 / static_cast<double>(sources.size()));
}

/// Value-level wrapper over per-source branch predictions.
struct SupervisedBatch {
  Tensor p_g, p_l;
  std::vector<int> labels;
};

inline double supervised_loss(const std::vector<SupervisedBatch>& sources) {
  Graph g;
  std::vector<SourceForward> fw;
  for (const SupervisedBatch& s : sources)
    fw.push_back({g.constant(s.p_g), g.constant(s.p_l), s.labels});
  return g.value(supervised_loss_g(g, fw)).scalar_value();
}

/// The training objective as a plain weighted sum of already-computed parts.
struct LossComponents {
  double l_sup = 0.0;
  double l_inter = 0.0;
  double l_consistency = 0.0;  // beta slot (selected consistency mode)
  double l_pseudo = 0.0;       // gamma slot (voting or spl)
};

inline double total_loss(const LossComponents& c, const RunConfig& cfg) {
  return c.l_sup + cfg.alpha * c.l_inter + cfg.beta * c.l_consistency + cfg.gamma * c.l_pseudo;
}

/// Annealed learning rate lr0 / (1 + a*p)^b at progress p = iteration/total.
inline double lr_at(const RunConfig& cfg, double progress) {
  return cfg.lr0 / std::pow(1.0 + cfg.schedule_a * progress, cfg.schedule_b);
}

/// Momentum buffers, one per parameter tensor in canonical order.
struct OptimizerState {
  std::vector<Tensor> velocity;

  static OptimizerState zeros_like(const ModelParams& p) {
    OptimizerState s;
    p.for_each([&](const std::string&, const Tensor& t) {
      s.velocity.push_back(Tensor::zeros(t.shape));
    });
    return s;
  }
};

/// SGD with momentum on (grad + weight_decay*param) and the annealed rate.
/// Aborts with NumericalError on any non-finite gradient.
inline void optimizer_step(ModelParams& params, const std::vector<Tensor>& grads,
                           OptimizerState& state, int iteration, const RunConfig& cfg) {
  double progress = cfg.total_iters > 0
                        ? static_cast<double>(iteration) / static_cast<double>(cfg.total_iters)
                        : 0.0;
  double lr = lr_at(cfg, progress);
  std::size_t idx = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& grad = grads[idx];
    if (!grad.same_shape(t))
      throw ShapeError("optimizer: gradient shape " + grad.shape_str() + " for '" + name + "'");
    if (!grad.all_finite())
      throw NumericalError("optimizer: non-finite gradient for '" + name + "' at iteration " +
                           std::to_string(iteration));
    Tensor& v = state.velocity[idx];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      v.data[i] = cfg.momentum * v.data[i] + (grad.data[i] + cfg.weight_decay * t.data[i]);
      t.data[i] -= lr * v.data[i];
    }
    ++idx;
  });
}

/// Per-iteration record. The consistency and pseudo-label slots are logged
/// under l_mcc / l_mvv regardless of which mode variant filled them.
struct StepDiagnostics {
  int iteration = 0;
  double lr = 0.0;
  double l_sup = 0.0;
  double l_sid_g = 0.0;
  double l_sid_l = 0.0;
  double l_cid_g = 0.0;
  double l_cid_l = 0.0;
  double l_inter = 0.0;
  double l_mcc = 0.0;
  double l_mvv = 0.0;
  double l_total = 0.0;
  int vote_pass = 0;
  int skipped_terms = 0;
  std::array<int, 2> target_survivors = {0, 0};
  std::vector<std::array<int, 2>> source_survivors;
  std::optional<double> target_accuracy;
};

inline nlohmann::json step_to_json(const StepDiagnostics& d) {
  nlohmann::json j = {{"iter", d.iteration},
                      {"lr", d.lr},
                      {"l_sup", d.l_sup},
                      {"l_sid_g", d.l_sid_g},
                      {"l_sid_l", d.l_sid_l},
                      {"l_cid_g", d.l_cid_g},
                      {"l_cid_l", d.l_cid_l},
                      {"l_inter", d.l_inter},
                      {"l_mcc", d.l_mcc},
                      {"l_mvv", d.l_mvv},
                      {"l_total", d.l_total},
                      {"vote_pass", d.vote_pass},
                      {"skipped", d.skipped_terms}};
  nlohmann::json surv;
  surv["target"] = {{"g", d.target_survivors[0]}, {"l", d.target_survivors[1]}};
  for (std::size_t n = 0; n < d.source_survivors.size(); ++n)
    surv["s" + std::to_string(n)] = {{"g", d.source_survivors[n][0]},
                                     {"l", d.source_survivors[n][1]}};
  j["survivors"] = surv;
  if (d.target_accuracy) j["acc_target"] = *d.target_accuracy;
  return j;
}

/// Labeled source train sets, the unlabeled-view target train set, and the
/// target eval set (labels used only for reporting accuracy).
struct TrainData {
  std::vector<Dataset> sources;
  Dataset target_train;
  Dataset target_eval;

  void validate(const ArchConfig& arch) const {
    if (sources.empty()) throw ConfigError("data: need at least one source train set");
    for (const Dataset& s : sources) {
      if (s.role != Role::kSource || s.split != Split::kTrain)
        throw ConfigError("data: source set has wrong role/split");
      if (s.input_dim != arch.input_dim)
        throw ConfigError("data: source input_dim " + std::to_string(s.input_dim) +
                          " does not match arch.input_dim");
      if (s.num_classes != static_cast<int>(arch.num_classes))
        throw ConfigError("data: source K does not match arch.num_classes");
    }
    if (target_train.role != Role::kTarget || target_train.split != Split::kTrain)
      throw ConfigError("data: target train set has wrong role/split");
    if (target_train.input_dim != arch.input_dim)
      throw ConfigError("data: target input_dim does not match arch.input_dim");
  }
};

struct TrainResult {
  ModelParams params;
  std::vector<StepDiagnostics> log;
};

/// The full training loop: per iteration, one batch per source plus one target
/// batch (loaders cycling independently), a single combined backward pass, and
/// one optimizer step. total_iters = 0 returns the initialized parameters.
inline TrainResult train(const RunConfig& cfg, const TrainData& data) {
  cfg.arch.validate();
  data.validate(cfg.arch);

  TrainResult result;
  result.params = init_params(cfg.arch, cfg.seed);

  OptimizerState opt = OptimizerState::zeros_like(result.params);
  std::vector<BatchCycler> source_cyclers;
  for (std::size_t n = 0; n < data.sources.size(); ++n)
    source_cyclers.emplace_back(data.sources[n], cfg.batch_size,
                                mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(n)));
  BatchCycler target_cycler(data.target_train, cfg.batch_size, mix_seed(cfg.seed, 777));

  const bool use_inter = cfg.alpha > 0.0;
  const bool use_consistency = cfg.beta > 0.0;
  const bool use_pseudo = cfg.gamma > 0.0;
  const bool use_target = use_inter || use_consistency || use_pseudo;
  const InterOptions inter_opts = cfg.inter_options();

  for (int iter = 0; iter < cfg.total_iters; ++iter) {
    std::vector<Batch> src_batches;
    for (BatchCycler& c : source_cyclers) src_batches.push_back(c.next());
    Batch tgt_batch = target_cycler.next();

    Graph g;
    ParamVars pv = ParamVars::leaves(g, result.params);

    std::vector<BranchVars> src_fwd;
    for (const Batch& b : src_batches)
      src_fwd.push_back(forward_on_graph(g, pv, cfg.arch, b.x));

    std::vector<SourceForward> sup_in;
    for (std::size_t n = 0; n < src_batches.size(); ++n)
      sup_in.push_back({src_fwd[n].p_g, src_fwd[n].p_l, src_batches[n].labels});
    Var total = supervised_loss_g(g, sup_in);

    StepDiagnostics diag;
    diag.iteration = iter;
    diag.lr = lr_at(cfg, cfg.total_iters > 0 ? static_cast<double>(iter) / cfg.total_iters : 0.0);
    diag.l_sup = g.value(total).scalar_value();
    diag.source_survivors.assign(src_batches.size(), {0, 0});

    BranchVars tgt_fwd;
    if (use_target) tgt_fwd = forward_on_graph(g, pv, cfg.arch, tgt_batch.x);

    if (use_inter) {
      std::vector<AlignSource> align_src;
      for (std::size_t n = 0; n < src_batches.size(); ++n) {
        AlignSource a;
        a.branch[0] = {src_fwd[n].f_g, src_fwd[n].p_g};
        a.branch[1] = {src_fwd[n].f_l, src_fwd[n].p_l};
        a.labels = src_batches[n].labels;
        align_src.push_back(std::move(a));
      }
      AlignTarget align_tgt;
      align_tgt.branch[0] = {tgt_fwd.f_g, tgt_fwd.p_g};
      align_tgt.branch[1] = {tgt_fwd.f_l, tgt_fwd.p_l};
      InterDiagnostics idiag;
      std::optional<Var> inter = inter_domain_loss_g(g, align_src, align_tgt, inter_opts, &idiag);
      diag.l_sid_g = idiag.sid[0];
      diag.l_sid_l = idiag.sid[1];
      diag.l_cid_g = idiag.cid[0];
      diag.l_cid_l = idiag.cid[1];
      diag.skipped_terms = idiag.skipped_terms;
      diag.target_survivors = idiag.target_survivors;
      diag.source_survivors = idiag.source_survivors;
      if (inter) {
        diag.l_inter = g.value(*inter).scalar_value();
        total = g.add(total, g.scalar_mul(*inter, cfg.alpha));
      }
    }

    if (use_consistency) {
      Var cons = consistency_loss_g(g, tgt_fwd.p_g, tgt_fwd.p_l, cfg.consistency_mode);
      diag.l_mcc = g.value(cons).scalar_value();
      total = g.add(total, g.scalar_mul(cons, cfg.beta));
    }

    if (use_pseudo) {
      if (cfg.pseudo_mode == PseudoMode::kVoting) {
        VoteResult votes = vote(g.value(tgt_fwd.p_g), g.value(tgt_fwd.p_l), cfg.tau);
        diag.vote_pass = votes.pass_count;
        if (std::optional<Var> mvv = mvv_loss_g(g, tgt_fwd.p_g, tgt_fwd.p_l, votes)) {
          diag.l_mvv = g.value(*mvv).scalar_value();
          total = g.add(total, g.scalar_mul(*mvv, cfg.gamma));
        }
      } else {
        if (std::optional<Var> spl = spl_loss_g(g, tgt_fwd.p_g, tgt_fwd.p_l, cfg.tau)) {
          diag.l_mvv = g.value(*spl).scalar_value();
          total = g.add(total, g.scalar_mul(*spl, cfg.gamma));
        }
      }
    }

    diag.l_total = g.value(total).scalar_value();
    if (!std::isfinite(diag.l_total))
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(iter));

    g.backward(total);
    std::vector<Tensor> grads;
    grads.reserve(pv.ordered.size());
    for (Var leaf : pv.ordered) grads.push_back(g.grad(leaf));
    optimizer_step(result.params, grads, opt, iter, cfg);

    if (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0 && !data.target_eval.samples.empty())
      diag.target_accuracy = accuracy(result.params, data.target_eval);

    result.log.push_back(std::move(diag));
  }
  return result;
}

}  // namespace lacmfer
