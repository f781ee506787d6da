#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "lacmfer/alignment.hpp"
#include "lacmfer/consistency.hpp"
#include "lacmfer/data.hpp"
#include "lacmfer/model.hpp"

namespace lacmfer {

enum class PseudoMode { kVoting, kSpl };

inline PseudoMode pseudo_mode_from_string(const std::string& s) {
  if (s == "voting") return PseudoMode::kVoting;
  if (s == "spl") return PseudoMode::kSpl;
  throw ConfigError("pseudo_mode: unknown mode '" + s + "'");
}

inline std::string to_string(PseudoMode m) {
  return m == PseudoMode::kVoting ? "voting" : "spl";
}

/// Every knob of one training run. Defaults are the desk-scale profile; the
/// "paper" profile bumps batch size and iteration count to the reference
/// setting (batch 128, 20000 iterations).
struct RunConfig {
  ArchConfig arch;
  double lambda = 0.02;
  double alpha = 0.1;   // 0.4 is the hard-task profile
  double beta = 0.5;
  double gamma = 0.1;
  double epsilon = 0.4;
  double tau = 0.9;
  bool epsilon_filter = true;
  bool hardness_weighting = true;
  ConsistencyMode consistency_mode = ConsistencyMode::kMcc;
  PseudoMode pseudo_mode = PseudoMode::kVoting;
  double lr0 = 0.01;
  int batch_size = 32;
  int total_iters = 2000;
  std::uint64_t seed = 1;
  double schedule_a = 10.0;
  double schedule_b = 0.75;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int eval_every = 200;  // 0 disables periodic target evaluation
  KernelConfig kernel;

  void validate() const {
    arch.validate();
    if (lambda < 0.0) throw ConfigError("lambda: must be >= 0");
    if (alpha < 0.0) throw ConfigError("alpha: must be >= 0");
    if (beta < 0.0) throw ConfigError("beta: must be >= 0");
    if (gamma < 0.0) throw ConfigError("gamma: must be >= 0");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon: must be in (0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau: must be in (0,1]");
    if (!(lr0 > 0.0)) throw ConfigError("lr0: must be positive");
    if (batch_size < 2) throw ConfigError("batch_size: must be >= 2");
    if (total_iters < 1) throw ConfigError("total_iters: must be >= 1");
    if (schedule_a < 0.0) throw ConfigError("schedule_a: must be >= 0");
    if (schedule_b < 0.0) throw ConfigError("schedule_b: must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum: must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay: must be >= 0");
    if (eval_every < 0) throw ConfigError("eval_every: must be >= 0");
    kernel.validate();
  }

  InterOptions inter_options() const {
    InterOptions opt;
    opt.lambda = lambda;
    opt.epsilon = epsilon;
    opt.epsilon_filter = epsilon_filter;
    opt.hardness_weighting = hardness_weighting;
    opt.kernel = kernel;
    opt.num_classes = static_cast<int>(arch.num_classes);
    return opt;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError(scope + ": unknown key '" + it.key() + "'");
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(key) + ": wrong type");
  }
}

}  // namespace detail

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"input_dim", "embed_dim", "global_hidden",
                             "local_hidden_per_region", "num_classes"},
                         "arch");
  ArchConfig a;
  detail::read_field(j, "input_dim", a.input_dim);
  detail::read_field(j, "embed_dim", a.embed_dim);
  detail::read_field(j, "global_hidden", a.global_hidden);
  detail::read_field(j, "local_hidden_per_region", a.local_hidden_per_region);
  detail::read_field(j, "num_classes", a.num_classes);
  return a;
}

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"input_dim", a.input_dim},
          {"embed_dim", a.embed_dim},
          {"global_hidden", a.global_hidden},
          {"local_hidden_per_region", a.local_hidden_per_region},
          {"num_classes", a.num_classes}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(
      j, {"profile", "arch", "lambda", "alpha", "beta", "gamma", "epsilon", "tau",
          "epsilon_filter", "hardness_weighting", "consistency_mode", "pseudo_mode", "lr0",
          "batch_size", "total_iters", "seed", "schedule_a", "schedule_b", "momentum",
          "weight_decay", "eval_every", "bandwidth_multipliers"},
      "config");
  RunConfig c;
  if (j.contains("profile")) {
    std::string p = j.at("profile").get<std::string>();
    if (p == "paper") {
      c.batch_size = 128;
      c.total_iters = 20000;
    } else if (p != "desk") {
      throw ConfigError("profile: unknown profile '" + p + "'");
    }
  }
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  detail::read_field(j, "lambda", c.lambda);
  detail::read_field(j, "alpha", c.alpha);
  detail::read_field(j, "beta", c.beta);
  detail::read_field(j, "gamma", c.gamma);
  detail::read_field(j, "epsilon", c.epsilon);
  detail::read_field(j, "tau", c.tau);
  detail::read_field(j, "epsilon_filter", c.epsilon_filter);
  detail::read_field(j, "hardness_weighting", c.hardness_weighting);
  if (j.contains("consistency_mode"))
    c.consistency_mode = consistency_mode_from_string(j.at("consistency_mode").get<std::string>());
  if (j.contains("pseudo_mode"))
    c.pseudo_mode = pseudo_mode_from_string(j.at("pseudo_mode").get<std::string>());
  detail::read_field(j, "lr0", c.lr0);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "total_iters", c.total_iters);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "schedule_a", c.schedule_a);
  detail::read_field(j, "schedule_b", c.schedule_b);
  detail::read_field(j, "momentum", c.momentum);
  detail::read_field(j, "weight_decay", c.weight_decay);
  detail::read_field(j, "eval_every", c.eval_every);
  detail::read_field(j, "bandwidth_multipliers", c.kernel.bandwidth_multipliers);
  c.validate();
  return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"arch", arch_to_json(c.arch)},
          {"lambda", c.lambda},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"epsilon", c.epsilon},
          {"tau", c.tau},
          {"epsilon_filter", c.epsilon_filter},
          {"hardness_weighting", c.hardness_weighting},
          {"consistency_mode", to_string(c.consistency_mode)},
          {"pseudo_mode", to_string(c.pseudo_mode)},
          {"lr0", c.lr0},
          {"batch_size", c.batch_size},
          {"total_iters", c.total_iters},
          {"seed", c.seed},
          {"schedule_a", c.schedule_a},
          {"schedule_b", c.schedule_b},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"eval_every", c.eval_every},
          {"bandwidth_multipliers", c.kernel.bandwidth_multipliers}};
}

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"seed", "n_sources", "num_classes", "samples_per_class_per_domain",
                          "eval_samples_per_class", "shift_strength", "ambiguity", "input_dim",
                          "class_covariance_scale"},
                         "gen");
  GenConfig c;
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "n_sources", c.n_sources);
  detail::read_field(j, "num_classes", c.num_classes);
  detail::read_field(j, "samples_per_class_per_domain", c.samples_per_class_per_domain);
  detail::read_field(j, "eval_samples_per_class", c.eval_samples_per_class);
  detail::read_field(j, "shift_strength", c.shift_strength);
  detail::read_field(j, "ambiguity", c.ambiguity);
  detail::read_field(j, "input_dim", c.input_dim);
  detail::read_field(j, "class_covariance_scale", c.class_covariance_scale);
  c.validate();
  return c;
}

inline nlohmann::json gen_config_to_json(const GenConfig& c) {
  return {{"seed", c.seed},
          {"n_sources", c.n_sources},
          {"num_classes", c.num_classes},
          {"samples_per_class_per_domain", c.samples_per_class_per_domain},
          {"eval_samples_per_class", c.eval_samples_per_class},
          {"shift_strength", c.shift_strength},
          {"ambiguity", c.ambiguity},
          {"input_dim", c.input_dim},
          {"class_covariance_scale", c.class_covariance_scale}};
}

}  // namespace lacmfer
