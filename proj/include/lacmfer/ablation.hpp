#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lacmfer/eval.hpp"
#include "lacmfer/training.hpp"

namespace lacmfer {

/// The component ladder. Each variant adds one piece on top of the previous:
///   A  supervised loss only
///   B  + traditional MMD (uniform weights, no cluster term, no filter)
///   C  + hardness weighting
///   D  + cluster-level alignment and the reliability filter (full inter loss)
///   E  + clustering consistency
///   F  + voting pseudo-label loss (the full method)
enum class Variant { kA, kB, kC, kD, kE, kF };

inline char variant_letter(Variant v) { return static_cast<char>('A' + static_cast<int>(v)); }

inline Variant variant_from_letter(char c) {
  if (c < 'A' || c > 'F') throw ConfigError("variant: must be one of A..F");
  return static_cast<Variant>(c - 'A');
}

inline RunConfig variant_config(const RunConfig& base, Variant v) {
  RunConfig c = base;
  c.pseudo_mode = PseudoMode::kVoting;
  switch (v) {
    case Variant::kA:
      c.alpha = 0.0;
      c.beta = 0.0;
      c.gamma = 0.0;
      break;
    case Variant::kB:
      c.hardness_weighting = false;
      c.lambda = 0.0;
      c.epsilon_filter = false;
      c.beta = 0.0;
      c.gamma = 0.0;
      break;
    case Variant::kC:
      c.lambda = 0.0;
      c.epsilon_filter = false;
      c.beta = 0.0;
      c.gamma = 0.0;
      break;
    case Variant::kD:
      c.beta = 0.0;
      c.gamma = 0.0;
      break;
    case Variant::kE:
      c.gamma = 0.0;
      break;
    case Variant::kF:
      break;
  }
  return c;
}

struct AblationCell {
  std::string key;  // "A".."F", "F_spl", "F_kl", ...
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  GeometryReport target_geometry;
};

struct VariantSummary {
  std::string key;
  double mean_accuracy = 0.0;
  double stdev_accuracy = 0.0;
  GeometryReport mean_geometry;
  std::vector<AblationCell> cells;
};

struct AblationReport {
  std::vector<VariantSummary> variants;
};

inline int worker_thread_count(std::size_t jobs) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("LACMFER_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) hw = static_cast<unsigned>(v);
  }
  return static_cast<int>(std::min<std::size_t>(hw, jobs == 0 ? 1 : jobs));
}

namespace detail {

inline AblationCell run_cell(const RunConfig& cfg, const TrainData& data, const std::string& key,
                             std::uint64_t seed) {
  RunConfig c = cfg;
  c.seed = seed;
  TrainResult r = train(c, data);
  AblationCell cell;
  cell.key = key;
  cell.seed = seed;
  cell.accuracy = accuracy(r.params, data.target_eval);
  cell.target_geometry = geometry(global_features(r.params, data.target_eval.feature_matrix()),
                                  data.target_eval.labels(), "target");
  return cell;
}

inline VariantSummary summarize(const std::string& key, std::vector<AblationCell> cells) {
  VariantSummary s;
  s.key = key;
  double n = static_cast<double>(cells.size());
  for (const AblationCell& c : cells) s.mean_accuracy += c.accuracy;
  s.mean_accuracy /= n;
  double var = 0.0;
  for (const AblationCell& c : cells) {
    double d = c.accuracy - s.mean_accuracy;
    var += d * d;
  }
  s.stdev_accuracy = std::sqrt(var / n);
  s.mean_geometry.scope = "target";
  bool inf_ratio = false;
  for (const AblationCell& c : cells) {
    s.mean_geometry.intra_l2 += c.target_geometry.intra_l2 / n;
    s.mean_geometry.intra_var += c.target_geometry.intra_var / n;
    s.mean_geometry.inter_l2 += c.target_geometry.inter_l2 / n;
    if (std::isinf(c.target_geometry.ratio_r))
      inf_ratio = true;
    else
      s.mean_geometry.ratio_r += c.target_geometry.ratio_r / n;
  }
  if (inf_ratio) s.mean_geometry.ratio_r = std::numeric_limits<double>::infinity();
  s.cells = std::move(cells);
  return s;
}

}  // namespace detail

/// Trains every requested (variant, seed) pair and aggregates per variant.
/// Optional sweeps re-run the full method with the SPL pseudo-labeling
/// strategy and with the alternative consistency modes. Jobs run on a worker
/// pool capped by LACMFER_THREADS; results are reduced in a fixed order.
inline AblationReport run_ablation(const RunConfig& base, const TrainData& data,
                                   const std::vector<std::uint64_t>& seeds,
                                   const std::vector<Variant>& variants =
                                       {Variant::kA, Variant::kB, Variant::kC, Variant::kD,
                                        Variant::kE, Variant::kF},
                                   bool pseudo_sweep = false, bool consistency_sweep = false) {
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");

  struct Job {
    std::string key;
    RunConfig cfg;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::vector<std::string> key_order;
  auto add_jobs = [&](const std::string& key, const RunConfig& cfg) {
    key_order.push_back(key);
    for (std::uint64_t s : seeds) jobs.push_back({key, cfg, s});
  };
  for (Variant v : variants) add_jobs(std::string(1, variant_letter(v)), variant_config(base, v));
  if (pseudo_sweep) {
    RunConfig spl = variant_config(base, Variant::kF);
    spl.pseudo_mode = PseudoMode::kSpl;
    add_jobs("F_spl", spl);
  }
  if (consistency_sweep) {
    for (ConsistencyMode m : {ConsistencyMode::kKl, ConsistencyMode::kL1, ConsistencyMode::kMse}) {
      RunConfig alt = variant_config(base, Variant::kF);
      alt.consistency_mode = m;
      add_jobs("F_" + to_string(m), alt);
    }
  }

  std::vector<AblationCell> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        results[i] = detail::run_cell(jobs[i].cfg, data, jobs[i].key, jobs[i].seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  int nthreads = worker_thread_count(jobs.size());
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  AblationReport report;
  for (const std::string& key : key_order) {
    std::vector<AblationCell> cells;
    for (const AblationCell& c : results)
      if (c.key == key) cells.push_back(c);
    report.variants.push_back(detail::summarize(key, std::move(cells)));
  }
  return report;
}

inline nlohmann::json ablation_to_json(const AblationReport& report) {
  nlohmann::json j;
  for (const VariantSummary& v : report.variants) {
    nlohmann::json vj = {{"mean_accuracy", v.mean_accuracy},
                         {"stdev_accuracy", v.stdev_accuracy},
                         {"mean_geometry", geometry_to_json(v.mean_geometry)}};
    nlohmann::json cells;
    for (const AblationCell& c : v.cells)
      cells[std::to_string(c.seed)] = {{"accuracy", c.accuracy},
                                       {"geometry", geometry_to_json(c.target_geometry)}};
    vj["per_seed"] = cells;
    j[v.key] = vj;
  }
  return j;
}

}  // namespace lacmfer
