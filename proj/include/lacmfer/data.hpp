#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lacmfer/errors.hpp"
#include "lacmfer/rng.hpp"
#include "lacmfer/tensor.hpp"

namespace lacmfer {

enum class Role { kSource, kTarget };
enum class Split { kTrain, kEval };

inline std::string to_string(Role r) { return r == Role::kSource ? "source" : "target"; }
inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "eval"; }

struct AmbiguityPair {
  int a = 0;
  int b = 1;
  double overlap = 0.0;  // 1 makes the pair's means coincide in the target
};

/// How one domain deviates from the shared class-mean template: a rotation in
/// the first two coordinates, a translation, and an isotropic scale. Ambiguity
/// pairs pull class means toward their midpoint in the target domain only.
struct DomainSpec {
  int domain_id = 0;
  Role role = Role::kSource;
  double rotation = 0.0;
  std::vector<double> translation;
  double scale = 1.0;
  std::vector<std::vector<double>> class_means;  // shared template, pre-transform
  double class_covariance_scale = 1.0;
  std::vector<AmbiguityPair> ambiguity_pairs;
};

struct Sample {
  std::vector<double> features;
  int label = -1;
  int domain_id = -1;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t input_dim = 0;
  int num_classes = 0;
  int domain_id = -1;
  Role role = Role::kSource;
  Split split = Split::kTrain;

  bool operator==(const Dataset& o) const {
    if (input_dim != o.input_dim || num_classes != o.num_classes || domain_id != o.domain_id ||
        role != o.role || split != o.split || samples.size() != o.samples.size())
      return false;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].features != o.samples[i].features || samples[i].label != o.samples[i].label ||
          samples[i].domain_id != o.samples[i].domain_id)
        return false;
    return true;
  }

  Tensor feature_matrix() const {
    Tensor x = Tensor::zeros({samples.size(), input_dim});
    for (std::size_t i = 0; i < samples.size(); ++i)
      for (std::size_t j = 0; j < input_dim; ++j) x.at(i, j) = samples[i].features[j];
    return x;
  }
  std::vector<int> labels() const {
    std::vector<int> y(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) y[i] = samples[i].label;
    return y;
  }
};

/// Knobs for the synthetic multi-domain problem. Class means sit on a circle of
/// radius 5 in the first two coordinates; each domain applies rotation up to
/// shift_strength*pi/4, translation up to 2*shift_strength per coordinate and
/// scale within 30%*shift_strength of 1.
struct GenConfig {
  std::uint64_t seed = 1;
  int n_sources = 3;
  int num_classes = 5;
  int samples_per_class_per_domain = 40;
  int eval_samples_per_class = 0;  // 0: same as samples_per_class_per_domain
  double shift_strength = 0.7;
  double ambiguity = 0.0;          // overlap of the (0,1) pair in the target
  std::size_t input_dim = 2;
  double class_covariance_scale = 1.0;

  void validate() const {
    if (n_sources < 1) throw ConfigError("gen.n_sources: must be >= 1");
    if (num_classes < 2) throw ConfigError("gen.num_classes: must be >= 2");
    if (samples_per_class_per_domain < 1)
      throw ConfigError("gen.samples_per_class_per_domain: must be >= 1");
    if (eval_samples_per_class < 0) throw ConfigError("gen.eval_samples_per_class: must be >= 0");
    if (shift_strength < 0.0 || shift_strength > 1.0)
      throw ConfigError("gen.shift_strength: must be in [0,1]");
    if (ambiguity < 0.0 || ambiguity > 1.0) throw ConfigError("gen.ambiguity: must be in [0,1]");
    if (input_dim < 2) throw ConfigError("gen.input_dim: must be >= 2");
    if (!(class_covariance_scale > 0.0))
      throw ConfigError("gen.class_covariance_scale: must be positive");
  }
};

struct GeneratedProblem {
  std::vector<DomainSpec> specs;      // sources first, target last
  std::vector<Dataset> datasets;      // train+eval per domain, domain-major
};

namespace detail {

inline std::vector<double> domain_transform(const DomainSpec& spec, std::vector<double> z) {
  double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
  double x0 = z[0], x1 = z[1];
  z[0] = c * x0 - s * x1;
  z[1] = s * x0 + c * x1;
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = spec.scale * z[j] + spec.translation[j];
  return z;
}

inline std::vector<std::vector<double>> effective_means(const DomainSpec& spec) {
  std::vector<std::vector<double>> means = spec.class_means;
  if (spec.role == Role::kTarget) {
    for (const AmbiguityPair& p : spec.ambiguity_pairs) {
      std::vector<double>& a = means[static_cast<std::size_t>(p.a)];
      std::vector<double>& b = means[static_cast<std::size_t>(p.b)];
      for (std::size_t j = 0; j < a.size(); ++j) {
        double mid = 0.5 * (a[j] + b[j]);
        a[j] += p.overlap * (mid - a[j]);
        b[j] += p.overlap * (mid - b[j]);
      }
    }
  }
  return means;
}

inline Dataset sample_domain(const DomainSpec& spec, const GenConfig& cfg, Split split,
                             int per_class, Rng& rng) {
  Dataset ds;
  ds.input_dim = cfg.input_dim;
  ds.num_classes = cfg.num_classes;
  ds.domain_id = spec.domain_id;
  ds.role = spec.role;
  ds.split = split;
  std::vector<std::vector<double>> means = effective_means(spec);
  for (int k = 0; k < cfg.num_classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      std::vector<double> z(cfg.input_dim);
      for (std::size_t j = 0; j < cfg.input_dim; ++j)
        z[j] = means[static_cast<std::size_t>(k)][j] +
               spec.class_covariance_scale * rng.normal();
      Sample s;
      s.features = domain_transform(spec, std::move(z));
      s.label = k;
      s.domain_id = spec.domain_id;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace detail

/// Builds N source domains plus one target domain, fully reproducible from the
/// seed. Domain transforms are drawn at unit scale and multiplied by
/// shift_strength, so shift grows continuously with the knob at a fixed seed.
inline GeneratedProblem generate(const GenConfig& cfg) {
  cfg.validate();
  GeneratedProblem out;
  std::vector<std::vector<double>> template_means(static_cast<std::size_t>(cfg.num_classes),
                                                  std::vector<double>(cfg.input_dim, 0.0));
  for (int k = 0; k < cfg.num_classes; ++k) {
    double a = 2.0 * 3.14159265358979323846 * k / cfg.num_classes;
    template_means[static_cast<std::size_t>(k)][0] = 5.0 * std::cos(a);
    template_means[static_cast<std::size_t>(k)][1] = 5.0 * std::sin(a);
  }
  int n_domains = cfg.n_sources + 1;
  for (int d = 0; d < n_domains; ++d) {
    Rng trng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(d)));
    DomainSpec spec;
    spec.domain_id = d;
    spec.role = d < cfg.n_sources ? Role::kSource : Role::kTarget;
    spec.rotation = trng.uniform(-1.0, 1.0) * cfg.shift_strength * 3.14159265358979323846 / 4.0;
    spec.translation.resize(cfg.input_dim);
    for (double& t : spec.translation) t = trng.uniform(-1.0, 1.0) * 2.0 * cfg.shift_strength;
    spec.scale = 1.0 + 0.3 * cfg.shift_strength * trng.uniform(-1.0, 1.0);
    spec.class_means = template_means;
    spec.class_covariance_scale = cfg.class_covariance_scale;
    if (cfg.ambiguity > 0.0) spec.ambiguity_pairs.push_back({0, 1, cfg.ambiguity});
    out.specs.push_back(spec);

    int eval_per_class =
        cfg.eval_samples_per_class > 0 ? cfg.eval_samples_per_class : cfg.samples_per_class_per_domain;
    Rng train_rng(mix_seed(cfg.seed, 2000 + 2 * static_cast<std::uint64_t>(d)));
    Rng eval_rng(mix_seed(cfg.seed, 2000 + 2 * static_cast<std::uint64_t>(d) + 1));
    out.datasets.push_back(detail::sample_domain(spec, cfg, Split::kTrain,
                                                 cfg.samples_per_class_per_domain, train_rng));
    out.datasets.push_back(detail::sample_domain(spec, cfg, Split::kEval, eval_per_class, eval_rng));
  }
  return out;
}

// --- dataset file format ---
//
// #lacmfer-v1 input_dim=<d> K=<k> domain=<id> role=<source|target> split=<train|eval>
// label,f1,...,fd          (one line per sample, 17 significant digits)

inline void save(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset: " + path);
  out << "#lacmfer-v1 input_dim=" << ds.input_dim << " K=" << ds.num_classes
      << " domain=" << ds.domain_id << " role=" << to_string(ds.role)
      << " split=" << to_string(ds.split) << "\n";
  char buf[40];
  for (const Sample& s : ds.samples) {
    out << s.label;
    for (double v : s.features) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw Error("failed writing dataset: " + path);
}

inline Dataset load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read dataset: " + path);
  std::string line;
  long lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", lineno);
  std::istringstream hs(line);
  std::string magic;
  hs >> magic;
  if (magic != "#lacmfer-v1") throw ParseError("bad magic '" + magic + "'", lineno);
  Dataset ds;
  std::string kv;
  bool have_dim = false, have_k = false, have_domain = false, have_role = false, have_split = false;
  while (hs >> kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("bad header token '" + kv + "'", lineno);
    std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    try {
      if (key == "input_dim") { ds.input_dim = std::stoul(val); have_dim = true; }
      else if (key == "K") { ds.num_classes = std::stoi(val); have_k = true; }
      else if (key == "domain") { ds.domain_id = std::stoi(val); have_domain = true; }
      else if (key == "role") {
        if (val == "source") ds.role = Role::kSource;
        else if (val == "target") ds.role = Role::kTarget;
        else throw ParseError("bad role '" + val + "'", lineno);
        have_role = true;
      } else if (key == "split") {
        if (val == "train") ds.split = Split::kTrain;
        else if (val == "eval") ds.split = Split::kEval;
        else throw ParseError("bad split '" + val + "'", lineno);
        have_split = true;
      } else {
        throw ParseError("unknown header key '" + key + "'", lineno);
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("bad value for '" + key + "'", lineno);
    } catch (const std::out_of_range&) {
      throw ParseError("bad value for '" + key + "'", lineno);
    }
  }
  if (!(have_dim && have_k && have_domain && have_role && have_split))
    throw ParseError("incomplete header", 1);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Sample s;
    s.domain_id = ds.domain_id;
    std::size_t pos = 0;
    auto next_field = [&](bool& last) -> std::string {
      auto comma = line.find(',', pos);
      std::string f;
      if (comma == std::string::npos) {
        f = line.substr(pos);
        last = true;
        pos = line.size();
      } else {
        f = line.substr(pos, comma - pos);
        last = false;
        pos = comma + 1;
      }
      return f;
    };
    bool last = false;
    std::string lab = next_field(last);
    try {
      std::size_t used = 0;
      s.label = std::stoi(lab, &used);
      if (used != lab.size()) throw ParseError("bad label '" + lab + "'", lineno);
    } catch (const std::logic_error&) {
      throw ParseError("bad label '" + lab + "'", lineno);
    }
    if (s.label < -1 || s.label >= ds.num_classes)
      throw ParseError("label " + std::to_string(s.label) + " out of range", lineno);
    while (!last) {
      std::string f = next_field(last);
      const char* cs = f.c_str();
      char* end = nullptr;
      double v = std::strtod(cs, &end);
      if (end == cs || *end != '\0') throw ParseError("bad feature '" + f + "'", lineno);
      s.features.push_back(v);
    }
    if (s.features.size() != ds.input_dim)
      throw ParseError("row has " + std::to_string(s.features.size()) +
                           " features, header says " + std::to_string(ds.input_dim),
                       lineno);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// One mini-batch. Target train batches carry no labels: the batching layer is
/// the firewall that keeps target labels out of training.
struct Batch {
  Tensor x;
  std::vector<int> labels;  // empty for unlabeled batches
  int domain_id = -1;
};

inline bool labels_visible(const Dataset& ds) {
  return !(ds.role == Role::kTarget && ds.split == Split::kTrain);
}

/// Deterministic per-epoch shuffled batches; the last short batch is kept.
inline std::vector<Batch> batches(const Dataset& ds, int batch_size, std::uint64_t seed,
                                  int epoch) {
  if (batch_size < 2) throw ConfigError("batch_size: must be >= 2");
  std::vector<std::size_t> order(ds.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x626174ULL + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  bool with_labels = labels_visible(ds);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    std::size_t n = std::min(static_cast<std::size_t>(batch_size), order.size() - start);
    Batch b;
    b.domain_id = ds.domain_id;
    b.x = Tensor::zeros({n, ds.input_dim});
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = ds.samples[order[start + i]];
      for (std::size_t j = 0; j < ds.input_dim; ++j) b.x.at(i, j) = s.features[j];
      if (with_labels) b.labels.push_back(s.label);
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// Hands out successive batches across epochs; each exhausted epoch reshuffles
/// with (seed, epoch).
class BatchCycler {
 public:
  BatchCycler(const Dataset& ds, int batch_size, std::uint64_t seed)
      : ds_(&ds), batch_size_(batch_size), seed_(seed) {}

  Batch next() {
    if (queue_.empty() || pos_ >= queue_.size()) {
      queue_ = batches(*ds_, batch_size_, seed_, epoch_++);
      pos_ = 0;
      if (queue_.empty()) throw EmptyBatchError("batch cycler: dataset is empty");
    }
    return queue_[pos_++];
  }

 private:
  const Dataset* ds_;
  int batch_size_;
  std::uint64_t seed_;
  int epoch_ = 0;
  std::vector<Batch> queue_;
  std::size_t pos_ = 0;
};

}  // namespace lacmfer
