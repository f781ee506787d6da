#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lacmfer/autograd.hpp"
#include "lacmfer/graph_ops.hpp"
#include "lacmfer/rng.hpp"

namespace lacmfer {

/// Network sizes. The embedding is split into four contiguous regions, so
/// embed_dim must be divisible by 4.
struct ArchConfig {
  std::size_t input_dim = 2;
  std::size_t embed_dim = 32;
  std::size_t global_hidden = 64;
  std::size_t local_hidden_per_region = 16;
  std::size_t num_classes = 5;

  std::size_t local_feature_dim() const { return 4 * local_hidden_per_region; }
  std::size_t region_dim() const { return embed_dim / 4; }

  void validate() const {
    if (input_dim < 1) throw ConfigError("arch.input_dim: must be positive");
    if (embed_dim < 4 || embed_dim % 4 != 0)
      throw ConfigError("arch.embed_dim: must be positive and divisible by 4");
    if (global_hidden < 1) throw ConfigError("arch.global_hidden: must be positive");
    if (local_hidden_per_region < 1)
      throw ConfigError("arch.local_hidden_per_region: must be positive");
    if (num_classes < 2) throw ConfigError("arch.num_classes: must be at least 2");
  }
};

struct DenseLayer {
  Tensor w;  // (in x out)
  Tensor b;  // (1 x out)
};

/// Two dense layers with relu on the hidden layer: out = W2*relu(W1*x+b1)+b2.
struct TwoLayer {
  DenseLayer l1, l2;
};

/// All learnable parameter groups: shared encoder, the two aligners (the local
/// one is four independent per-region networks), and the two linear classifiers.
struct ModelParams {
  ArchConfig arch;
  TwoLayer encoder;                     // input_dim -> embed_dim
  TwoLayer aligner_g;                   // embed_dim -> global_hidden
  std::array<TwoLayer, 4> aligner_l;    // embed_dim/4 -> local_hidden_per_region
  DenseLayer classifier_g;              // global_hidden -> K
  DenseLayer classifier_l;              // 4*local_hidden_per_region -> K

  /// Visits every tensor in a fixed canonical order. This order defines
  /// initialization, optimizer state, checkpoints and gradient vectors.
  template <class F>
  void for_each(F f) {
    auto layer = [&](const std::string& name, DenseLayer& l) {
      f(name + ".w", l.w);
      f(name + ".b", l.b);
    };
    auto two = [&](const std::string& name, TwoLayer& t) {
      layer(name + ".l1", t.l1);
      layer(name + ".l2", t.l2);
    };
    two("encoder", encoder);
    two("aligner_g", aligner_g);
    for (int r = 0; r < 4; ++r) two("aligner_l" + std::to_string(r), aligner_l[r]);
    layer("classifier_g", classifier_g);
    layer("classifier_l", classifier_l);
  }
  template <class F>
  void for_each(F f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& n, Tensor& t) { f(n, const_cast<const Tensor&>(t)); });
  }

  std::size_t tensor_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor&) { ++n; });
    return n;
  }
};

namespace detail {

inline DenseLayer init_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer l;
  l.w = Tensor::zeros({in, out});
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& x : l.w.data) x = rng.uniform(-limit, limit);
  l.b = Tensor::zeros({1, out});
  return l;
}

inline TwoLayer init_two(std::size_t in, std::size_t out, Rng& rng) {
  return TwoLayer{init_layer(in, out, rng), init_layer(out, out, rng)};
}

}  // namespace detail

/// Glorot-uniform weights, zero biases, drawn in canonical order from the seed.
inline ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  ModelParams p;
  p.arch = arch;
  p.encoder = detail::init_two(arch.input_dim, arch.embed_dim, rng);
  p.aligner_g = detail::init_two(arch.embed_dim, arch.global_hidden, rng);
  for (int r = 0; r < 4; ++r)
    p.aligner_l[r] = detail::init_two(arch.region_dim(), arch.local_hidden_per_region, rng);
  p.classifier_g = detail::init_layer(arch.global_hidden, arch.num_classes, rng);
  p.classifier_l = detail::init_layer(arch.local_feature_dim(), arch.num_classes, rng);
  return p;
}

/// Graph handles for one model's tensors, in canonical order.
struct ParamVars {
  std::vector<Var> ordered;
  std::vector<std::string> names;

  static ParamVars leaves(Graph& g, const ModelParams& p) {
    ParamVars pv;
    p.for_each([&](const std::string& name, const Tensor& t) {
      pv.names.push_back(name);
      pv.ordered.push_back(g.leaf(t));
    });
    return pv;
  }
  /// Non-differentiable variant for pure inference.
  static ParamVars constants(Graph& g, const ModelParams& p) {
    ParamVars pv;
    p.for_each([&](const std::string& name, const Tensor& t) {
      pv.names.push_back(name);
      pv.ordered.push_back(g.constant(t));
    });
    return pv;
  }

  // Canonical layout: encoder(4), aligner_g(4), aligner_l0..3(4 each), cls_g(2), cls_l(2).
  Var enc(int i) const { return ordered[i]; }
  Var ag(int i) const { return ordered[4 + i]; }
  Var al(int region, int i) const { return ordered[8 + 4 * region + i]; }
  Var cg(int i) const { return ordered[24 + i]; }
  Var cl(int i) const { return ordered[26 + i]; }
};

namespace detail {

inline Var dense(Graph& g, Var x, Var w, Var b) {
  return g.add(g.matmul(x, w), b);
}

inline Var two_layer(Graph& g, Var x, Var w1, Var b1, Var w2, Var b2) {
  return dense(g, g.relu(dense(g, x, w1, b1)), w2, b2);
}

}  // namespace detail

/// Graph handles for one forward pass of a batch.
struct BranchVars {
  Var e_g;  // (B x embed_dim)
  Var f_g;  // (B x global_hidden)
  Var p_g;  // (B x K)
  Var f_l;  // (B x 4*local_hidden_per_region)
  Var p_l;  // (B x K)
};

inline Var encode(Graph& g, const ParamVars& pv, Var x) {
  return detail::two_layer(g, x, pv.enc(0), pv.enc(1), pv.enc(2), pv.enc(3));
}

inline Var global_branch_features(Graph& g, const ParamVars& pv, Var e_g) {
  return detail::two_layer(g, e_g, pv.ag(0), pv.ag(1), pv.ag(2), pv.ag(3));
}

/// Splits the embedding into four contiguous regions (tl, tr, bl, br), runs
/// each through its own aligner, and concatenates in that fixed order.
inline Var local_branch_features(Graph& g, const ParamVars& pv, Var e_g,
                                 const ArchConfig& arch) {
  std::size_t rd = arch.region_dim();
  std::vector<Var> region_feats;
  for (int r = 0; r < 4; ++r) {
    Var chunk = g.slice_cols(e_g, r * rd, (r + 1) * rd);
    region_feats.push_back(
        detail::two_layer(g, chunk, pv.al(r, 0), pv.al(r, 1), pv.al(r, 2), pv.al(r, 3)));
  }
  return g.concat(region_feats, 1);
}

inline BranchVars forward_on_graph(Graph& g, const ParamVars& pv, const ArchConfig& arch,
                                   const Tensor& x) {
  if (x.ndim() != 2 || x.cols() != arch.input_dim)
    throw ShapeError("forward: input " + x.shape_str() + " does not match input_dim " +
                     std::to_string(arch.input_dim));
  BranchVars out;
  Var xin = g.constant(x);
  out.e_g = encode(g, pv, xin);
  out.f_g = global_branch_features(g, pv, out.e_g);
  out.p_g = g.softmax(detail::dense(g, out.f_g, pv.cg(0), pv.cg(1)));
  out.f_l = local_branch_features(g, pv, out.e_g, arch);
  out.p_l = g.softmax(detail::dense(g, out.f_l, pv.cl(0), pv.cl(1)));
  return out;
}

/// Per-batch features and predictions from both branches.
struct BranchOutputs {
  Tensor e_g;
  Tensor f_g;
  Tensor p_g;
  Tensor f_l;
  Tensor p_l;
};

inline BranchOutputs forward(const ModelParams& params, const Tensor& x) {
  Graph g;
  ParamVars pv = ParamVars::constants(g, params);
  BranchVars v = forward_on_graph(g, pv, params.arch, x);
  return BranchOutputs{g.value(v.e_g), g.value(v.f_g), g.value(v.p_g), g.value(v.f_l),
                       g.value(v.p_l)};
}

/// Per-sample prediction: the branch with the higher maximum probability wins
/// (ties go to the global branch; argmax ties go to the lowest class index).
inline std::vector<int> infer(const ModelParams& params, const Tensor& x) {
  BranchOutputs out = forward(params, x);
  std::vector<int> labels(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mg = max_row(out.p_g, i);
    double ml = max_row(out.p_l, i);
    const Tensor& p = mg >= ml ? out.p_g : out.p_l;
    labels[i] = static_cast<int>(argmax_row(p, i));
  }
  return labels;
}

// --- checkpoint format ---
//
// Line 1:  #lacmfer-ckpt-v1 input_dim=.. embed_dim=.. global_hidden=..
//          local_hidden_per_region=.. num_classes=..
// Then one line per tensor: "<name> <rows> <cols> v0 v1 ...", values printed
// with 17 significant digits so the round trip is bit exact.

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint: " + path);
  const ArchConfig& a = params.arch;
  out << "#lacmfer-ckpt-v1 input_dim=" << a.input_dim << " embed_dim=" << a.embed_dim
      << " global_hidden=" << a.global_hidden
      << " local_hidden_per_region=" << a.local_hidden_per_region
      << " num_classes=" << a.num_classes << "\n";
  params.for_each([&](const std::string& name, const Tensor& t) {
    out << name << " " << t.rows() << " " << t.cols();
    for (double v : t.data) out << " " << detail::fmt_double(v);
    out << "\n";
  });
  if (!out) throw Error("failed writing checkpoint: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint: " + path);
  std::string line;
  long lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint", lineno);
  std::istringstream hs(line);
  std::string magic;
  hs >> magic;
  if (magic != "#lacmfer-ckpt-v1") throw ParseError("bad checkpoint magic", lineno);
  ArchConfig arch;
  std::string kv;
  while (hs >> kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("bad header token '" + kv + "'", lineno);
    std::string key = kv.substr(0, eq);
    std::size_t val = std::stoul(kv.substr(eq + 1));
    if (key == "input_dim") arch.input_dim = val;
    else if (key == "embed_dim") arch.embed_dim = val;
    else if (key == "global_hidden") arch.global_hidden = val;
    else if (key == "local_hidden_per_region") arch.local_hidden_per_region = val;
    else if (key == "num_classes") arch.num_classes = val;
    else throw ParseError("unknown header key '" + key + "'", lineno);
  }
  arch.validate();
  ModelParams params = init_params(arch, 0);
  params.for_each([&](const std::string& name, Tensor& t) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("missing tensor '" + name + "'", lineno);
    std::istringstream ls(line);
    std::string got;
    std::size_t r = 0, c = 0;
    if (!(ls >> got >> r >> c)) throw ParseError("bad tensor line", lineno);
    if (got != name) throw ParseError("expected tensor '" + name + "', got '" + got + "'", lineno);
    if (r != t.rows() || c != t.cols())
      throw ParseError("tensor '" + name + "' has shape " + std::to_string(r) + "x" +
                           std::to_string(c) + ", expected " + t.shape_str(),
                       lineno);
    for (double& v : t.data)
      if (!(ls >> v)) throw ParseError("short value list for '" + name + "'", lineno);
    double extra;
    if (ls >> extra) throw ParseError("trailing values for '" + name + "'", lineno);
  });
  return params;
}

}  // namespace lacmfer
