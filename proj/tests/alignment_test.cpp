#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lacmfer/alignment.hpp"
#include "lacmfer/grad_check.hpp"
#include "lacmfer/rng.hpp"

using namespace lacmfer;

namespace {

Tensor random_features(Rng& rng, std::size_t n, std::size_t d, double spread = 2.0) {
  Tensor t = Tensor::zeros({n, d});
  for (double& v : t.data) v = rng.uniform(-spread, spread);
  return t;
}

Tensor random_prob_rows(Rng& rng, std::size_t n, std::size_t k) {
  Tensor t = Tensor::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double e = std::exp(rng.uniform(-2.0, 2.0));
      t.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < k; ++j) t.at(i, j) /= z;
  }
  return t;
}

// Independent reference: weighted MMD via explicit double loops, same median
// bandwidth rule, no graph machinery.
double bf_weighted_mmd(const Tensor& fs, const std::vector<double>& ws, const Tensor& ft,
                       const std::vector<double>& wt, const std::vector<double>& mults) {
  auto sqdist = [](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double d = a.at(i, k) - b.at(j, k);
      s += d * d;
    }
    return s;
  };
  std::vector<double> pairs;
  for (std::size_t i = 0; i < fs.rows(); ++i)
    for (std::size_t j = i + 1; j < fs.rows(); ++j) pairs.push_back(sqdist(fs, i, fs, j));
  for (std::size_t i = 0; i < ft.rows(); ++i)
    for (std::size_t j = i + 1; j < ft.rows(); ++j) pairs.push_back(sqdist(ft, i, ft, j));
  for (std::size_t i = 0; i < fs.rows(); ++i)
    for (std::size_t j = 0; j < ft.rows(); ++j) pairs.push_back(sqdist(fs, i, ft, j));
  std::sort(pairs.begin(), pairs.end());
  double base = pairs.empty() ? 0.0
                : pairs.size() % 2 == 1 ? pairs[pairs.size() / 2]
                : 0.5 * (pairs[pairs.size() / 2 - 1] + pairs[pairs.size() / 2]);
  if (!(base > 0.0)) base = 1.0;
  auto kmix = [&](double d2) {
    double s = 0.0;
    for (double m : mults) s += std::exp(-d2 / (2.0 * base * m));
    return s / static_cast<double>(mults.size());
  };
  double total = 0.0;
  for (std::size_t i = 0; i < fs.rows(); ++i)
    for (std::size_t j = 0; j < fs.rows(); ++j) total += ws[i] * ws[j] * kmix(sqdist(fs, i, fs, j));
  for (std::size_t i = 0; i < ft.rows(); ++i)
    for (std::size_t j = 0; j < ft.rows(); ++j) total += wt[i] * wt[j] * kmix(sqdist(ft, i, ft, j));
  for (std::size_t i = 0; i < fs.rows(); ++i)
    for (std::size_t j = 0; j < ft.rows(); ++j)
      total -= 2.0 * ws[i] * wt[j] * kmix(sqdist(fs, i, ft, j));
  return total;
}

WeightedBatchFeatures make_wbf(const Tensor& feats, std::vector<double> weights,
                               std::vector<int> classes = {}, bool is_target = false) {
  WeightedBatchFeatures b;
  b.features = feats;
  b.weights = std::move(weights);
  b.class_attr = std::move(classes);
  b.reliable.assign(feats.rows(), true);
  b.is_target = is_target;
  return b;
}

std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace

TEST_CASE("hardness hand values") {
  CHECK(hardness({1.0, 0.0, 0.0}, std::nullopt) == doctest::Approx(0.0));
  CHECK(hardness({0.6, 0.3, 0.1}, std::nullopt) ==
        doctest::Approx(std::sqrt(0.10)).epsilon(1e-12));
  CHECK(hardness({0.5, 0.3, 0.2}, 0) == doctest::Approx(std::sqrt(0.13)).epsilon(1e-12));
  CHECK_THROWS_AS(hardness({0.5, 0.5}, 2), IndexError);
  // tie: only the lowest-index maximum is zeroed
  CHECK(hardness({0.4, 0.4, 0.2}, std::nullopt) ==
        doctest::Approx(std::sqrt(0.4 * 0.4 + 0.2 * 0.2)).epsilon(1e-12));
}

TEST_CASE("hardness is zero iff one-hot target or all mass on the real class") {
  Rng rng(2024);
  for (int t = 0; t < 50; ++t) {
    Tensor p = random_prob_rows(rng, 1, 4);
    std::vector<double> row(p.data);
    // generic rows are strictly positive in several entries, so hardness > 0
    CHECK(hardness(row, std::nullopt) > 0.0);
    CHECK(hardness(row, 1) > 0.0);
  }
  CHECK(hardness({0.0, 1.0, 0.0}, 1) == 0.0);
}

TEST_CASE("relative_weights hand values and fallback") {
  CHECK(relative_weights({1, 1, 1, 1}) == std::vector<double>{0.25, 0.25, 0.25, 0.25});
  CHECK(relative_weights({0, 0}) == std::vector<double>{0.5, 0.5});
  CHECK(relative_weights({3, 1}) == std::vector<double>{0.75, 0.25});
  CHECK_THROWS_AS(relative_weights({}), EmptyBatchError);
}

TEST_CASE("relative_weights is permutation-equivariant and scale-invariant") {
  Rng rng(5);
  std::vector<double> omega;
  for (int i = 0; i < 6; ++i) omega.push_back(rng.uniform(0.0, 2.0));
  std::vector<double> h = relative_weights(omega);

  std::vector<double> perm = {omega[3], omega[0], omega[5], omega[1], omega[4], omega[2]};
  std::vector<double> hp = relative_weights(perm);
  CHECK(hp[0] == doctest::Approx(h[3]).epsilon(1e-15));
  CHECK(hp[2] == doctest::Approx(h[5]).epsilon(1e-15));

  std::vector<double> scaled = omega;
  for (double& v : scaled) v *= 17.5;
  std::vector<double> hs = relative_weights(scaled);
  for (std::size_t i = 0; i < h.size(); ++i)
    CHECK(hs[i] == doctest::Approx(h[i]).epsilon(1e-12));
}

TEST_CASE("monotonicity: raising one sample's hardness raises its weight") {
  std::vector<double> omega = {0.5, 0.8, 0.2, 0.9};
  double before = relative_weights(omega)[2];
  omega[2] = 0.6;
  double after = relative_weights(omega)[2];
  CHECK(after > before);
}

TEST_CASE("weighted_mmd of identical weighted batches is zero") {
  Rng rng(7);
  Tensor f = random_features(rng, 6, 3);
  std::vector<double> w = relative_weights({0.3, 0.1, 0.25, 0.05, 0.2, 0.1});
  auto v = weighted_mmd(make_wbf(f, w), make_wbf(f, w, {}, true), KernelConfig{});
  REQUIRE(v.has_value());
  CHECK(std::fabs(*v) < 1e-10);
}

TEST_CASE("uniform weights recover the traditional MMD within 1e-12") {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    std::size_t bs = 3 + rng.index(6), bt = 3 + rng.index(6);
    Tensor fs = random_features(rng, bs, 4);
    Tensor ft = random_features(rng, bt, 4);
    auto v = weighted_mmd(make_wbf(fs, uniform_weights(bs)),
                          make_wbf(ft, uniform_weights(bt), {}, true), KernelConfig{});
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(traditional_mmd(fs, ft, KernelConfig{})).epsilon(1e-12));
  }
}

TEST_CASE("one-dimensional hand value: batches {0} and {1}, single bandwidth") {
  KernelConfig kc;
  kc.bandwidth_multipliers = {1.0};
  Tensor a = Tensor::from_rows({{0.0}});
  Tensor b = Tensor::from_rows({{1.0}});
  auto v = weighted_mmd(make_wbf(a, {1.0}), make_wbf(b, {1.0}, {}, true), kc);
  REQUIRE(v.has_value());
  CHECK(*v == doctest::Approx(2.0 - 2.0 * std::exp(-0.5)).epsilon(1e-12));
  CHECK(*v == doctest::Approx(0.78694).epsilon(1e-4));
}

TEST_CASE("weighted_mmd matches the brute-force double loop") {
  Rng rng(13);
  for (int t = 0; t < 10; ++t) {
    std::size_t bs = 2 + rng.index(6), bt = 2 + rng.index(6);
    Tensor fs = random_features(rng, bs, 3);
    Tensor ft = random_features(rng, bt, 3);
    std::vector<double> os, ot;
    for (std::size_t i = 0; i < bs; ++i) os.push_back(rng.uniform(0.0, 1.0));
    for (std::size_t i = 0; i < bt; ++i) ot.push_back(rng.uniform(0.0, 1.0));
    std::vector<double> ws = relative_weights(os), wt = relative_weights(ot);
    auto v = weighted_mmd(make_wbf(fs, ws), make_wbf(ft, wt, {}, true), KernelConfig{});
    REQUIRE(v.has_value());
    double ref = bf_weighted_mmd(fs, ws, ft, wt, KernelConfig{}.bandwidth_multipliers);
    CHECK(*v == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("weighted_mmd is symmetric and bounded below by -1e-10") {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    Tensor fs = random_features(rng, 5, 2);
    Tensor ft = random_features(rng, 4, 2);
    std::vector<double> ws = uniform_weights(5), wt = uniform_weights(4);
    auto ab = weighted_mmd(make_wbf(fs, ws), make_wbf(ft, wt, {}, true), KernelConfig{});
    auto ba = weighted_mmd(make_wbf(ft, wt, {}, true), make_wbf(fs, ws), KernelConfig{});
    REQUIRE(ab.has_value());
    REQUIRE(ba.has_value());
    CHECK(*ab == doctest::Approx(*ba).epsilon(1e-12));
    CHECK(*ab >= -1e-10);
  }
}

TEST_CASE("weighted_mmd skips when a side is empty after masking") {
  Rng rng(19);
  WeightedBatchFeatures s = make_wbf(random_features(rng, 3, 2), uniform_weights(3));
  WeightedBatchFeatures t = make_wbf(random_features(rng, 3, 2), uniform_weights(3), {}, true);
  t.reliable.assign(3, false);
  CHECK_FALSE(weighted_mmd(s, t, KernelConfig{}).has_value());
}

TEST_CASE("weighted_mmd rejects mismatched feature dims") {
  Rng rng(23);
  WeightedBatchFeatures s = make_wbf(random_features(rng, 3, 2), uniform_weights(3));
  WeightedBatchFeatures t = make_wbf(random_features(rng, 3, 5), uniform_weights(3), {}, true);
  CHECK_THROWS_AS(weighted_mmd(s, t, KernelConfig{}), ShapeError);
}

TEST_CASE("cluster alignment: identical same-class clusters, distinct classes, is negative") {
  // class 0 at 0, class 1 at 5, identical across domains
  Tensor fs = Tensor::from_rows({{0.0}, {0.1}, {5.0}, {5.1}});
  Tensor ft = fs;
  std::vector<int> cls = {0, 0, 1, 1};
  auto v = cluster_alignment(make_wbf(fs, uniform_weights(4), cls),
                             make_wbf(ft, uniform_weights(4), cls, true), KernelConfig{}, 2);
  REQUIRE(v.has_value());
  CHECK(*v < 0.0);
}

TEST_CASE("cluster alignment skip rules") {
  Tensor fs = Tensor::from_rows({{0.0}, {0.2}, {5.0}});
  Tensor ft = Tensor::from_rows({{0.1}, {0.3}});

  SUBCASE("missing same-class target cluster is skipped per class") {
    // target has nothing pseudo-labeled 1: class 1 contributes only the push term
    auto v = cluster_alignment(make_wbf(fs, uniform_weights(3), {0, 0, 1}),
                               make_wbf(ft, uniform_weights(2), {0, 0}, true), KernelConfig{}, 2);
    REQUIRE(v.has_value());
    // hand-assembled: class 0 pull (ft vs fs[0,1]), class 0 has no push pool,
    // class 1 push only
    auto pull0 = bf_weighted_mmd(Tensor::from_rows({{0.0}, {0.2}}), uniform_weights(2), ft,
                                 uniform_weights(2), KernelConfig{}.bandwidth_multipliers);
    auto push1 = bf_weighted_mmd(Tensor::from_rows({{5.0}}), {1.0}, ft, uniform_weights(2),
                                 KernelConfig{}.bandwidth_multipliers);
    CHECK(*v == doctest::Approx((pull0 - push1) / 2.0).epsilon(1e-10));
  }

  SUBCASE("single class on both sides: cross pool empty, result is plain MMD, non-negative") {
    auto v = cluster_alignment(make_wbf(fs, uniform_weights(3), {0, 0, 0}),
                               make_wbf(ft, uniform_weights(2), {0, 0}, true), KernelConfig{}, 2);
    REQUIRE(v.has_value());
    auto direct = weighted_mmd(make_wbf(fs, uniform_weights(3)),
                               make_wbf(ft, uniform_weights(2), {}, true), KernelConfig{});
    CHECK(*v == doctest::Approx(*direct).epsilon(1e-12));
    CHECK(*v >= -1e-10);
  }

  SUBCASE("no contributing class returns the skip signal") {
    WeightedBatchFeatures s = make_wbf(fs, uniform_weights(3), {0, 0, 0});
    s.reliable.assign(3, false);
    CHECK_FALSE(cluster_alignment(s, make_wbf(ft, uniform_weights(2), {0, 0}, true),
                                  KernelConfig{}, 2)
                    .has_value());
  }
}

TEST_CASE("cluster weights are renormalized within the cluster") {
  // two clusters with unequal batch-level weights; the per-cluster means must
  // use weights that sum to one inside each cluster
  Tensor fs = Tensor::from_rows({{0.0}, {1.0}, {5.0}});
  Tensor ft = Tensor::from_rows({{0.5}, {4.5}});
  std::vector<double> ws = {0.6, 0.2, 0.2};
  std::vector<double> wt = {0.7, 0.3};
  auto v = cluster_alignment(make_wbf(fs, ws, {0, 0, 1}), make_wbf(ft, wt, {0, 1}, true),
                             KernelConfig{}, 2);
  REQUIRE(v.has_value());
  auto mults = KernelConfig{}.bandwidth_multipliers;
  // class 0: src {0,1} weights {0.75,0.25}; tgt same {0.5}, diff {4.5}
  double pull0 = bf_weighted_mmd(Tensor::from_rows({{0.0}, {1.0}}), {0.75, 0.25},
                                 Tensor::from_rows({{0.5}}), {1.0}, mults);
  double push0 = bf_weighted_mmd(Tensor::from_rows({{0.0}, {1.0}}), {0.75, 0.25},
                                 Tensor::from_rows({{4.5}}), {1.0}, mults);
  double pull1 = bf_weighted_mmd(Tensor::from_rows({{5.0}}), {1.0},
                                 Tensor::from_rows({{4.5}}), {1.0}, mults);
  double push1 = bf_weighted_mmd(Tensor::from_rows({{5.0}}), {1.0},
                                 Tensor::from_rows({{0.5}}), {1.0}, mults);
  CHECK(*v == doctest::Approx((pull0 - push0 + pull1 - push1) / 2.0).epsilon(1e-10));
}

namespace {

InterDomainBatch random_inter_batch(Rng& rng, std::size_t b, std::size_t d, std::size_t k,
                                    bool labeled) {
  InterDomainBatch ib;
  ib.f_g = random_features(rng, b, d);
  ib.p_g = random_prob_rows(rng, b, k);
  ib.f_l = random_features(rng, b, d + 1);
  ib.p_l = random_prob_rows(rng, b, k);
  if (labeled)
    for (std::size_t i = 0; i < b; ++i) ib.labels.push_back(static_cast<int>(rng.index(k)));
  return ib;
}

}  // namespace

TEST_CASE("inter_domain_loss: epsilon = 1 masks everything, N*4 skips, loss 0") {
  Rng rng(31);
  std::vector<InterDomainBatch> sources = {random_inter_batch(rng, 5, 3, 3, true),
                                           random_inter_batch(rng, 6, 3, 3, true)};
  InterDomainBatch target = random_inter_batch(rng, 7, 3, 3, false);
  InterOptions opt;
  opt.num_classes = 3;
  opt.epsilon = 1.0;
  InterDiagnostics diag;
  double v = inter_domain_loss(sources, target, opt, &diag);
  CHECK(v == 0.0);
  CHECK(diag.skipped_terms == 2 * 4);
  CHECK(diag.target_survivors[0] == 0);
  CHECK(diag.target_survivors[1] == 0);
}

TEST_CASE("inter_domain_loss: lambda = 0 keeps only sample-level terms") {
  Rng rng(37);
  std::vector<InterDomainBatch> sources = {random_inter_batch(rng, 5, 3, 3, true)};
  InterDomainBatch target = random_inter_batch(rng, 6, 3, 3, false);
  InterOptions opt;
  opt.num_classes = 3;
  opt.lambda = 0.0;
  opt.epsilon_filter = false;
  InterDiagnostics diag;
  double v = inter_domain_loss(sources, target, opt, &diag);
  CHECK(v == doctest::Approx(diag.sid[0] + diag.sid[1]).epsilon(1e-12));
  CHECK(diag.cid[0] == 0.0);
  CHECK(diag.cid[1] == 0.0);
}

TEST_CASE("inter_domain_loss equals the hand-assembled sum of component calls") {
  Rng rng(41);
  std::size_t k = 4;
  std::vector<InterDomainBatch> sources = {random_inter_batch(rng, 8, 3, k, true),
                                           random_inter_batch(rng, 7, 3, k, true)};
  InterDomainBatch target = random_inter_batch(rng, 9, 3, k, false);
  InterOptions opt;
  opt.num_classes = static_cast<int>(k);
  opt.lambda = 0.02;
  opt.epsilon = 0.4;

  InterDiagnostics diag;
  double v = inter_domain_loss(sources, target, opt, &diag);

  // assemble from hardness + relative_weights + weighted_mmd + cluster_alignment
  auto branch_wbf = [&](const Tensor& f, const Tensor& p, const std::vector<int>& labels,
                        bool is_target) {
    std::size_t b = f.rows();
    WeightedBatchFeatures w;
    w.features = f;
    w.is_target = is_target;
    w.reliable.resize(b);
    std::vector<double> omega;
    std::vector<std::size_t> surv;
    for (std::size_t i = 0; i < b; ++i) {
      double top = max_row(p, i);
      w.reliable[i] = top > opt.epsilon;
      if (w.reliable[i]) surv.push_back(i);
    }
    for (std::size_t i : surv) {
      std::vector<double> row(p.cols());
      for (std::size_t j = 0; j < p.cols(); ++j) row[j] = p.at(i, j);
      omega.push_back(is_target ? hardness(row, std::nullopt)
                                : hardness(row, labels[i]));
    }
    w.weights.assign(b, 0.0);
    w.class_attr.assign(b, 0);
    if (!surv.empty()) {
      std::vector<double> h = relative_weights(omega);
      for (std::size_t q = 0; q < surv.size(); ++q) w.weights[surv[q]] = h[q];
    }
    for (std::size_t i = 0; i < b; ++i)
      w.class_attr[i] = is_target ? static_cast<int>(argmax_row(p, i)) : labels[i];
    return w;
  };

  double expected = 0.0;
  for (const InterDomainBatch& s : sources) {
    for (int m = 0; m < 2; ++m) {
      const Tensor& sf = m == 0 ? s.f_g : s.f_l;
      const Tensor& sp = m == 0 ? s.p_g : s.p_l;
      const Tensor& tf = m == 0 ? target.f_g : target.f_l;
      const Tensor& tp = m == 0 ? target.p_g : target.p_l;
      WeightedBatchFeatures sw = branch_wbf(sf, sp, s.labels, false);
      WeightedBatchFeatures tw = branch_wbf(tf, tp, {}, true);
      auto sid = weighted_mmd(sw, tw, opt.kernel);
      if (sid) expected += *sid;
      auto cid = cluster_alignment(sw, tw, opt.kernel, opt.num_classes);
      if (cid) expected += opt.lambda * *cid;
    }
  }
  CHECK(v == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("alignment losses match finite differences w.r.t. input features") {
  Rng rng(47);
  Tensor fs = random_features(rng, 6, 3);
  Tensor ft = random_features(rng, 5, 3);
  Tensor ps = random_prob_rows(rng, 6, 3);
  Tensor pt = random_prob_rows(rng, 5, 3);
  std::vector<int> slabels = {0, 1, 2, 0, 1, 2};
  std::vector<int> pseudo;
  for (std::size_t i = 0; i < 5; ++i) pseudo.push_back(static_cast<int>(argmax_row(pt, i)));

  SUBCASE("weighted mmd with hardness weights") {
    std::vector<ParamRef> refs = {{"fs", &fs}, {"ft", &ft}};
    auto rep = grad_check(
        refs,
        [&](Graph& g, const std::vector<Var>& v) {
          Var ws = simplex_weights_g(g, hardness_g(g, g.constant(ps), &slabels));
          Var wt = simplex_weights_g(g, hardness_g(g, g.constant(pt), nullptr));
          return weighted_mmd_g(g, v[0], ws, v[1], wt, KernelConfig{});
        },
        1e-5, 1e-4);
    CHECK(rep.passed);
  }

  SUBCASE("cluster alignment") {
    std::vector<ParamRef> refs = {{"fs", &fs}, {"ft", &ft}};
    auto rep = grad_check(
        refs,
        [&](Graph& g, const std::vector<Var>& v) {
          Var ws = simplex_weights_g(g, hardness_g(g, g.constant(ps), &slabels));
          Var wt = simplex_weights_g(g, hardness_g(g, g.constant(pt), nullptr));
          ClusterAlignment ca =
              cluster_alignment_g(g, v[0], ws, slabels, v[1], wt, pseudo, KernelConfig{}, 3);
          REQUIRE(ca.loss.has_value());
          return *ca.loss;
        },
        1e-5, 1e-4);
    CHECK(rep.passed);
  }
}

TEST_CASE("kernel config validation") {
  KernelConfig kc;
  kc.bandwidth_multipliers = {};
  CHECK_THROWS_AS(kc.validate(), ConfigError);
  kc.bandwidth_multipliers = {1.0, -2.0};
  CHECK_THROWS_AS(kc.validate(), ConfigError);
}
