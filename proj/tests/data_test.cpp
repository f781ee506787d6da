#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "lacmfer/alignment.hpp"
#include "lacmfer/data.hpp"

using namespace lacmfer;
namespace fs = std::filesystem;

namespace {

GenConfig small_gen() {
  GenConfig c;
  c.seed = 11;
  c.n_sources = 2;
  c.num_classes = 3;
  c.samples_per_class_per_domain = 12;
  c.shift_strength = 0.5;
  c.ambiguity = 0.0;
  return c;
}

const Dataset& find_dataset(const GeneratedProblem& p, int domain, Split split) {
  for (const Dataset& d : p.datasets)
    if (d.domain_id == domain && d.split == split) return d;
  throw std::logic_error("dataset not found");
}

}  // namespace

TEST_CASE("generate is deterministic in the seed") {
  GeneratedProblem a = generate(small_gen());
  GeneratedProblem b = generate(small_gen());
  REQUIRE(a.datasets.size() == b.datasets.size());
  for (std::size_t i = 0; i < a.datasets.size(); ++i) CHECK(a.datasets[i] == b.datasets[i]);

  GenConfig other = small_gen();
  other.seed = 12;
  GeneratedProblem c = generate(other);
  CHECK_FALSE(a.datasets[0] == c.datasets[0]);
}

TEST_CASE("generate structure: one target, N sources, every class in every source train split") {
  GenConfig cfg = small_gen();
  GeneratedProblem p = generate(cfg);
  CHECK(p.specs.size() == 3);
  CHECK(p.datasets.size() == 6);  // train+eval per domain
  int targets = 0;
  for (const DomainSpec& s : p.specs)
    if (s.role == Role::kTarget) ++targets;
  CHECK(targets == 1);
  for (int d = 0; d < cfg.n_sources; ++d) {
    const Dataset& train = find_dataset(p, d, Split::kTrain);
    std::set<int> classes;
    for (const Sample& s : train.samples) classes.insert(s.label);
    CHECK(classes.size() == static_cast<std::size_t>(cfg.num_classes));
  }
}

TEST_CASE("K < 2 is rejected") {
  GenConfig cfg = small_gen();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(generate(cfg), ConfigError);
}

TEST_CASE("zero shift and zero ambiguity make domains identically distributed") {
  GenConfig cfg = small_gen();
  cfg.shift_strength = 0.0;
  GeneratedProblem p = generate(cfg);
  for (const DomainSpec& s : p.specs) {
    CHECK(s.rotation == 0.0);
    CHECK(s.scale == doctest::Approx(1.0));
    for (double t : s.translation) CHECK(t == 0.0);
  }
}

TEST_CASE("ambiguity 1 makes the paired means coincide in the target only") {
  GenConfig cfg = small_gen();
  cfg.ambiguity = 1.0;
  cfg.samples_per_class_per_domain = 400;
  GeneratedProblem p = generate(cfg);
  const Dataset& tgt = find_dataset(p, cfg.n_sources, Split::kTrain);
  const Dataset& src = find_dataset(p, 0, Split::kTrain);
  auto class_mean = [&](const Dataset& ds, int k) {
    std::vector<double> m(ds.input_dim, 0.0);
    int n = 0;
    for (const Sample& s : ds.samples)
      if (s.label == k) {
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += s.features[j];
        ++n;
      }
    for (double& v : m) v /= n;
    return m;
  };
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  };
  // with overlap 1 the pair's empirical means agree up to sampling noise
  double noise = 3.0 * cfg.class_covariance_scale / std::sqrt(400.0) * 2.0;
  CHECK(dist(class_mean(tgt, 0), class_mean(tgt, 1)) < noise);
  CHECK(dist(class_mean(src, 0), class_mean(src, 1)) > 3.0);
}

TEST_CASE("empirical class means converge to the transformed template means") {
  GenConfig cfg = small_gen();
  cfg.samples_per_class_per_domain = 4000;
  cfg.shift_strength = 0.8;
  GeneratedProblem p = generate(cfg);
  const DomainSpec& spec = p.specs[0];
  const Dataset& ds = find_dataset(p, 0, Split::kTrain);
  for (int k = 0; k < cfg.num_classes; ++k) {
    std::vector<double> mean(2, 0.0);
    int n = 0;
    for (const Sample& s : ds.samples)
      if (s.label == k) {
        mean[0] += s.features[0];
        mean[1] += s.features[1];
        ++n;
      }
    mean[0] /= n;
    mean[1] /= n;
    // expected: affine transform of the template mean
    double c = std::cos(spec.rotation), sn = std::sin(spec.rotation);
    double tx = spec.class_means[k][0], ty = spec.class_means[k][1];
    double ex = spec.scale * (c * tx - sn * ty) + spec.translation[0];
    double ey = spec.scale * (sn * tx + c * ty) + spec.translation[1];
    double tol = 3.0 * spec.scale * cfg.class_covariance_scale / std::sqrt(double(n));
    CHECK(std::fabs(mean[0] - ex) < tol);
    CHECK(std::fabs(mean[1] - ey) < tol);
  }
}

TEST_CASE("raw-feature MMD to the target is non-decreasing in shift strength") {
  for (std::uint64_t seed : {11ULL, 29ULL, 57ULL}) {
    std::vector<double> mmd_at_shift;
    for (double shift : {0.0, 0.5, 1.0}) {
      GenConfig cfg = small_gen();
      cfg.seed = seed;
      cfg.samples_per_class_per_domain = 60;
      cfg.shift_strength = shift;
      GeneratedProblem p = generate(cfg);
      const Dataset& tgt = find_dataset(p, cfg.n_sources, Split::kTrain);
      double avg = 0.0;
      for (int d = 0; d < cfg.n_sources; ++d) {
        const Dataset& src = find_dataset(p, d, Split::kTrain);
        avg += traditional_mmd(src.feature_matrix(), tgt.feature_matrix(), KernelConfig{});
      }
      mmd_at_shift.push_back(avg / cfg.n_sources);
    }
    CHECK(mmd_at_shift[1] >= mmd_at_shift[0]);
    CHECK(mmd_at_shift[2] >= mmd_at_shift[1]);
  }
}

TEST_CASE("save/load round trip is exact") {
  GeneratedProblem p = generate(small_gen());
  auto path = fs::temp_directory_path() / "lacmfer_data_roundtrip.txt";
  for (const Dataset& ds : p.datasets) {
    save(ds, path.string());
    Dataset back = load(path.string());
    CHECK(back == ds);
  }
  fs::remove(path);
}

TEST_CASE("malformed files give ParseError with line numbers") {
  auto path = fs::temp_directory_path() / "lacmfer_data_bad.txt";
  auto write = [&](const std::string& content) {
    std::ofstream out(path);
    out << content;
  };

  SUBCASE("bad magic") {
    write("#nope input_dim=2 K=3 domain=0 role=source split=train\n");
    try {
      load(path.string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 1);
    }
  }
  SUBCASE("row with wrong feature count fails at the first bad row") {
    write("#lacmfer-v1 input_dim=2 K=3 domain=0 role=source split=train\n"
          "0,1.0,2.0\n"
          "1,3.0\n");
    try {
      load(path.string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("non-numeric feature") {
    write("#lacmfer-v1 input_dim=2 K=3 domain=0 role=source split=train\n"
          "0,1.0,zebra\n");
    try {
      load(path.string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("label out of range") {
    write("#lacmfer-v1 input_dim=2 K=3 domain=0 role=source split=train\n"
          "7,1.0,2.0\n");
    CHECK_THROWS_AS(load(path.string()), ParseError);
  }
  fs::remove(path);
}

TEST_CASE("target train batches carry no labels; source batches do") {
  GeneratedProblem p = generate(small_gen());
  const Dataset& tgt = find_dataset(p, 2, Split::kTrain);
  const Dataset& src = find_dataset(p, 0, Split::kTrain);
  std::vector<Batch> tb = batches(tgt, 8, 5, 0);
  std::vector<Batch> sb = batches(src, 8, 5, 0);
  for (const Batch& b : tb) CHECK(b.labels.empty());
  for (const Batch& b : sb) CHECK(b.labels.size() == b.x.rows());
}

TEST_CASE("batch sizes: 10 samples at batch 4 give 4,4,2 and the short tail is kept") {
  Dataset ds;
  ds.input_dim = 1;
  ds.num_classes = 2;
  ds.domain_id = 0;
  ds.role = Role::kSource;
  ds.split = Split::kTrain;
  for (int i = 0; i < 10; ++i) ds.samples.push_back({{double(i)}, i % 2, 0});
  std::vector<Batch> bs = batches(ds, 4, 1, 0);
  REQUIRE(bs.size() == 3);
  CHECK(bs[0].x.rows() == 4);
  CHECK(bs[1].x.rows() == 4);
  CHECK(bs[2].x.rows() == 2);
  CHECK_THROWS_AS(batches(ds, 1, 1, 0), ConfigError);
}

TEST_CASE("same (seed, epoch) gives identical batch order; epochs differ") {
  GeneratedProblem p = generate(small_gen());
  const Dataset& src = find_dataset(p, 0, Split::kTrain);
  std::vector<Batch> a = batches(src, 8, 42, 3);
  std::vector<Batch> b = batches(src, 8, 42, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].x.data == b[i].x.data);

  int distinct = 0;
  std::vector<Batch> base = batches(src, 8, 42, 0);
  for (int epoch = 1; epoch <= 100; ++epoch) {
    std::vector<Batch> e = batches(src, 8, 42, epoch);
    if (e[0].x.data != base[0].x.data) ++distinct;
  }
  CHECK(distinct >= 99);  // overwhelming probability of a different order
}

TEST_CASE("cycler hands out epochs back to back") {
  GeneratedProblem p = generate(small_gen());
  const Dataset& src = find_dataset(p, 0, Split::kTrain);  // 36 samples
  BatchCycler cyc(src, 16, 9);
  std::size_t epoch_batches = (src.samples.size() + 15) / 16;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < 3 * epoch_batches; ++i) seen += cyc.next().x.rows();
  CHECK(seen == 3 * src.samples.size());
}
