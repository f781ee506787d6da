#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lacmfer/data.hpp"

#ifndef LACMFER_CLI_PATH
#error "LACMFER_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
  int exit_code;
  std::string stdout_text;
};

CmdResult run_cli(const std::string& args) {
  fs::path out = fs::temp_directory_path() / "lacmfer_cli_stdout.txt";
  std::string cmd = std::string(LACMFER_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(rc), ss.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& p) const { return (path / p).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

const char* kGenConfig = R"({
  "seed": 5,
  "n_sources": 2,
  "num_classes": 3,
  "samples_per_class_per_domain": 12,
  "shift_strength": 0.4,
  "ambiguity": 0.2
})";

const char* kTrainConfig = R"({
  "arch": {"input_dim": 2, "embed_dim": 8, "global_hidden": 6,
           "local_hidden_per_region": 2, "num_classes": 3},
  "seed": 3,
  "total_iters": 15,
  "batch_size": 8,
  "eval_every": 5
})";

}  // namespace

TEST_CASE("smoke pipeline: gen-data, train, eval, export all exit 0") {
  TempDir dir("lacmfer_cli_smoke");
  write_file(dir / "gen.json", kGenConfig);
  write_file(dir / "train.json", kTrainConfig);

  CmdResult gen = run_cli("gen-data --config " + (dir / "gen.json") + " --out " + (dir / "data"));
  CHECK(gen.exit_code == 0);
  // one file per domain/split plus the resolved config
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "data"))
    if (e.path().extension() == ".txt") ++files;
  CHECK(files == 6);
  CHECK(fs::exists(fs::path(dir / "data") / "gen_config.json"));

  CmdResult tr = run_cli("train --config " + (dir / "train.json") + " --data " + (dir / "data") +
                         " --out " + (dir / "run"));
  CHECK(tr.exit_code == 0);
  CHECK(fs::exists(fs::path(dir / "run") / "checkpoint.txt"));
  CHECK(fs::exists(fs::path(dir / "run") / "diagnostics.jsonl"));
  CHECK(fs::exists(fs::path(dir / "run") / "metrics.json"));
  CHECK(fs::exists(fs::path(dir / "run") / "config.json"));

  // diagnostics: one JSON object per iteration
  std::ifstream log(fs::path(dir / "run") / "diagnostics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    json j = json::parse(line);
    CHECK(j.contains("l_total"));
    ++lines;
  }
  CHECK(lines == 15);

  CmdResult ev =
      run_cli("eval --checkpoint " + (dir / "run") + "/checkpoint.txt --data " + (dir / "data"));
  CHECK(ev.exit_code == 0);
  json evj = json::parse(ev.stdout_text);
  CHECK(evj.contains("accuracy"));
  CHECK(evj.contains("target_geometry"));
  CHECK(evj.contains("sources_geometry"));

  CmdResult ex = run_cli("export --checkpoint " + (dir / "run") + "/checkpoint.txt --data " +
                         (dir / "data") + " --out " + (dir / "emb.csv"));
  CHECK(ex.exit_code == 0);
  CHECK(fs::exists(dir / "emb.csv"));
}

TEST_CASE("re-running train with the resolved config reproduces outputs bit-identically") {
  TempDir dir("lacmfer_cli_repro");
  write_file(dir / "gen.json", kGenConfig);
  write_file(dir / "train.json", kTrainConfig);
  REQUIRE(run_cli("gen-data --config " + (dir / "gen.json") + " --out " + (dir / "data")).exit_code == 0);
  REQUIRE(run_cli("train --config " + (dir / "train.json") + " --data " + (dir / "data") +
                  " --out " + (dir / "run1")).exit_code == 0);
  // second run driven by the resolved config the first run wrote
  REQUIRE(run_cli("train --config " + (dir / "run1") + "/config.json --data " + (dir / "data") +
                  " --out " + (dir / "run2")).exit_code == 0);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(slurp(dir / "run1/checkpoint.txt") == slurp(dir / "run2/checkpoint.txt"));
  CHECK(slurp(dir / "run1/diagnostics.jsonl") == slurp(dir / "run2/diagnostics.jsonl"));
  CHECK(slurp(dir / "run1/metrics.json") == slurp(dir / "run2/metrics.json"));
}

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("no-such-command").exit_code == 1);
  CHECK(run_cli("train --config only").exit_code == 1);  // missing required flags
  CHECK(run_cli("train --config a --data b --out c --bogus-flag").exit_code == 1);
}

TEST_CASE("config errors exit 2 and name the field") {
  TempDir dir("lacmfer_cli_cfg");
  write_file(dir / "gen.json", kGenConfig);
  REQUIRE(run_cli("gen-data --config " + (dir / "gen.json") + " --out " + (dir / "data")).exit_code == 0);

  SUBCASE("negative alpha") {
    write_file(dir / "bad.json", R"({"alpha": -0.5})");
    CmdResult r = run_cli("train --config " + (dir / "bad.json") + " --data " + (dir / "data") +
                          " --out " + (dir / "run"));
    CHECK(r.exit_code == 2);
    CHECK(r.stdout_text.find("alpha") != std::string::npos);
  }
  SUBCASE("unknown key") {
    write_file(dir / "bad.json", R"({"alhpa": 0.5})");
    CmdResult r = run_cli("train --config " + (dir / "bad.json") + " --data " + (dir / "data") +
                          " --out " + (dir / "run"));
    CHECK(r.exit_code == 2);
    CHECK(r.stdout_text.find("alhpa") != std::string::npos);
  }
  SUBCASE("malformed JSON") {
    write_file(dir / "bad.json", "{nope");
    CmdResult r = run_cli("train --config " + (dir / "bad.json") + " --data " + (dir / "data") +
                          " --out " + (dir / "run"));
    CHECK(r.exit_code == 2);
  }
  SUBCASE("missing config file") {
    CmdResult r = run_cli("train --config " + (dir / "definitely_absent.json") + " --data " +
                          (dir / "data") + " --out " + (dir / "run"));
    CHECK(r.exit_code == 2);
  }
  SUBCASE("corrupt dataset file reports the line") {
    write_file((fs::path(dir / "data") / "domain0_source_train.txt").string(),
               "#lacmfer-v1 input_dim=2 K=3 domain=0 role=source split=train\n0,1.0\n");
    write_file(dir / "train.json", kTrainConfig);
    CmdResult r = run_cli("train --config " + (dir / "train.json") + " --data " + (dir / "data") +
                          " --out " + (dir / "run"));
    CHECK(r.exit_code == 2);
    CHECK(r.stdout_text.find("line 2") != std::string::npos);
  }
}

TEST_CASE("ablate runs a reduced ladder with sweeps and writes the report") {
  TempDir dir("lacmfer_cli_abl");
  write_file(dir / "gen.json", kGenConfig);
  write_file(dir / "train.json", kTrainConfig);
  REQUIRE(run_cli("gen-data --config " + (dir / "gen.json") + " --out " + (dir / "data")).exit_code == 0);
  CmdResult r = run_cli("ablate --config " + (dir / "train.json") + " --data " + (dir / "data") +
                        " --seeds 1,2 --variants AF --pseudo-sweep --consistency-sweep --out " +
                        (dir / "abl"));
  CHECK(r.exit_code == 0);
  json j = json::parse(std::ifstream(fs::path(dir / "abl") / "ablation.json"));
  CHECK(j.contains("A"));
  CHECK(j.contains("F"));
  CHECK(j.contains("F_spl"));
  CHECK(j.contains("F_kl"));
  CHECK(j.contains("F_l1"));
  CHECK(j.contains("F_mse"));
  CHECK(j["A"]["per_seed"].size() == 2);
}
