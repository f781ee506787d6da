// Command-line front end: dataset generation, training, evaluation, the
// ablation ladder, gradient verification and embedding export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lacmfer/ablation.hpp"
#include "lacmfer/config.hpp"
#include "lacmfer/data.hpp"
#include "lacmfer/eval.hpp"
#include "lacmfer/gradient_suite.hpp"
#include "lacmfer/model.hpp"
#include "lacmfer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lacmfer::ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw lacmfer::ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw lacmfer::Error("cannot write: " + path);
  out << content;
}

/// All datasets found in a directory, split by role.
struct DataDir {
  std::vector<lacmfer::Dataset> sources_train;
  std::optional<lacmfer::Dataset> target_train;
  std::optional<lacmfer::Dataset> target_eval;
  std::vector<lacmfer::Dataset> all;
};

DataDir load_data_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw lacmfer::ConfigError("not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  DataDir d;
  for (const std::string& p : paths) {
    lacmfer::Dataset ds = lacmfer::load(p);
    if (ds.role == lacmfer::Role::kSource && ds.split == lacmfer::Split::kTrain)
      d.sources_train.push_back(ds);
    else if (ds.role == lacmfer::Role::kTarget && ds.split == lacmfer::Split::kTrain) {
      if (d.target_train) throw lacmfer::ConfigError("multiple target train sets in " + dir);
      d.target_train = ds;
    } else if (ds.role == lacmfer::Role::kTarget && ds.split == lacmfer::Split::kEval) {
      if (d.target_eval) throw lacmfer::ConfigError("multiple target eval sets in " + dir);
      d.target_eval = ds;
    }
    d.all.push_back(std::move(ds));
  }
  std::sort(d.sources_train.begin(), d.sources_train.end(),
            [](const lacmfer::Dataset& a, const lacmfer::Dataset& b) {
              return a.domain_id < b.domain_id;
            });
  return d;
}

lacmfer::TrainData to_train_data(DataDir& d) {
  if (d.sources_train.empty()) throw lacmfer::ConfigError("no source train sets found");
  if (!d.target_train) throw lacmfer::ConfigError("no target train set found");
  if (!d.target_eval) throw lacmfer::ConfigError("no target eval set found");
  lacmfer::TrainData td;
  td.sources = d.sources_train;
  td.target_train = *d.target_train;
  td.target_eval = *d.target_eval;
  return td;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  lacmfer::GenConfig cfg = lacmfer::gen_config_from_json(read_json_file(config_path));
  fs::create_directories(out_dir);
  lacmfer::GeneratedProblem prob = lacmfer::generate(cfg);
  for (const lacmfer::Dataset& ds : prob.datasets) {
    std::string name = "domain" + std::to_string(ds.domain_id) + "_" + to_string(ds.role) + "_" +
                       to_string(ds.split) + ".txt";
    lacmfer::save(ds, (fs::path(out_dir) / name).string());
  }
  write_text_file((fs::path(out_dir) / "gen_config.json").string(),
                  lacmfer::gen_config_to_json(cfg).dump(2) + "\n");
  std::cout << "wrote " << prob.datasets.size() << " dataset files to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  lacmfer::RunConfig cfg = lacmfer::run_config_from_json(read_json_file(config_path));
  DataDir d = load_data_dir(data_dir);
  lacmfer::TrainData td = to_train_data(d);
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "config.json").string(),
                  lacmfer::run_config_to_json(cfg).dump(2) + "\n");

  lacmfer::TrainResult result = lacmfer::train(cfg, td);

  std::ofstream log((fs::path(out_dir) / "diagnostics.jsonl").string());
  if (!log) throw lacmfer::Error("cannot write diagnostics log");
  for (const lacmfer::StepDiagnostics& s : result.log) log << step_to_json(s).dump() << "\n";
  log.close();

  lacmfer::save_checkpoint(result.params, (fs::path(out_dir) / "checkpoint.txt").string());

  double acc = lacmfer::accuracy(result.params, td.target_eval);
  lacmfer::GeometryReport geo =
      lacmfer::geometry(lacmfer::global_features(result.params, td.target_eval.feature_matrix()),
                        td.target_eval.labels(), "target");
  json metrics = {{"target_accuracy", acc}, {"target_geometry", geometry_to_json(geo)}};
  write_text_file((fs::path(out_dir) / "metrics.json").string(), metrics.dump(2) + "\n");
  std::cout << metrics.dump(2) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir) {
  lacmfer::ModelParams params = lacmfer::load_checkpoint(checkpoint_path);
  DataDir d = load_data_dir(data_dir);
  if (!d.target_eval) throw lacmfer::ConfigError("no target eval set found");
  json out;
  out["accuracy"] = lacmfer::accuracy(params, *d.target_eval);
  out["target_geometry"] = geometry_to_json(
      lacmfer::geometry(lacmfer::global_features(params, d.target_eval->feature_matrix()),
                        d.target_eval->labels(), "target"));
  // pooled source eval features, when present
  std::vector<const lacmfer::Dataset*> src_eval;
  for (const lacmfer::Dataset& ds : d.all)
    if (ds.role == lacmfer::Role::kSource && ds.split == lacmfer::Split::kEval)
      src_eval.push_back(&ds);
  if (!src_eval.empty()) {
    std::size_t total = 0;
    for (const auto* ds : src_eval) total += ds->samples.size();
    lacmfer::Tensor feats = lacmfer::Tensor::zeros({total, params.arch.global_hidden});
    std::vector<int> labels;
    std::size_t row = 0;
    for (const auto* ds : src_eval) {
      lacmfer::Tensor f = lacmfer::global_features(params, ds->feature_matrix());
      for (std::size_t i = 0; i < f.rows(); ++i, ++row)
        for (std::size_t j = 0; j < f.cols(); ++j) feats.at(row, j) = f.at(i, j);
      for (const lacmfer::Sample& s : ds->samples) labels.push_back(s.label);
    }
    out["sources_geometry"] = geometry_to_json(lacmfer::geometry(feats, labels, "sources-pooled"));
  }
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& seeds_csv, const std::string& out_dir,
               const std::string& variants_str, bool pseudo_sweep, bool consistency_sweep) {
  lacmfer::RunConfig cfg = lacmfer::run_config_from_json(read_json_file(config_path));
  DataDir d = load_data_dir(data_dir);
  lacmfer::TrainData td = to_train_data(d);

  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      seeds.push_back(std::stoull(tok));
    } catch (const std::logic_error&) {
      throw lacmfer::ConfigError("seeds: bad value '" + tok + "'");
    }
  }
  std::vector<lacmfer::Variant> variants;
  for (char c : variants_str) variants.push_back(lacmfer::variant_from_letter(c));

  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "config.json").string(),
                  lacmfer::run_config_to_json(cfg).dump(2) + "\n");
  lacmfer::AblationReport report =
      lacmfer::run_ablation(cfg, td, seeds, variants, pseudo_sweep, consistency_sweep);
  json j = lacmfer::ablation_to_json(report);
  write_text_file((fs::path(out_dir) / "ablation.json").string(), j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_grad_check(const std::string& config_path) {
  std::uint64_t seed = 20240801;
  if (!config_path.empty()) {
    lacmfer::RunConfig cfg = lacmfer::run_config_from_json(read_json_file(config_path));
    seed = cfg.seed + 20240801;
  }
  std::vector<lacmfer::LossCheck> checks = lacmfer::run_gradient_suite(10, 1e-5, 1e-4, seed);
  bool all_ok = true;
  std::printf("%-14s %-14s %s\n", "loss", "max_rel_err", "status");
  for (const lacmfer::LossCheck& c : checks) {
    std::printf("%-14s %-14.3e %s\n", c.name.c_str(), c.max_rel_err, c.passed ? "pass" : "FAIL");
    all_ok = all_ok && c.passed;
  }
  return all_ok ? kExitOk : kExitNumerical;
}

int cmd_export(const std::string& checkpoint_path, const std::string& data_dir,
               const std::string& out_file) {
  lacmfer::ModelParams params = lacmfer::load_checkpoint(checkpoint_path);
  DataDir d = load_data_dir(data_dir);
  std::vector<lacmfer::Dataset> eval_sets;
  for (const lacmfer::Dataset& ds : d.all)
    if (ds.split == lacmfer::Split::kEval) eval_sets.push_back(ds);
  if (eval_sets.empty()) throw lacmfer::ConfigError("no eval splits found in " + data_dir);
  lacmfer::export_embeddings(params, eval_sets, out_file);
  std::size_t rows = 0;
  for (const lacmfer::Dataset& ds : eval_sets) rows += ds.samples.size();
  std::cout << "wrote " << rows << " rows to " << out_file << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch multi-source domain adaptation on synthetic problems"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, checkpoint_path;
  std::string seeds_csv = "1,2,3";
  std::string variants_str = "ABCDEF";
  bool pseudo_sweep = false, consistency_sweep = false;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic multi-domain datasets");
  gen->add_option("--config", config_path, "Generation config JSON")->required();
  gen->add_option("--out", out_path, "Output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "Train on a data directory");
  tr->add_option("--config", config_path, "Run config JSON")->required();
  tr->add_option("--data", data_dir, "Data directory")->required();
  tr->add_option("--out", out_path, "Output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Data directory")->required();

  CLI::App* ab = app.add_subcommand("ablate", "Run the component ladder");
  ab->add_option("--config", config_path, "Run config JSON")->required();
  ab->add_option("--data", data_dir, "Data directory")->required();
  ab->add_option("--seeds", seeds_csv, "Comma-separated seeds");
  ab->add_option("--out", out_path, "Output directory")->required();
  ab->add_option("--variants", variants_str, "Subset of A..F to run");
  ab->add_flag("--pseudo-sweep", pseudo_sweep, "Also run the SPL pseudo-labeling variant");
  ab->add_flag("--consistency-sweep", consistency_sweep, "Also run kl/l1/mse consistency modes");

  CLI::App* gc = app.add_subcommand("grad-check", "Finite-difference verification of all losses");
  gc->add_option("--config", config_path, "Run config JSON (seed source)");

  CLI::App* ex = app.add_subcommand("export", "Export global-branch embeddings as CSV");
  ex->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  ex->add_option("--data", data_dir, "Data directory")->required();
  ex->add_option("--out", out_path, "Output CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_path);
    if (ev->parsed()) return cmd_eval(checkpoint_path, data_dir);
    if (ab->parsed())
      return cmd_ablate(config_path, data_dir, seeds_csv, out_path, variants_str, pseudo_sweep,
                        consistency_sweep);
    if (gc->parsed()) return cmd_grad_check(config_path);
    if (ex->parsed()) return cmd_export(checkpoint_path, data_dir, out_path);
  } catch (const lacmfer::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const lacmfer::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitUsage;
}
