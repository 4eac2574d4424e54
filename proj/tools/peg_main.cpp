#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "peg/harness.hpp"

namespace {

peg::ExperimentConfig read_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw peg::ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw peg::ConfigError(path + ": " + e.what());
  }
  return peg::experiment_from_json(j);
}

std::vector<std::string> split_formats(const std::string& list) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : list) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"population-based evolutionary gaming over feature embeddings"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run an experiment preset");
  std::string preset, config_path, out_dir;
  uint64_t seed = 0;
  run->add_option("--preset", preset, "peg | crs-validation | selection-ablation | brd-trace");
  run->add_option("--config", config_path, "JSON config document");
  auto* seed_opt = run->add_option("--seed", seed, "master seed");
  run->add_option("--out", out_dir, "output directory");

  auto* ev = app.add_subcommand("eval", "evaluate a generation checkpoint against a dataset");
  std::string ckpt_dir, dataset_path;
  ev->add_option("--checkpoint", ckpt_dir, "generation checkpoint directory")->required();
  ev->add_option("--dataset", dataset_path, "dataset file")->required();

  auto* rp = app.add_subcommand("report", "re-emit reports from stored records");
  std::string in_dir;
  std::string format_list = "csv,json,svg";
  rp->add_option("--in", in_dir, "directory with records.jsonl or metrics.csv")->required();
  rp->add_option("--format", format_list, "comma-separated: csv,json,svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors
  }

  try {
    if (*run) {
      peg::ExperimentConfig cfg;
      if (!config_path.empty()) cfg = read_config(config_path);
      if (!preset.empty()) cfg.preset = preset;
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (cfg.out_dir.empty()) throw peg::ConfigError("an output directory is required (--out)");
      cfg.validate();
      peg::Report rep = peg::run_preset(cfg.preset, cfg);
      peg::emit_report(rep, cfg.formats, cfg.out_dir);
      {
        std::ofstream f(cfg.out_dir + "/config.json");
        f << peg::experiment_to_json(cfg).dump(2) << "\n";
      }
      std::printf("%s: %zu records, %zu traces -> %s\n", cfg.preset.c_str(), rep.records.size(),
                  rep.traces.size(), cfg.out_dir.c_str());
      for (const auto& [key, value] : rep.summary) std::printf("  %s = %.6g\n", key.c_str(), value);
    } else if (*ev) {
      peg::Report rep = peg::evaluate_checkpoint(ckpt_dir, dataset_path);
      std::fputs(peg::report_csv(rep.records).c_str(), stdout);
    } else if (*rp) {
      peg::Report rep = peg::load_report(in_dir);
      peg::emit_report(rep, split_formats(format_list), in_dir);
      std::printf("re-emitted %zu records to %s\n", rep.records.size(), in_dir.c_str());
    }
  } catch (const peg::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
