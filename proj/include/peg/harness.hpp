#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "peg/dataset.hpp"
#include "peg/evolution.hpp"

namespace peg {

// One experiment invocation. The dataset is either synthesized (dataset_path
// empty) or loaded from disk; a config document may set one of the two, never
// both.
struct ExperimentConfig {
  std::string preset = "peg";
  std::string arm = "all";     // peg preset: all | full | multi-pml | single
  std::string dataset_path;
  SynthSpec synth;
  double query_fraction = 0.2;
  GenerationConfig gen;
  HyperParams hyper;           // founding hyper-parameters
  int init_population = 4;
  int founder_embed = 8;       // embedding width every founder projects into
  int warmup_iters = 60;
  int rank_variants = 8;       // model-ranking sweep size
  int self_train_iters = 120;  // fixed budget between scoring and retrieval
  uint64_t seed = 0;
  std::string out_dir;
  std::vector<std::string> formats{"csv", "json"};

  void validate() const;
};

// Rejects unknown keys and documents giving both a dataset path and a
// synthesis spec.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);

// FNV-1a hex digest of the canonical config document.
std::string config_hash(const ExperimentConfig& cfg);

struct Report {
  std::vector<MetricRecord> records;
  std::vector<std::pair<std::string, std::vector<BrdStep>>> traces;
  std::map<std::string, double> summary;
};

// Synthesize or load per config; adds a query/gallery split when the data has
// none yet. A synth seed of 0 derives from the experiment seed.
FeatureDataset load_or_synthesize(const ExperimentConfig& cfg);

// Presets: "peg" (pipeline arms single / multi-pml / full), "crs-validation"
// (label-noise sweep plus model-ranking correlation), "selection-ablation"
// (game vs individual-top vs random selection), "brd-trace" (injected utility
// table).
Report run_preset(const std::string& name, const ExperimentConfig& cfg);

// Writes the requested artifacts into out_dir: metrics.csv (RFC 4180, NaN as
// empty field), records.jsonl, report.svg; traces and a summary ride along
// when present.
void emit_report(const Report& report, const std::vector<std::string>& formats,
                 const std::string& out_dir);

std::string report_csv(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_report_csv(const std::string& csv);
std::string report_svg(const Report& report);

std::vector<BrdStep> parse_trace_jsonl(const std::string& text);

// Fresh per-member metrics for a saved generation against a dataset.
Report evaluate_checkpoint(const std::string& checkpoint_dir, const std::string& dataset_path);

// Re-read emitted records/traces for re-emission in other formats.
Report load_report(const std::string& dir);

}  // namespace peg
