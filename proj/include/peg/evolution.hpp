#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "peg/common.hpp"
#include "peg/dataset.hpp"
#include "peg/embedder.hpp"
#include "peg/game.hpp"
#include "peg/metrics.hpp"

namespace peg {

struct GenerationConfig {
  int L = 3;            // selection size (agents)
  int H = 3;            // clones per survivor; population becomes survivors*(H+1)
  double r = 0.5;       // mutation factor
  int generations = 3;
  int pml_epochs = 5;
  int S = 3;            // networks sampled per batch
  double alpha = 0.999; // temporal-average factor
  int P = 4;            // pseudo-classes per batch
  int K = 4;            // instances per pseudo-class
  double dbscan_eps = 0.6;
  int min_samples = 4;
  int k1 = 6;
  int k2 = 30;
  double weight_decay = 5e-4;
  int batches_per_epoch = 0;  // 0: one pass over the non-outlier samples
  CrsConfig crs;

  void validate() const;
};

// One tabular metrics row; NaN marks fields that do not apply.
struct MetricRecord {
  std::string run_id;
  int generation = 0;
  int model_id = -1;
  double crs = nan_value();
  double ics = nan_value();
  double dbi = nan_value();
  double sc = nan_value();
  double map = nan_value();
  double cmc1 = nan_value();
  double cmc5 = nan_value();
  double cmc10 = nan_value();
  double label_acc = nan_value();
  double rho = nan_value();
  double tau = nan_value();
  std::string config_hash;
  uint64_t seed = 0;

  static double nan_value();
};

struct SelectionRecord {
  int generation = 0;
  bool final_selection = false;
  std::vector<int> selected_ids;
  double utility = 0;
  bool converged = false;
  std::vector<BrdStep> trace;
};

struct Population {
  std::vector<Embedder> members;
  int generation = 0;     // last completed generation
  int next_model_id = 0;
  std::vector<SelectionRecord> selections;
  std::vector<MetricRecord> records;
};

// Founders with cycling architectures, all float32-quantized.
Population make_initial_population(const std::vector<std::vector<int>>& archs, int count,
                                   const HyperParams& base, uint64_t seed);

// Short supervised fit on fixed pseudo-labels (id + triplet losses with the
// model's own hyper-parameters); resizes the head to the label count. Used to
// emulate pretraining and for self-training baselines.
void fit_pseudo_labels(Embedder& m, const Eigen::MatrixXd& X, const std::vector<int>& labels,
                       int num_classes, int iters, int P, int K, uint64_t seed,
                       double weight_decay);

// Cooperative-game selection; survivors replace the population, everything
// else is archived in the selection history.
std::vector<int> select(Population& pop, const UtilityFn& util, int L, int generation,
                        bool final_selection = false);

// Each survivor keeps its original and adds H clones with every
// hyper-parameter independently resampled in [(1-r)phi, (1+r)phi].
void reproduce_mutate(Population& pop, const GenerationConfig& cfg, uint64_t seed);

struct PmlEpochReport {
  int num_clusters = 0;
  uint64_t label_digest = 0;  // pseudo-labels fixed across the epoch
  int outliers = 0;
  int batches = 0;
};

// One round of population mutual learning: shared DBSCAN pseudo-labels over
// ensemble features, then per batch S sampled members each optimize the
// overall loss against the other sampled members' temporal-average signals
// (lineage exclusion applied), followed by Adam and EMA updates.
std::vector<PmlEpochReport> pml(Population& pop, const Eigen::MatrixXd& X,
                                const GenerationConfig& cfg, uint64_t seed);

// Excluded teachers: same parent, the student's parent, or the student's clone.
bool lineage_excluded(const Embedder& student, const Embedder& teacher);

struct RunContext;

// One metrics row per member: CRS plus scatter/cluster scores on the member's
// own k-means partition (same seed crs() uses) and retrieval scores when the
// dataset carries a query split.
void append_member_metrics(Population& pop, const FeatureDataset& ds, const GenerationConfig& cfg,
                           const RunContext& ctx, int generation);

struct RunContext {
  std::string run_id = "run";
  std::string config_hash;
  uint64_t master_seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoints written
  std::string resume_from;     // generation checkpoint directory to resume from
};

struct RunResult {
  Embedder best;
  Population pop;
};

// The full loop: per generation select -> reproduce/mutate -> mutual learning,
// metrics and a checkpoint at every generation boundary, then a final L=1
// selection. Live parameters are quantized to float32 at each boundary so a
// resumed run retraces the scratch run bit for bit.
RunResult run_peg(Population init, const FeatureDataset& ds, const GenerationConfig& cfg,
                  const RunContext& ctx);

void save_generation(const std::string& dir, const Population& pop, const GenerationConfig& cfg,
                     const RunContext& ctx);
Population load_generation(const std::string& dir);

}  // namespace peg
