#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "peg/common.hpp"
#include "peg/embedder.hpp"
#include "peg/metrics.hpp"

namespace peg {

// One action per selector agent; duplicates are allowed and the effective
// ensemble is the deduplicated set.
struct JointAction {
  std::vector<int> actions;

  std::vector<int> dedup_set() const;
};

// Utility over a deduplicated selection (sorted, non-empty).
using UtilityFn = std::function<double(const std::vector<int>&)>;

// Memoizes the utility by dedup set; the underlying function must be
// deterministic so cached values equal fresh recomputations.
struct UtilityCache {
  std::map<std::vector<int>, double> memo;
  long hits = 0;
  long misses = 0;

  double eval(const std::vector<int>& dedup, const UtilityFn& fn);
  void clear();
};

// Per-model features row-normalized, concatenated in ascending model_id order
// (so the argument order never matters).
Eigen::MatrixXd ensemble_features(std::vector<const Embedder*> models, const Eigen::MatrixXd& X,
                                  bool use_ema = false);

struct BrdStep {
  int round = 0;  // full cycle index
  int agent = 0;
  std::vector<int> actions;
  std::vector<int> dedup;
  double utility = 0;
  bool changed = false;
};

struct BrdResult {
  JointAction action;
  std::vector<int> selected;  // dedup set at termination
  std::vector<BrdStep> trace;
  bool converged = false;
  int turns = 0;
};

// Best-response dynamics: agents move in a circular order, each switching to a
// strictly better action (ties keep the incumbent); stops after L consecutive
// unchanged turns or max_turns (0 means 10*L*population_size) with the
// converged flag cleared. The utility trace strictly increases at every
// accepted change.
BrdResult brd_select(int population_size, int L, const UtilityFn& util, UtilityCache& cache,
                     int max_turns = 0, std::vector<int> initial = {});

struct NashReport {
  bool is_nash = true;
  int agent = -1;
  int alternative = -1;
  double current = 0;
  double improved = 0;
};

// Exhaustive unilateral-deviation check.
NashReport nash_check(const JointAction& action, int population_size, const UtilityFn& util,
                      UtilityCache& cache);

// CRS of the ensemble over the dedup set (indices into pop). The returned
// callable keeps references; pop and X must outlive it.
UtilityFn make_crs_utility(const std::vector<Embedder>& pop, const Eigen::MatrixXd& X,
                           const CrsConfig& cfg);

std::string trace_jsonl(const std::vector<BrdStep>& trace);

}  // namespace peg
