#include "peg/game.hpp"

#include <algorithm>

#include <json.hpp>

namespace peg {

std::vector<int> JointAction::dedup_set() const {
  std::vector<int> d = actions;
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  return d;
}

double UtilityCache::eval(const std::vector<int>& dedup, const UtilityFn& fn) {
  auto it = memo.find(dedup);
  if (it != memo.end()) {
    hits++;
    return it->second;
  }
  misses++;
  double u = fn(dedup);
  memo.emplace(dedup, u);
  return u;
}

void UtilityCache::clear() {
  memo.clear();
  hits = 0;
  misses = 0;
}

Eigen::MatrixXd ensemble_features(std::vector<const Embedder*> models, const Eigen::MatrixXd& X,
                                  bool use_ema) {
  if (models.empty()) throw ConfigError("ensemble needs at least one model");
  std::sort(models.begin(), models.end(),
            [](const Embedder* a, const Embedder* b) { return a->model_id < b->model_id; });
  int width = 0;
  for (const Embedder* m : models) width += m->embed_dim();
  Eigen::MatrixXd out(X.rows(), width);
  int at = 0;
  for (const Embedder* m : models) {
    Eigen::MatrixXd f = forward_features(*m, X, use_ema);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      double n = f.row(i).norm();
      if (n > 1e-12) f.row(i) /= n;
    }
    out.middleCols(at, m->embed_dim()) = f;
    at += m->embed_dim();
  }
  return out;
}

BrdResult brd_select(int population_size, int L, const UtilityFn& util, UtilityCache& cache,
                     int max_turns, std::vector<int> initial) {
  if (population_size < 1) throw ConfigError("population must be non-empty");
  if (L < 1) throw ConfigError("L must be >= 1");
  if (max_turns <= 0) max_turns = 10 * L * population_size;

  BrdResult res;
  if (initial.empty()) {
    res.action.actions.assign(L, 0);
  } else {
    if (static_cast<int>(initial.size()) != L) throw ConfigError("initial action length != L");
    for (int a : initial)
      if (a < 0 || a >= population_size) throw ConfigError("initial action out of bounds");
    res.action.actions = std::move(initial);
  }
  double current = cache.eval(res.action.dedup_set(), util);

  int unchanged = 0;
  int turn = 0;
  while (unchanged < L && turn < max_turns) {
    const int agent = turn % L;
    const int incumbent = res.action.actions[agent];
    int best = incumbent;
    double best_u = current;
    for (int cand = 0; cand < population_size; ++cand) {
      if (cand == incumbent) continue;
      res.action.actions[agent] = cand;
      double u = cache.eval(res.action.dedup_set(), util);
      if (u > best_u) {  // strict improvement only; ties keep the incumbent
        best_u = u;
        best = cand;
      }
    }
    res.action.actions[agent] = best;
    const bool changed = best != incumbent;
    if (changed) {
      current = best_u;
      unchanged = 0;
    } else {
      unchanged++;
    }
    res.trace.push_back({turn / L, agent, res.action.actions, res.action.dedup_set(), current,
                         changed});
    turn++;
  }
  res.converged = unchanged >= L;
  res.turns = turn;
  res.selected = res.action.dedup_set();
  return res;
}

NashReport nash_check(const JointAction& action, int population_size, const UtilityFn& util,
                      UtilityCache& cache) {
  NashReport rep;
  rep.current = cache.eval(action.dedup_set(), util);
  JointAction probe = action;
  for (size_t l = 0; l < action.actions.size(); ++l) {
    for (int cand = 0; cand < population_size; ++cand) {
      if (cand == action.actions[l]) continue;
      probe.actions[l] = cand;
      double u = cache.eval(probe.dedup_set(), util);
      if (u > rep.current) {
        rep.is_nash = false;
        rep.agent = static_cast<int>(l);
        rep.alternative = cand;
        rep.improved = u;
        return rep;
      }
    }
    probe.actions[l] = action.actions[l];
  }
  return rep;
}

UtilityFn make_crs_utility(const std::vector<Embedder>& pop, const Eigen::MatrixXd& X,
                           const CrsConfig& cfg) {
  return [&pop, &X, cfg](const std::vector<int>& dedup) {
    std::vector<const Embedder*> models;
    models.reserve(dedup.size());
    for (int i : dedup) models.push_back(&pop.at(i));
    return crs_averaged(ensemble_features(std::move(models), X), X, cfg);
  };
}

std::string trace_jsonl(const std::vector<BrdStep>& trace) {
  std::string out;
  for (const BrdStep& s : trace) {
    nlohmann::json j{{"round", s.round},     {"agent", s.agent},   {"action_vector", s.actions},
                     {"dedup_set", s.dedup}, {"utility", s.utility}, {"changed", s.changed}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace peg
