#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "peg/game.hpp"

using namespace peg;

namespace {

// Utility lookup over dedup sets, with a strict-miss policy so tests notice
// unexpected evaluations.
UtilityFn table_utility(std::map<std::vector<int>, double> table) {
  return [table = std::move(table)](const std::vector<int>& dedup) {
    auto it = table.find(dedup);
    REQUIRE(it != table.end());
    return it->second;
  };
}

// The worked three-model example: the pair {1,2} is the unique optimum.
std::map<std::vector<int>, double> worked_table() {
  return {{{0}, 1.0},    {{1}, 2.0},    {{2}, 3.0},
          {{0, 1}, 4.0}, {{0, 2}, 2.5}, {{1, 2}, 5.0}};
}

// Random utilities over every dedup set of size <= L from K models.
std::map<std::vector<int>, double> random_table(int K, int L, uint64_t seed) {
  Rng rng(seed);
  std::map<std::vector<int>, double> t;
  std::vector<std::vector<int>> frontier{{}};
  for (int size = 1; size <= L; ++size) {
    std::vector<std::vector<int>> next;
    for (const auto& base : frontier) {
      int start = base.empty() ? 0 : base.back() + 1;
      for (int m = start; m < K; ++m) {
        std::vector<int> s = base;
        s.push_back(m);
        t[s] = uniform_real(rng, 0.0, 1.0);
        next.push_back(std::move(s));
      }
    }
    frontier = std::move(next);
  }
  return t;
}

Eigen::MatrixXd random_matrix(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = normal01(rng);
  return m;
}

}  // namespace

TEST_CASE("joint actions deduplicate into a sorted set") {
  JointAction a;
  a.actions = {3, 1, 3, 0, 1};
  CHECK(a.dedup_set() == std::vector<int>{0, 1, 3});
  a.actions = {2, 2, 2};
  CHECK(a.dedup_set() == std::vector<int>{2});
}

TEST_CASE("the utility cache memoizes by dedup set") {
  int calls = 0;
  UtilityFn fn = [&calls](const std::vector<int>& d) {
    calls++;
    return static_cast<double>(d.size());
  };
  UtilityCache cache;
  CHECK(cache.eval({0, 2}, fn) == 2.0);
  CHECK(cache.eval({0, 2}, fn) == 2.0);
  CHECK(calls == 1);
  CHECK(cache.hits == 1);
  CHECK(cache.misses == 1);

  SUBCASE("cached values equal fresh recomputation") {
    double cached = cache.eval({0, 2}, fn);
    cache.clear();
    CHECK(cache.eval({0, 2}, fn) == cached);
  }
}

TEST_CASE("best-response dynamics solves the worked table") {
  UtilityCache cache;
  UtilityFn util = table_utility(worked_table());
  BrdResult res = brd_select(3, 2, util, cache);

  CHECK(res.converged);
  CHECK(res.selected == std::vector<int>{1, 2});
  CHECK(res.trace.back().utility == 5.0);

  SUBCASE("the utility trace strictly increases at accepted changes") {
    double last = 1.0;  // utility of the all-zeros start
    for (const BrdStep& s : res.trace) {
      if (s.changed) {
        CHECK(s.utility > last);
      } else {
        CHECK(s.utility == last);
      }
      last = s.utility;
    }
  }
  SUBCASE("the result survives an exhaustive deviation check") {
    NashReport nash = nash_check(res.action, 3, util, cache);
    CHECK(nash.is_nash);
    CHECK(nash.current == 5.0);
  }
}

TEST_CASE("nash_check reports an improving deviation") {
  UtilityCache cache;
  UtilityFn util = table_utility(worked_table());
  JointAction a;
  a.actions = {0, 1};  // {0,1} with utility 4; agent 0 switching to 2 reaches {1,2} = 5
  NashReport rep = nash_check(a, 3, util, cache);
  CHECK_FALSE(rep.is_nash);
  CHECK(rep.current == 4.0);
  CHECK(rep.improved > rep.current);
  CHECK(rep.agent >= 0);
  CHECK(rep.alternative >= 0);
}

TEST_CASE("single-model selection is trivially stable") {
  UtilityCache cache;
  UtilityFn util = table_utility({{{0}, 1.5}});
  BrdResult res = brd_select(1, 2, util, cache);
  CHECK(res.converged);
  CHECK(res.selected == std::vector<int>{0});
  CHECK(nash_check(res.action, 1, util, cache).is_nash);
}

TEST_CASE("L=1 picks the best individual") {
  UtilityCache cache;
  BrdResult res = brd_select(3, 1, table_utility(worked_table()), cache);
  CHECK(res.selected == std::vector<int>{2});
  CHECK(res.trace.back().utility == 3.0);
}

TEST_CASE("ties keep the incumbent") {
  UtilityCache cache;
  std::map<std::vector<int>, double> flat{{{0}, 1.0}, {{1}, 1.0}, {{0, 1}, 1.0}};
  BrdResult res = brd_select(2, 2, table_utility(flat), cache);
  CHECK(res.converged);
  CHECK(res.selected == std::vector<int>{0});
  for (const BrdStep& s : res.trace) CHECK_FALSE(s.changed);
}

TEST_CASE("a tiny turn budget clears the converged flag") {
  UtilityCache cache;
  BrdResult res = brd_select(3, 2, table_utility(worked_table()), cache, 1);
  CHECK_FALSE(res.converged);
  CHECK(res.turns == 1);
}

TEST_CASE("explicit initial actions are validated and honored") {
  UtilityCache cache;
  UtilityFn util = table_utility(worked_table());
  BrdResult res = brd_select(3, 2, util, cache, 0, {1, 2});
  CHECK(res.converged);
  CHECK(res.selected == std::vector<int>{1, 2});  // already optimal, nothing moves
  for (const BrdStep& s : res.trace) CHECK_FALSE(s.changed);

  CHECK_THROWS_AS(brd_select(3, 2, util, cache, 0, {1}), ConfigError);
  CHECK_THROWS_AS(brd_select(3, 2, util, cache, 0, {1, 3}), ConfigError);
  CHECK_THROWS_AS(brd_select(3, 2, util, cache, 0, {-1, 0}), ConfigError);
}

TEST_CASE("random tables always end in a verified equilibrium") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed * 3);
    int K = 2 + uniform_int(rng, 0, 4);
    int L = 2;
    UtilityCache cache;
    UtilityFn util = table_utility(random_table(K, L, seed * 17));
    BrdResult res = brd_select(K, L, util, cache);
    REQUIRE(res.converged);
    CHECK(nash_check(res.action, K, util, cache).is_nash);

    double last = -1;
    for (const BrdStep& s : res.trace) {
      if (s.changed) CHECK(s.utility > last);
      last = s.utility;
    }

    // equilibria reached from random starts never beat their own nash check
    for (int start = 0; start < 5; ++start) {
      std::vector<int> init;
      for (int l = 0; l < L; ++l) init.push_back(uniform_int(rng, 0, K - 1));
      BrdResult other = brd_select(K, L, util, cache, 0, init);
      REQUIRE(other.converged);
      CHECK(nash_check(other.action, K, util, cache).is_nash);
    }
  }
}

TEST_CASE("ensemble features concatenate in model-id order") {
  Eigen::MatrixXd X = random_matrix(10, 6, 3);
  Embedder a = init_model({6, 8, 4}, HyperParams{}, 1, 2);
  Embedder b = init_model({6, 5, 3}, HyperParams{}, 2, 2);
  a.model_id = 4;
  b.model_id = 9;

  Eigen::MatrixXd ab = ensemble_features({&a, &b}, X);
  Eigen::MatrixXd ba = ensemble_features({&b, &a}, X);
  CHECK(ab == ba);
  CHECK(ab.cols() == 7);

  SUBCASE("each block is the row-normalized member embedding") {
    Eigen::MatrixXd fa = forward_features(a, X, false);
    for (int i = 0; i < 10; ++i) {
      Eigen::RowVectorXd row = fa.row(i);
      if (row.norm() > 1e-12) row /= row.norm();
      CHECK((ab.block(i, 0, 1, 4) - row).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(std::fabs(ab.block(i, 0, 1, 4).norm() - 1.0) < 1e-9);
    }
  }
  SUBCASE("zero embeddings pass through without NaN") {
    Embedder z = a;
    std::vector<double> zero(param_count(z.params), 0.0);
    unflatten(z.params, zero);
    Eigen::MatrixXd f = ensemble_features({&z}, X);
    CHECK(f.array().isFinite().all());
    CHECK(f.norm() == 0.0);
  }
  SUBCASE("an empty ensemble is rejected") {
    CHECK_THROWS_AS(ensemble_features({}, X), ConfigError);
  }
}

TEST_CASE("the crs utility scores singletons like a direct crs call") {
  Eigen::MatrixXd X = random_matrix(40, 6, 5);
  std::vector<Embedder> pop;
  pop.push_back(init_model({6, 8, 4}, HyperParams{}, 1, 2));
  pop.push_back(init_model({6, 8, 4}, HyperParams{}, 2, 2));
  pop[0].model_id = 0;
  pop[1].model_id = 1;

  CrsConfig cfg;
  cfg.ref_layers = {8, 4};
  cfg.M = 5;
  cfg.ref_iters = 20;

  UtilityFn util = make_crs_utility(pop, X, cfg);
  double direct = crs(ensemble_features({&pop[1]}, X), X, cfg);
  CHECK(util({1}) == direct);

  SUBCASE("equal dedup sets share one cache entry") {
    UtilityCache cache;
    double u = cache.eval({0, 1}, util);
    CHECK(cache.eval({0, 1}, util) == u);
    CHECK(cache.hits == 1);
    CHECK(cache.misses == 1);
  }
}

TEST_CASE("traces serialize to jsonl with the declared keys") {
  UtilityCache cache;
  BrdResult res = brd_select(3, 2, table_utility(worked_table()), cache);
  std::string text = trace_jsonl(res.trace);
  CHECK(text.find("\"round\"") != std::string::npos);
  CHECK(text.find("\"agent\"") != std::string::npos);
  CHECK(text.find("\"action_vector\"") != std::string::npos);
  CHECK(text.find("\"dedup_set\"") != std::string::npos);
  CHECK(text.find("\"utility\"") != std::string::npos);
  CHECK(text.find("\"changed\"") != std::string::npos);

  size_t lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines == res.trace.size());
}
