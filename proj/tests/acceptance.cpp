// Acceptance gate for the desk-scale pipeline. Each criterion prints one
// PASS/FAIL line with its wall time; the exit code is nonzero when any
// selected criterion fails. Run everything, or a subset by number:
//   acceptance          # all eight
//   acceptance 3 7      # games and clustering oracles only
//
// Tolerances and time budgets are pinned here on purpose; loosening them is a
// behavior change, not a test fix.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "peg/clustering.hpp"
#include "peg/common.hpp"
#include "peg/dataset.hpp"
#include "peg/embedder.hpp"
#include "peg/evolution.hpp"
#include "peg/game.hpp"
#include "peg/harness.hpp"
#include "peg/metrics.hpp"
#include "peg/objectives.hpp"

using namespace peg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

Eigen::MatrixXd random_matrix(int rows, int cols, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * normal01(rng);
  return m;
}

// ---------------------------------------------------------------------------
// 1. The reference scatter must track labelling accuracy across noise levels.

Outcome noise_tracking() {
  const double kMinRho = 0.8;
  const double levels[] = {0.0, 0.2, 0.4, 0.6, 0.8};
  CrsConfig crs_cfg;
  Outcome out;
  out.pass = true;
  for (uint64_t seed : {1, 2, 3}) {
    SynthSpec spec;
    spec.num_identities = 20;
    spec.samples_per_identity = 50;
    spec.dim = 16;
    spec.intra_std = 0.25;
    spec.camera_shift = 0.1;
    spec.seed = seed;
    FeatureDataset ds = generate_synthetic(spec);
    std::vector<double> accs, scatters;
    for (int i = 0; i < 5; ++i) {
      std::vector<int> labels =
          corrupt_labels(ds.ids, levels[i], spec.num_identities, derive_seed(seed, 101, i));
      int same = 0;
      for (size_t k = 0; k < labels.size(); ++k) same += labels[k] == ds.ids[k];
      accs.push_back(static_cast<double>(same) / static_cast<double>(labels.size()));
      scatters.push_back(reference_scatter(ds.features, labels, spec.num_identities, crs_cfg));
    }
    const double rho = spearman_rho(accs, scatters);
    out.detail += " rho=" + fmt("%.3f", rho);
    out.pass = out.pass && rho >= kMinRho;
  }
  out.detail = "threshold " + fmt("%.2f", kMinRho) + ", per seed:" + out.detail;
  return out;
}

// ---------------------------------------------------------------------------
// 2. CRS must rank models by their post-self-training retrieval quality, and
//    better than the no-reference cluster scores do.

Outcome model_ranking() {
  const double kMinRho = 0.7;
  const double kMinTau = 0.5;
  ExperimentConfig cfg;
  cfg.synth.num_identities = 20;
  cfg.synth.samples_per_identity = 50;
  cfg.synth.dim = 16;
  cfg.synth.intra_std = 0.6;
  cfg.synth.camera_shift = 0.1;
  cfg.synth.seed = 5;
  cfg.rank_variants = 10;
  cfg.warmup_iters = 600;
  cfg.self_train_iters = 700;
  cfg.seed = 5;
  // A brief reference fit is what makes the cross-reference score selective:
  // labels that follow the raw geometry are fit almost immediately, labels
  // that fight it are not, and a long fit would erase that difference.
  cfg.gen.crs.ref_iters = 60;
  cfg.gen.crs.kmeans_iters = 50;
  cfg.gen.crs.kmeans_batch = 1024;  // full-batch assignments for 1000 samples
  cfg.gen.crs.ref_avg = 3;          // knock reference init out of the ranking

  Report rep = run_preset("crs-validation", cfg);
  const double rho = rep.summary.at("rank_rho");
  const double tau = rep.summary.at("rank_tau");
  const double ics_rho = rep.summary.at("rank_ics_rho");
  const double dbi_rho = rep.summary.at("rank_dbi_rho");
  const double sc_rho = rep.summary.at("rank_sc_rho");

  Outcome out;
  out.pass = rho >= kMinRho && tau >= kMinTau && rho > ics_rho && rho > dbi_rho && rho > sc_rho;
  out.detail = "rho=" + fmt("%.3f", rho) + " tau=" + fmt("%.3f", tau) +
               " vs ics=" + fmt("%.3f", ics_rho) + " dbi=" + fmt("%.3f", dbi_rho) +
               " sc=" + fmt("%.3f", sc_rho);
  return out;
}

// ---------------------------------------------------------------------------
// 3. Best-response selection must terminate in a Nash equilibrium with a
//    monotone utility trace, from the zero start and from random starts.

Outcome game_equilibria() {
  for (int t = 0; t < 50; ++t) {
    Rng rng(derive_seed(7, 303, t));
    const int K = 2 + static_cast<int>(uniform_int(rng, 0, 4));  // 2..6 models
    std::map<std::vector<int>, double> table;
    for (int i = 0; i < K; ++i) table[{i}] = uniform_real(rng, 0.0, 1.0);
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j) table[{i, j}] = uniform_real(rng, 0.0, 1.0);
    UtilityFn util = [&table](const std::vector<int>& dedup) { return table.at(dedup); };

    UtilityCache cache;
    BrdResult res = brd_select(K, 2, util, cache);
    if (!res.converged) return {false, "table " + std::to_string(t) + " did not converge"};
    double last = table.at({0});  // utility of the all-zeros start
    for (const BrdStep& s : res.trace) {
      if (s.changed && !(s.utility > last))
        return {false, "table " + std::to_string(t) + " accepted a non-improving move"};
      if (!s.changed && s.utility != last)
        return {false, "table " + std::to_string(t) + " drifted without a change"};
      last = s.utility;
    }
    NashReport nash = nash_check(res.action, K, util, cache);
    if (!nash.is_nash)
      return {false, "table " + std::to_string(t) + ": agent " + std::to_string(nash.agent) +
                         " still improves to " + fmt("%.4f", nash.improved)};

    for (int s = 0; s < 10; ++s) {
      std::vector<int> start = {static_cast<int>(uniform_int(rng, 0, K - 1)),
                                static_cast<int>(uniform_int(rng, 0, K - 1))};
      UtilityCache c2;
      BrdResult r2 = brd_select(K, 2, util, c2, 0, start);
      if (!r2.converged || !nash_check(r2.action, K, util, c2).is_nash)
        return {false, "table " + std::to_string(t) + " random start " + std::to_string(s) +
                           " missed the equilibrium"};
    }
  }
  return {true, "50 tables, zero and 10 random starts each"};
}

// ---------------------------------------------------------------------------
// 4. Every analytic gradient must agree with central finite differences.

Outcome gradient_audit() {
  const double kTol = 1e-4;
  double worst = 0;
  auto track = [&](double err) {
    worst = std::max(worst, err);
    return err < kTol;
  };

  for (uint64_t seed : {11, 12, 13}) {
    const int B = 8, M = 5, D = 4;
    std::vector<int> targets, labels;
    for (int i = 0; i < B; ++i) targets.push_back(i % M);
    for (int i = 0; i < B; ++i) labels.push_back(i % 4);

    {  // identity loss w.r.t. scores
      Eigen::MatrixXd s = random_matrix(B, M, seed, 2.0);
      auto flat = oracle::matrix_flat(s);
      auto grad = oracle::matrix_flat(id_loss(s, targets, 0.1).grad);
      auto loss = [&] {
        oracle::matrix_unflat(s, flat);
        return id_loss(s, targets, 0.1).value;
      };
      if (!track(oracle::max_rel_fd_error(flat, loss, grad))) return {false, "identity loss"};
    }
    {  // softmax triplet w.r.t. features, pairs frozen at the base point
      Eigen::MatrixXd f = random_matrix(B, D, seed + 50);
      MinedPairs pairs = mine_hard_pairs(f, labels);
      auto flat = oracle::matrix_flat(f);
      auto grad = oracle::matrix_flat(softmax_triplet_loss(f, pairs).grad);
      auto loss = [&] {
        oracle::matrix_unflat(f, flat);
        return softmax_triplet_loss(f, pairs).value;
      };
      if (!track(oracle::max_rel_fd_error(flat, loss, grad))) return {false, "softmax triplet"};
    }
    {  // mutual identity w.r.t. student scores
      Eigen::MatrixXd s = random_matrix(B, M, seed + 100, 2.0);
      Eigen::MatrixXd t = softmax_rows(random_matrix(B, M, seed + 150, 2.0));
      auto flat = oracle::matrix_flat(s);
      auto grad = oracle::matrix_flat(mutual_id_loss(s, t).grad);
      auto loss = [&] {
        oracle::matrix_unflat(s, flat);
        return mutual_id_loss(s, t).value;
      };
      if (!track(oracle::max_rel_fd_error(flat, loss, grad))) return {false, "mutual identity"};
    }
    {  // mutual triplet w.r.t. student features
      Eigen::MatrixXd f = random_matrix(B, D, seed + 200);
      MinedPairs pairs = mine_hard_pairs(f, labels);
      Rng rng(seed + 250);
      Eigen::VectorXd pn(B);
      for (int i = 0; i < B; ++i) pn(i) = uniform_real(rng, 0.05, 0.95);
      auto flat = oracle::matrix_flat(f);
      auto grad = oracle::matrix_flat(mutual_triplet_loss(f, pairs, pn).grad);
      auto loss = [&] {
        oracle::matrix_unflat(f, flat);
        return mutual_triplet_loss(f, pairs, pn).value;
      };
      if (!track(oracle::max_rel_fd_error(flat, loss, grad))) return {false, "mutual triplet"};
    }
    {  // voting and overall objective w.r.t. scores and features jointly
      HyperParams hp;
      hp.eps = 0.15;
      hp.w_id = 0.8;
      hp.w_tri = 0.6;
      hp.w_mid = 1.1;
      hp.w_mtri = 0.9;
      Eigen::MatrixXd s = random_matrix(B, M, seed + 300, 2.0);
      Eigen::MatrixXd f = random_matrix(B, D, seed + 350);
      MinedPairs pairs = mine_hard_pairs(f, labels);
      std::vector<TeacherSignals> teachers;
      for (int e = 0; e < 2; ++e) {
        TeacherSignals t;
        t.probs = softmax_rows(random_matrix(B, M, seed + 400 + e, 2.0));
        Rng rng(seed + 420 + e);
        t.pn.resize(B);
        for (int i = 0; i < B; ++i) t.pn(i) = uniform_real(rng, 0.05, 0.95);
        teachers.push_back(std::move(t));
      }
      for (bool voting_only : {true, false}) {
        HyperParams h2 = hp;
        std::vector<TeacherSignals> tt = teachers;
        if (voting_only) {
          h2.w_mid = 0;
          h2.w_mtri = 0;
          tt.clear();
        }
        auto fs = oracle::matrix_flat(s);
        auto ff = oracle::matrix_flat(f);
        OverallLoss base = overall_loss(s, f, targets, pairs, tt, h2);
        auto loss = [&] {
          oracle::matrix_unflat(s, fs);
          oracle::matrix_unflat(f, ff);
          return overall_loss(s, f, targets, pairs, tt, h2).value;
        };
        auto gs = oracle::matrix_flat(base.d_scores);
        auto gf = oracle::matrix_flat(base.d_features);
        if (!track(oracle::max_rel_fd_error(fs, loss, gs)))
          return {false, voting_only ? "voting (scores)" : "overall (scores)"};
        if (!track(oracle::max_rel_fd_error(ff, loss, gf)))
          return {false, voting_only ? "voting (features)" : "overall (features)"};
      }
    }
  }
  return {true, "3 seeds, worst relative error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 5. The full loop must beat its own ablations on retrieval quality.

Outcome pipeline_ordering() {
  const double kMinGain = 0.03;  // full over single, absolute mAP
  ExperimentConfig cfg;
  cfg.arm = "all";
  cfg.synth.num_identities = 12;
  cfg.synth.samples_per_identity = 25;
  cfg.synth.dim = 12;
  cfg.synth.intra_std = 0.45;
  cfg.synth.camera_shift = 0.25;
  cfg.init_population = 4;
  cfg.warmup_iters = 60;
  cfg.gen.generations = 3;
  cfg.gen.k2 = 30;

  int wins = 0;
  std::string detail;
  for (uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    cfg.synth.seed = 0;  // each seed draws its own dataset
    Report rep = run_preset("peg", cfg);
    const double single = rep.summary.at("single_map");
    const double multi = rep.summary.at("multi-pml_map");
    const double full = rep.summary.at("full_map");
    const bool ordered = full >= multi && multi >= single;
    const bool gained = full - single >= kMinGain;
    wins += ordered && gained;
    detail += " s" + std::to_string(seed) + ":" + fmt("%.3f", single) + "/" +
              fmt("%.3f", multi) + "/" + fmt("%.3f", full);
  }
  return {wins >= 2, "single/multi/full mAP, need order and +" + fmt("%.2f", kMinGain) +
                         " on 2 of 3 seeds:" + detail + " wins=" + std::to_string(wins)};
}

// ---------------------------------------------------------------------------
// 6. Reproduction must grow survivors*(H+1) members with every mutated
//    hyper-parameter inside its sampling interval.

Outcome reproduction_law() {
  HyperParams hp;
  Population pop = make_initial_population({{6, 8, 4}}, 6, hp, 3);
  // utility grows with every added index, so selection keeps exactly L models
  UtilityFn util = [](const std::vector<int>& dedup) {
    double s = 0;
    for (int i : dedup) s += i + 1;
    return s;
  };
  std::vector<int> ids = select(pop, util, 3, 0);
  if (pop.members.size() != 3)
    return {false, "selection kept " + std::to_string(pop.members.size()) + " of 6"};

  GenerationConfig cfg;
  cfg.H = 3;
  cfg.r = 0.5;
  reproduce_mutate(pop, cfg, 11);
  if (pop.members.size() != 12)
    return {false, "population is " + std::to_string(pop.members.size()) + ", wanted 12"};

  int clones = 0;
  for (const Embedder& m : pop.members) {
    if (m.lineage == -1) continue;
    clones++;
    auto in_band = [&](double v, double phi) {
      return v >= (1 - cfg.r) * phi && v <= (1 + cfg.r) * phi;
    };
    if (!in_band(m.hyper.eps, hp.eps) || !in_band(m.hyper.w_id, hp.w_id) ||
        !in_band(m.hyper.w_tri, hp.w_tri) || !in_band(m.hyper.w_mid, hp.w_mid) ||
        !in_band(m.hyper.w_mtri, hp.w_mtri) || !in_band(m.hyper.lr, hp.lr))
      return {false, "model " + std::to_string(m.model_id) + " left its mutation interval"};
  }
  return {clones == 9, "3 survivors, 9 clones, all intervals respected"};
}

// ---------------------------------------------------------------------------
// 7. The clustering stack must agree with independent textbook oracles.

Outcome clustering_oracles() {
  // k-means on separable two-blob instances versus best-of-restarts Lloyd
  for (int t = 0; t < 10; ++t) {
    const int n_per = 10 + t;
    Eigen::MatrixXd x(2 * n_per, 4);
    Rng rng(derive_seed(13, 707, t));
    for (int i = 0; i < 2 * n_per; ++i) {
      const double base = i < n_per ? 0.0 : 8.0;
      for (int j = 0; j < 4; ++j) x(i, j) = base + 0.3 * normal01(rng);
    }
    ClusterAssignment got = kmeans_minibatch(x, 2, derive_seed(13, 708, t), 30, 2 * n_per);
    oracle::LloydResult want = oracle::lloyd_best(x, 2, 20, derive_seed(13, 709, t));
    if (!want.valid) return {false, "lloyd oracle failed on instance " + std::to_string(t)};
    if (oracle::canonical_partition(got.labels) != oracle::canonical_partition(want.labels))
      return {false, "k-means disagrees with Lloyd on instance " + std::to_string(t)};
  }

  // density clustering versus the seeds-list formulation
  for (int t = 0; t < 10; ++t) {
    Rng rng(derive_seed(13, 717, t));
    const int n = 15 + static_cast<int>(uniform_int(rng, 0, 35));
    Eigen::MatrixXd x(n, 3);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) x(i, j) = 2.5 * normal01(rng);
    const double eps = uniform_real(rng, 0.4, 1.4);
    const int ms = 2 + static_cast<int>(uniform_int(rng, 0, 3));
    Eigen::MatrixXd d = pairwise_l2(x);
    ClusterAssignment got = dbscan(d, eps, ms);
    std::vector<int> want = oracle::dbscan(d, eps, ms);
    if (oracle::canonical_partition(got.labels) != oracle::canonical_partition(want))
      return {false, "density clustering disagrees on instance " + std::to_string(t)};
  }

  // reciprocal-neighbor distances versus brute-force set enumeration
  for (int t = 0; t < 6; ++t) {
    Rng rng(derive_seed(13, 727, t));
    const int n = 8 + static_cast<int>(uniform_int(rng, 0, 12));
    Eigen::MatrixXd x(n, 3);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) x(i, j) = normal01(rng);
    const int k1 = 2 + static_cast<int>(uniform_int(rng, 0, 3));
    const int k2 = 2 + static_cast<int>(uniform_int(rng, 0, n - 3));
    Eigen::MatrixXd got = k_reciprocal_jaccard(x, k1, k2);
    Eigen::MatrixXd want = oracle::k_reciprocal_jaccard(x, k1, k2);
    if (!(got == want))
      return {false, "jaccard distances differ on instance " + std::to_string(t)};
  }
  return {true, "10 k-means, 10 density, 6 jaccard instances, all exact"};
}

// ---------------------------------------------------------------------------
// 8. A resumed run must retrace the scratch run bit for bit.

Outcome resume_determinism() {
  namespace fs = std::filesystem;
  const std::string dir_a = (fs::temp_directory_path() / "peg-accept-scratch").string();
  const std::string dir_b = (fs::temp_directory_path() / "peg-accept-resume").string();
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  SynthSpec spec;
  spec.num_identities = 5;
  spec.samples_per_identity = 12;
  spec.dim = 6;
  spec.intra_std = 0.15;
  spec.seed = 61;
  FeatureDataset ds = generate_synthetic(spec);

  GenerationConfig cfg;
  cfg.L = 2;
  cfg.H = 1;
  cfg.generations = 2;
  cfg.pml_epochs = 1;
  cfg.S = 2;
  cfg.P = 2;
  cfg.K = 2;
  cfg.dbscan_eps = 0.75;
  cfg.min_samples = 2;
  cfg.k1 = 4;
  cfg.k2 = 12;
  cfg.batches_per_epoch = 1;
  cfg.crs.ref_layers = {8, 4};
  cfg.crs.M = 4;
  cfg.crs.ref_iters = 30;
  cfg.crs.kmeans_iters = 10;
  cfg.crs.kmeans_batch = 64;

  auto founders = [] { return make_initial_population({{6, 8, 4}}, 2, HyperParams{}, 29); };
  RunContext ctx_a;
  ctx_a.run_id = "accept-resume";
  ctx_a.master_seed = 29;
  ctx_a.checkpoint_dir = dir_a;
  RunResult scratch = run_peg(founders(), ds, cfg, ctx_a);

  RunContext ctx_b = ctx_a;
  ctx_b.checkpoint_dir = dir_b;
  ctx_b.resume_from = dir_a + "/gen-1";
  RunResult resumed = run_peg(Population{}, ds, cfg, ctx_b);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  if (flatten(resumed.best.params) != flatten(scratch.best.params))
    return {false, "final parameters differ between scratch and resume"};
  if (flatten(resumed.best.ema_params) != flatten(scratch.best.ema_params))
    return {false, "final temporal averages differ between scratch and resume"};
  const std::string csv_a = report_csv(scratch.pop.records);
  const std::string csv_b = report_csv(resumed.pop.records);
  if (csv_a != csv_b) return {false, "metric tables differ between scratch and resume"};
  return {true, std::to_string(scratch.pop.records.size()) + " metric rows byte-identical"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> fn;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "scatter tracks labelling accuracy", 120, noise_tracking},
      {2, "crs ranks models by final quality", 600, model_ranking},
      {3, "best-response selection finds equilibria", 10, game_equilibria},
      {4, "analytic gradients match finite differences", 30, gradient_audit},
      {5, "full loop beats its ablations", 1200, pipeline_ordering},
      {6, "reproduction respects the mutation law", 1, reproduction_law},
      {7, "clustering agrees with textbook oracles", 10, clustering_oracles},
      {8, "checkpointed runs resume bit for bit", 300, resume_determinism},
  };

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all_ok = true;
  for (const Criterion& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = dt <= c.budget_s;
    const bool pass = o.pass && in_budget;
    all_ok = all_ok && pass;
    std::printf("[%s] %d %s (%.1fs%s)\n       %s\n", pass ? "PASS" : "FAIL", c.id, c.name, dt,
                in_budget ? "" : fmt(", over %.0fs budget", c.budget_s).c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all_ok ? 0 : 1;
}
