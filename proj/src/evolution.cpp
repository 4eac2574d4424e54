#include "peg/evolution.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "peg/checkpoint.hpp"
#include "peg/clustering.hpp"
#include "peg/config_json.hpp"
#include "peg/objectives.hpp"

namespace peg {

namespace {

constexpr uint64_t kInitPurpose = 0x696e6974ULL;
constexpr uint64_t kStreamPurpose = 0x73747265616dULL;
constexpr uint64_t kMutatePurpose = 0x6d757461ULL;
constexpr uint64_t kReproPurpose = 0x7265706fULL;
constexpr uint64_t kPmlPurpose = 0x706d6cULL;
constexpr uint64_t kHeadPurpose = 0x68656164ULL;
constexpr uint64_t kBatchPurpose = 0x6261746368ULL;
constexpr uint64_t kSubsetPurpose = 0x737562736574ULL;

}  // namespace

void GenerationConfig::validate() const {
  if (L < 1) throw ConfigError("L must be >= 1");
  if (H < 0) throw ConfigError("H must be >= 0");
  if (!(r >= 0 && r < 1)) throw ConfigError("mutation factor r must be in [0,1)");
  if (generations < 0) throw ConfigError("generations must be >= 0");
  if (pml_epochs < 1) throw ConfigError("pml_epochs must be >= 1");
  if (S < 1) throw ConfigError("S must be >= 1");
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("alpha must be in [0,1]");
  if (P < 2 || K < 2) throw ConfigError("batches need P >= 2 and K >= 2");
  if (!(dbscan_eps > 0)) throw ConfigError("dbscan_eps must be > 0");
  if (min_samples < 1) throw ConfigError("min_samples must be >= 1");
  if (k1 < 1 || k2 < 1) throw ConfigError("k1 and k2 must be >= 1");
  if (batches_per_epoch < 0) throw ConfigError("batches_per_epoch must be >= 0");
  crs.validate();
}

double MetricRecord::nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

Population make_initial_population(const std::vector<std::vector<int>>& archs, int count,
                                   const HyperParams& base, uint64_t seed) {
  if (archs.empty()) throw ConfigError("need at least one architecture");
  if (count < 1) throw ConfigError("population count must be >= 1");
  Population pop;
  for (int i = 0; i < count; ++i) {
    Embedder m = init_model(archs[i % archs.size()], base, derive_seed(seed, kInitPurpose, i));
    m.model_id = pop.next_model_id++;
    m.lineage = -1;
    m.rng_stream = derive_seed(seed, kStreamPurpose, m.model_id);
    quantize_model_f32(m);
    pop.members.push_back(std::move(m));
  }
  return pop;
}

void fit_pseudo_labels(Embedder& m, const Eigen::MatrixXd& X, const std::vector<int>& labels,
                       int num_classes, int iters, int P, int K, uint64_t seed,
                       double weight_decay) {
  if (num_classes < 2) throw ConfigError("fit needs >= 2 pseudo-classes");
  if (m.head_classes() != num_classes)
    resize_classifier(m, num_classes, derive_seed(seed, kHeadPurpose));
  const int p_eff = std::min(P, num_classes);
  for (int it = 0; it < iters; ++it) {
    PKBatch pk = sample_pk_batch(labels, p_eff, K, derive_seed(seed, kBatchPurpose, it));
    Eigen::MatrixXd bx(pk.indices.size(), X.cols());
    for (size_t b = 0; b < pk.indices.size(); ++b) bx.row(b) = X.row(pk.indices[b]);
    ForwardCache fc = forward(m, bx, false, true);
    MinedPairs mined = mine_hard_pairs(fc.features, pk.labels);
    ValueGrad idl = id_loss(fc.scores, pk.labels, m.hyper.eps);
    ValueGrad tri = softmax_triplet_loss(fc.features, mined);
    EmbedderParams grads =
        backward(m, fc, m.hyper.w_tri * tri.grad, m.hyper.w_id * idl.grad);
    adam_step(m, grads, m.hyper.lr, weight_decay);
  }
  ema_update(m, 0.0);  // the temporal average starts from the warmed parameters
}

std::vector<int> select(Population& pop, const UtilityFn& util, int L, int generation,
                        bool final_selection) {
  if (pop.members.empty()) throw ConfigError("population is empty");
  UtilityCache cache;
  BrdResult res = brd_select(static_cast<int>(pop.members.size()), L, util, cache);

  SelectionRecord rec;
  rec.generation = generation;
  rec.final_selection = final_selection;
  rec.utility = res.trace.back().utility;
  rec.converged = res.converged;
  rec.trace = res.trace;

  std::vector<Embedder> kept;
  kept.reserve(res.selected.size());
  for (int idx : res.selected) {
    rec.selected_ids.push_back(pop.members[idx].model_id);
    kept.push_back(std::move(pop.members[idx]));
  }
  std::vector<int> ids = rec.selected_ids;
  pop.members = std::move(kept);
  pop.selections.push_back(std::move(rec));
  return ids;
}

void reproduce_mutate(Population& pop, const GenerationConfig& cfg, uint64_t seed) {
  if (pop.members.empty()) throw ConfigError("no survivors to reproduce");
  std::vector<Embedder> next;
  next.reserve(pop.members.size() * (cfg.H + 1));
  for (Embedder& parent : pop.members) {
    next.push_back(std::move(parent));
    const Embedder& orig = next.back();
    for (int h = 0; h < cfg.H; ++h) {
      Embedder clone = orig;  // copies params, temporal average and optimizer state
      clone.model_id = pop.next_model_id++;
      clone.lineage = orig.model_id;
      clone.rng_stream = derive_seed(seed, kStreamPurpose, clone.model_id);
      Rng rng(derive_seed(seed, kMutatePurpose, clone.model_id));
      auto mutate = [&](double phi) {
        return uniform_real(rng, (1 - cfg.r) * phi, (1 + cfg.r) * phi);
      };
      clone.hyper.eps = mutate(clone.hyper.eps);
      clone.hyper.w_id = mutate(clone.hyper.w_id);
      clone.hyper.w_tri = mutate(clone.hyper.w_tri);
      clone.hyper.w_mid = mutate(clone.hyper.w_mid);
      clone.hyper.w_mtri = mutate(clone.hyper.w_mtri);
      clone.hyper.lr = mutate(clone.hyper.lr);
      if (!(clone.hyper.eps > 0 && clone.hyper.eps < 1))
        throw ConfigError("mutated label smoothing left (0,1); lower eps or r");
      next.push_back(std::move(clone));
    }
  }
  pop.members = std::move(next);
}

bool lineage_excluded(const Embedder& student, const Embedder& teacher) {
  if (student.lineage != -1 && student.lineage == teacher.lineage) return true;  // siblings
  if (teacher.model_id == student.lineage) return true;  // teacher is the student's parent
  if (teacher.lineage == student.model_id) return true;  // teacher is the student's clone
  return false;
}

std::vector<PmlEpochReport> pml(Population& pop, const Eigen::MatrixXd& X,
                                const GenerationConfig& cfg, uint64_t seed) {
  if (pop.members.empty()) throw ConfigError("population is empty");
  const int n_members = static_cast<int>(pop.members.size());
  std::vector<PmlEpochReport> reports;

  for (int epoch = 0; epoch < cfg.pml_epochs; ++epoch) {
    std::vector<const Embedder*> all;
    for (const Embedder& m : pop.members) all.push_back(&m);
    Eigen::MatrixXd ens = ensemble_features(all, X, false);
    Eigen::MatrixXd jd = k_reciprocal_jaccard(ens, cfg.k1, cfg.k2);
    ClusterAssignment asg = dbscan(jd, cfg.dbscan_eps, cfg.min_samples);
    const int M = asg.num_clusters;
    if (M < 2)
      throw std::runtime_error("pseudo-label clustering collapsed to " + std::to_string(M) +
                               " clusters in epoch " + std::to_string(epoch) +
                               "; dbscan_eps is misconfigured");

    PmlEpochReport rep;
    rep.num_clusters = M;
    rep.label_digest = fnv1a(asg.labels.data(), asg.labels.size() * sizeof(int));
    for (int l : asg.labels)
      if (l < 0) rep.outliers++;

    for (Embedder& m : pop.members)
      if (m.head_classes() != M)
        resize_classifier(m, M, derive_seed(seed, kHeadPurpose, epoch, m.model_id));

    const int usable = static_cast<int>(asg.labels.size()) - rep.outliers;
    const int p_eff = std::min(cfg.P, M);
    const int per_batch = p_eff * cfg.K;
    const int batches =
        cfg.batches_per_epoch > 0 ? cfg.batches_per_epoch : std::max(1, usable / per_batch);
    rep.batches = batches;

    for (int b = 0; b < batches; ++b) {
      PKBatch pk = sample_pk_batch(asg.labels, p_eff, cfg.K,
                                   derive_seed(seed, kBatchPurpose, epoch, b));
      Eigen::MatrixXd bx(pk.indices.size(), X.cols());
      for (size_t i = 0; i < pk.indices.size(); ++i) bx.row(i) = X.row(pk.indices[i]);

      Rng srng(derive_seed(seed, kSubsetPurpose, epoch, b));
      std::vector<int> sampled =
          sample_without_replacement(srng, n_members, std::min(cfg.S, n_members));
      std::sort(sampled.begin(), sampled.end());

      // teacher signals snapshot first so update order cannot matter
      struct StudentState {
        ForwardCache cache;
        MinedPairs mined;
      };
      std::vector<StudentState> states(sampled.size());
      std::vector<TeacherSignals> signals(sampled.size());
      for (size_t si = 0; si < sampled.size(); ++si) {
        Embedder& m = pop.members[sampled[si]];
        states[si].cache = forward(m, bx, false, true);
        states[si].mined = mine_hard_pairs(states[si].cache.features, pk.labels);
        ForwardCache tc = forward(m, bx, true, true);
        signals[si].probs = softmax_rows(tc.scores);
        signals[si].pn = triplet_statistic(tc.features, mine_hard_pairs(tc.features, pk.labels));
      }

      for (size_t si = 0; si < sampled.size(); ++si) {
        Embedder& student = pop.members[sampled[si]];
        std::vector<TeacherSignals> teachers;
        for (size_t ti = 0; ti < sampled.size(); ++ti) {
          if (ti == si) continue;
          if (lineage_excluded(student, pop.members[sampled[ti]])) continue;
          teachers.push_back(signals[ti]);
        }
        HyperParams hp = student.hyper;
        if (teachers.empty()) {
          hp.w_mid = 0;
          hp.w_mtri = 0;
        }
        OverallLoss ol = overall_loss(states[si].cache.scores, states[si].cache.features,
                                      pk.labels, states[si].mined, teachers, hp);
        EmbedderParams grads = backward(student, states[si].cache, ol.d_features, ol.d_scores);
        adam_step(student, grads, student.hyper.lr, cfg.weight_decay);
        ema_update(student, cfg.alpha);
      }
    }
    reports.push_back(rep);
  }
  return reports;
}

void append_member_metrics(Population& pop, const FeatureDataset& ds, const GenerationConfig& cfg,
                           const RunContext& ctx, int generation) {
  const Eigen::MatrixXd& X = ds.features;
  bool has_queries = false;
  for (Split s : ds.split)
    if (s == Split::Query) has_queries = true;
  for (const Embedder& m : pop.members) {
    MetricRecord r;
    r.run_id = ctx.run_id;
    r.generation = generation;
    r.model_id = m.model_id;
    r.config_hash = ctx.config_hash;
    r.seed = ctx.master_seed;
    Eigen::MatrixXd feats = ensemble_features({&m}, X);
    ClusterAssignment asg = kmeans_minibatch(feats, cfg.crs.M, crs_kmeans_seed(cfg.crs),
                                             cfg.crs.kmeans_iters, cfg.crs.kmeans_batch);
    r.crs = reference_scatter(X, asg.labels, asg.num_clusters, cfg.crs);
    r.ics = ics(feats, asg).j;
    r.dbi = dbi(feats, asg);
    r.sc = silhouette(feats, asg);
    r.label_acc = label_accuracy(asg, ds.ids);
    if (has_queries) {
      RetrievalReport rr = map_cmc(feats, ds.ids, ds.cameras, ds.split);
      r.map = rr.map;
      r.cmc1 = rr.cmc1;
      r.cmc5 = rr.cmc5;
      r.cmc10 = rr.cmc10;
    }
    pop.records.push_back(std::move(r));
  }
}

RunResult run_peg(Population init, const FeatureDataset& ds, const GenerationConfig& cfg,
                  const RunContext& ctx) {
  cfg.validate();
  const Eigen::MatrixXd& X = ds.features;

  Population pop;
  if (!ctx.resume_from.empty()) {
    pop = load_generation(ctx.resume_from);
  } else {
    pop = std::move(init);
    for (Embedder& m : pop.members) quantize_model_f32(m);
  }
  if (pop.members.empty()) throw ConfigError("population is empty");

  for (int g = pop.generation + 1; g <= cfg.generations; ++g) {
    {
      UtilityFn util = make_crs_utility(pop.members, X, cfg.crs);
      select(pop, util, cfg.L, g);
    }
    reproduce_mutate(pop, cfg, derive_seed(ctx.master_seed, kReproPurpose, g));
    pml(pop, X, cfg, derive_seed(ctx.master_seed, kPmlPurpose, g));
    for (Embedder& m : pop.members) quantize_model_f32(m);
    append_member_metrics(pop, ds, cfg, ctx, g);
    pop.generation = g;
    if (!ctx.checkpoint_dir.empty())
      save_generation(ctx.checkpoint_dir + "/gen-" + std::to_string(g), pop, cfg, ctx);
  }

  {
    UtilityFn util = make_crs_utility(pop.members, X, cfg.crs);
    select(pop, util, 1, pop.generation, true);
  }
  RunResult res;
  res.best = pop.members.front();
  res.pop = std::move(pop);
  return res;
}

nlohmann::json record_to_json(const MetricRecord& r) {
  auto num = [](double v) {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  return nlohmann::json{{"run_id", r.run_id},
                        {"generation", r.generation},
                        {"model_id", r.model_id},
                        {"crs", num(r.crs)},
                        {"ics", num(r.ics)},
                        {"dbi", num(r.dbi)},
                        {"sc", num(r.sc)},
                        {"map", num(r.map)},
                        {"cmc1", num(r.cmc1)},
                        {"cmc5", num(r.cmc5)},
                        {"cmc10", num(r.cmc10)},
                        {"label_acc", num(r.label_acc)},
                        {"rho", num(r.rho)},
                        {"tau", num(r.tau)},
                        {"config_hash", r.config_hash},
                        {"seed", r.seed}};
}

MetricRecord record_from_json(const nlohmann::json& j) {
  auto num = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? MetricRecord::nan_value() : v.get<double>();
  };
  MetricRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.generation = j.at("generation").get<int>();
  r.model_id = j.at("model_id").get<int>();
  r.crs = num("crs");
  r.ics = num("ics");
  r.dbi = num("dbi");
  r.sc = num("sc");
  r.map = num("map");
  r.cmc1 = num("cmc1");
  r.cmc5 = num("cmc5");
  r.cmc10 = num("cmc10");
  r.label_acc = num("label_acc");
  r.rho = num("rho");
  r.tau = num("tau");
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  return r;
}

nlohmann::json scatter_to_json(const ScatterReport& r) {
  auto num = [](double v) {
    if (std::isnan(v)) return nlohmann::json(nullptr);
    if (std::isinf(v)) return nlohmann::json(v > 0 ? "inf" : "-inf");
    return nlohmann::json(v);
  };
  return nlohmann::json{{"s_intra", r.s_intra},
                        {"s_inter", r.s_inter},
                        {"j", num(r.j)},
                        {"cluster_sizes", r.cluster_sizes},
                        {"degenerate", r.degenerate}};
}

nlohmann::json retrieval_to_json(const RetrievalReport& r) {
  return nlohmann::json{
      {"map", r.map}, {"cmc1", r.cmc1}, {"cmc5", r.cmc5}, {"cmc10", r.cmc10}};
}

void save_generation(const std::string& dir, const Population& pop, const GenerationConfig& cfg,
                     const RunContext& ctx) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> files;
  for (const Embedder& m : pop.members) {
    char name[32];
    std::snprintf(name, sizeof(name), "model-%04d.ckpt", m.model_id);
    save_model_checkpoint(m, dir + "/" + name);
    files.push_back(name);
  }
  nlohmann::json manifest{{"format", "PEGGEN"},
                          {"version", 1},
                          {"generation", pop.generation},
                          {"run_id", ctx.run_id},
                          {"config_hash", ctx.config_hash},
                          {"master_seed", ctx.master_seed},
                          {"next_model_id", pop.next_model_id},
                          {"members", files},
                          {"selections", pop.selections},
                          {"config", cfg}};
  nlohmann::json records = nlohmann::json::array();
  for (const MetricRecord& r : pop.records) records.push_back(record_to_json(r));
  manifest["records"] = records;

  std::ofstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

Population load_generation(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw ParseError("cannot open manifest in " + dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  if (manifest.value("format", "") != "PEGGEN")
    throw ParseError(dir + "/manifest.json: bad manifest format");

  Population pop;
  pop.generation = manifest.at("generation").get<int>();
  pop.next_model_id = manifest.at("next_model_id").get<int>();
  for (const auto& name : manifest.at("members"))
    pop.members.push_back(load_model_checkpoint(dir + "/" + name.get<std::string>()));
  pop.selections = manifest.at("selections").get<std::vector<SelectionRecord>>();
  for (const auto& rj : manifest.at("records")) pop.records.push_back(record_from_json(rj));
  return pop;
}

}  // namespace peg
