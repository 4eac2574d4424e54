#include "peg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "peg/clustering.hpp"
#include "peg/config_json.hpp"
#include "peg/game.hpp"
#include "peg/metrics.hpp"

namespace peg {

namespace {

constexpr uint64_t kDataPurpose = 0x64617461ULL;     // "data"
constexpr uint64_t kSplitPurpose = 0x73706c69ULL;    // "spli"
constexpr uint64_t kFounderPurpose = 0x666f756eULL;  // "foun"
constexpr uint64_t kWarmKmPurpose = 0x7761726bULL;   // "wark"
constexpr uint64_t kWarmFitPurpose = 0x7761726dULL;  // "warm"
constexpr uint64_t kArmPurpose = 0x61726dULL;        // "arm"
constexpr uint64_t kArmPmlPurpose = 0x61706d6cULL;   // "apml"
constexpr uint64_t kNoisePurpose = 0x6e6f6973ULL;    // "nois"
constexpr uint64_t kVariantPurpose = 0x76617269ULL;  // "vari"
constexpr uint64_t kSelfPurpose = 0x73656c66ULL;     // "self"
constexpr uint64_t kSelectPurpose = 0x73656c65ULL;   // "sele"

int identity_count(const std::vector<int>& ids) {
  int n = 0;
  for (int id : ids) n = std::max(n, id + 1);
  return n;
}

bool has_queries(const FeatureDataset& ds) {
  for (Split s : ds.split)
    if (s == Split::Query) return true;
  return false;
}

std::vector<std::vector<int>> founder_archs(int input_dim, int count, int embed) {
  static const int widths[] = {24, 16, 32, 20};
  std::vector<std::vector<int>> archs;
  for (int i = 0; i < count; ++i) archs.push_back({input_dim, widths[i % 4], embed});
  return archs;
}

// Founders warmed on a shared k-means labelling of the raw inputs; diversity
// comes from architectures, init seeds and batch order.
Population warm_founders(const ExperimentConfig& cfg, const FeatureDataset& ds, int count,
                         uint64_t master) {
  Population pop = make_initial_population(founder_archs(ds.dim(), count, cfg.founder_embed),
                                           count, cfg.hyper,
                                           derive_seed(master, kFounderPurpose));
  if (cfg.warmup_iters > 0) {
    ClusterAssignment warm =
        kmeans_minibatch(ds.features, cfg.gen.crs.M, derive_seed(master, kWarmKmPurpose),
                         cfg.gen.crs.kmeans_iters, cfg.gen.crs.kmeans_batch);
    for (Embedder& m : pop.members) {
      fit_pseudo_labels(m, ds.features, warm.labels, warm.num_clusters, cfg.warmup_iters,
                        cfg.gen.P, cfg.gen.K, derive_seed(master, kWarmFitPurpose, m.model_id),
                        cfg.gen.weight_decay);
      quantize_model_f32(m);
    }
  }
  return pop;
}

void run_peg_arm(Report& rep, const std::string& arm, const ExperimentConfig& cfg,
                 const FeatureDataset& ds) {
  GenerationConfig g = cfg.gen;
  int count = cfg.init_population;
  if (arm == "single") {
    count = 1;
    g.L = 1;
    g.H = 0;
    g.S = 1;
  } else if (arm == "multi-pml") {
    g.H = 0;
  } else if (arm != "full") {
    throw ConfigError("unknown pipeline arm: " + arm);
  }

  const uint64_t master = derive_seed(cfg.seed, kArmPurpose, fnv1a(arm));
  RunContext ctx;
  ctx.run_id = "peg-" + arm + "-s" + std::to_string(cfg.seed);
  ctx.config_hash = config_hash(cfg);
  ctx.master_seed = master;
  if (!cfg.out_dir.empty()) ctx.checkpoint_dir = cfg.out_dir + "/checkpoints-" + arm;

  Population pop = warm_founders(cfg, ds, count, master);
  append_member_metrics(pop, ds, g, ctx, 0);

  Embedder best;
  if (arm == "full") {
    RunResult rr = run_peg(std::move(pop), ds, g, ctx);
    best = std::move(rr.best);
    pop = std::move(rr.pop);
  } else {
    // arms without selection and reproduction: mutual learning only
    for (int generation = 1; generation <= g.generations; ++generation) {
      pml(pop, ds.features, g, derive_seed(master, kArmPmlPurpose, generation));
      for (Embedder& m : pop.members) quantize_model_f32(m);
      append_member_metrics(pop, ds, g, ctx, generation);
      pop.generation = generation;
    }
    UtilityFn util = make_crs_utility(pop.members, ds.features, g.crs);
    select(pop, util, 1, pop.generation, true);
    best = pop.members.front();
  }

  for (const SelectionRecord& s : pop.selections) {
    std::string name = ctx.run_id + "-gen" + std::to_string(s.generation);
    if (s.final_selection) name += "-final";
    rep.traces.emplace_back(name, s.trace);
  }
  rep.records.insert(rep.records.end(), pop.records.begin(), pop.records.end());

  Eigen::MatrixXd bf = ensemble_features({&best}, ds.features);
  RetrievalReport ret = map_cmc(bf, ds.ids, ds.cameras, ds.split);
  MetricRecord fin;
  fin.run_id = ctx.run_id + "-final";
  fin.generation = pop.generation;
  fin.model_id = best.model_id;
  fin.crs = crs(bf, ds.features, g.crs);
  fin.map = ret.map;
  fin.cmc1 = ret.cmc1;
  fin.cmc5 = ret.cmc5;
  fin.cmc10 = ret.cmc10;
  fin.config_hash = ctx.config_hash;
  fin.seed = cfg.seed;
  rep.records.push_back(fin);
  rep.summary[arm + "_map"] = ret.map;
  rep.summary[arm + "_cmc1"] = ret.cmc1;
}

Report run_peg_preset(const ExperimentConfig& cfg) {
  FeatureDataset ds = load_or_synthesize(cfg);
  if (!has_queries(ds)) throw ConfigError("peg preset needs a query/gallery split");
  std::vector<std::string> arms;
  if (cfg.arm == "all")
    arms = {"single", "multi-pml", "full"};
  else
    arms = {cfg.arm};
  Report rep;
  for (const std::string& arm : arms) run_peg_arm(rep, arm, cfg, ds);
  return rep;
}

Report run_crs_validation(const ExperimentConfig& cfg) {
  Report rep;
  FeatureDataset ds = load_or_synthesize(cfg);
  const Eigen::MatrixXd& X = ds.features;
  const std::string hash = config_hash(cfg);
  const int num_ids = identity_count(ds.ids);
  if (num_ids < 2) throw ConfigError("dataset needs >= 2 identities");

  // Label-noise sweep: the reference scatter should track labelling accuracy.
  {
    const uint64_t master = derive_seed(cfg.seed, kNoisePurpose);
    const double levels[] = {0.0, 0.2, 0.4, 0.6, 0.8};
    const std::string run_id = "crs-validation-noise-s" + std::to_string(cfg.seed);
    std::vector<double> accs, scatters;
    for (int i = 0; i < 5; ++i) {
      std::vector<int> labels = corrupt_labels(ds.ids, levels[i], num_ids, derive_seed(master, i));
      int same = 0;
      for (size_t k = 0; k < labels.size(); ++k) same += labels[k] == ds.ids[k];
      const double acc = static_cast<double>(same) / static_cast<double>(labels.size());
      const double j = reference_scatter(X, labels, num_ids, cfg.gen.crs);
      MetricRecord r;
      r.run_id = run_id;
      r.generation = i;
      r.model_id = -1;
      r.ics = j;
      r.label_acc = acc;
      r.config_hash = hash;
      r.seed = cfg.seed;
      rep.records.push_back(std::move(r));
      accs.push_back(acc);
      scatters.push_back(j);
    }
    const double rho = spearman_rho(accs, scatters);
    MetricRecord agg;
    agg.run_id = run_id + "-summary";
    agg.model_id = -1;
    agg.rho = rho;
    agg.config_hash = hash;
    agg.seed = cfg.seed;
    rep.records.push_back(std::move(agg));
    rep.summary["noise_rho"] = rho;
  }

  // Model-ranking sweep: score untrained-for-retrieval models with CRS (and
  // the no-reference baselines), then give each the same self-training budget
  // and compare against the resulting mAP.
  {
    const uint64_t master = derive_seed(cfg.seed, kVariantPurpose);
    const int V = cfg.rank_variants;
    static const int widths[] = {22, 26, 20, 24};
    const std::string run_id = "crs-validation-rank-s" + std::to_string(cfg.seed);
    std::vector<double> crs_v, ics_v, dbi_v, sc_v, map_v;
    for (int i = 0; i < V; ++i) {
      // Square-root ramp: big label-accuracy gaps between the first variants,
      // then a crowded heavily-corrupted tail. Models in the tail fit little
      // of their labels and keep quasi-random features, which scores read off
      // their own space mistake for mild structure; the reference model only
      // inherits their pseudo-labels and stays grounded in the raw inputs.
      const double corruption = 0.85 * std::sqrt(static_cast<double>(i) / (V - 1));
      std::vector<int> arch = {static_cast<int>(X.cols()), widths[i % 4], 8};
      Embedder m = init_model(arch, cfg.hyper, derive_seed(master, kVariantPurpose, i));
      m.model_id = i;
      std::vector<int> warm =
          corrupt_labels(ds.ids, corruption, num_ids, derive_seed(master, kNoisePurpose, i));
      fit_pseudo_labels(m, X, warm, num_ids, cfg.warmup_iters, cfg.gen.P, cfg.gen.K,
                        derive_seed(master, kWarmFitPurpose, i), cfg.gen.weight_decay);
      quantize_model_f32(m);

      Eigen::MatrixXd f = ensemble_features({&m}, X);
      double score = crs_averaged(f, X, cfg.gen.crs);
      ClusterAssignment asg = kmeans_minibatch(f, cfg.gen.crs.M, crs_kmeans_seed(cfg.gen.crs),
                                               cfg.gen.crs.kmeans_iters, cfg.gen.crs.kmeans_batch);
      const double raw_ics = ics(f, asg).j;
      const double raw_dbi = dbi(f, asg);
      const double raw_sc = silhouette(f, asg);

      fit_pseudo_labels(m, X, asg.labels, asg.num_clusters, cfg.self_train_iters, cfg.gen.P,
                        cfg.gen.K, derive_seed(master, kSelfPurpose, i), cfg.gen.weight_decay);
      Eigen::MatrixXd f2 = ensemble_features({&m}, X);
      RetrievalReport ret = map_cmc(f2, ds.ids, ds.cameras, ds.split);

      MetricRecord r;
      r.run_id = run_id;
      r.model_id = i;
      r.crs = score;
      r.ics = raw_ics;
      r.dbi = raw_dbi;
      r.sc = raw_sc;
      r.map = ret.map;
      r.cmc1 = ret.cmc1;
      r.config_hash = hash;
      r.seed = cfg.seed;
      rep.records.push_back(std::move(r));
      crs_v.push_back(score);
      ics_v.push_back(raw_ics);
      dbi_v.push_back(-raw_dbi);  // lower DBI is better; flip for rank correlation
      sc_v.push_back(raw_sc);
      map_v.push_back(ret.map);
    }
    const double rho = spearman_rho(crs_v, map_v);
    const double tau = kendall_tau(crs_v, map_v);
    MetricRecord agg;
    agg.run_id = run_id + "-summary";
    agg.model_id = -1;
    agg.rho = rho;
    agg.tau = tau;
    agg.config_hash = hash;
    agg.seed = cfg.seed;
    rep.records.push_back(std::move(agg));
    rep.summary["rank_rho"] = rho;
    rep.summary["rank_tau"] = tau;
    rep.summary["rank_ics_rho"] = spearman_rho(ics_v, map_v);
    rep.summary["rank_dbi_rho"] = spearman_rho(dbi_v, map_v);
    rep.summary["rank_sc_rho"] = spearman_rho(sc_v, map_v);
  }
  return rep;
}

Report run_selection_ablation(const ExperimentConfig& cfg) {
  FeatureDataset ds = load_or_synthesize(cfg);
  const Eigen::MatrixXd& X = ds.features;
  const uint64_t master = derive_seed(cfg.seed, kSelectPurpose);
  const std::string hash = config_hash(cfg);
  const int num_ids = identity_count(ds.ids);
  const int count = std::max(cfg.init_population, cfg.gen.L + 1);

  // founders of graded quality so the three strategies can actually disagree
  Population pop = make_initial_population(founder_archs(ds.dim(), count, cfg.founder_embed),
                                           count, cfg.hyper,
                                           derive_seed(master, kFounderPurpose));
  for (size_t i = 0; i < pop.members.size(); ++i) {
    const double corruption =
        0.7 * static_cast<double>(i) / static_cast<double>(pop.members.size() - 1);
    std::vector<int> warm =
        corrupt_labels(ds.ids, corruption, num_ids, derive_seed(master, kNoisePurpose, i));
    fit_pseudo_labels(pop.members[i], X, warm, num_ids, cfg.warmup_iters, cfg.gen.P, cfg.gen.K,
                      derive_seed(master, kWarmFitPurpose, i), cfg.gen.weight_decay);
    quantize_model_f32(pop.members[i]);
  }

  UtilityFn util = make_crs_utility(pop.members, X, cfg.gen.crs);
  UtilityCache cache;
  const int K = static_cast<int>(pop.members.size());
  Report rep;
  auto record = [&](const std::string& strategy, const std::vector<int>& selected, double u) {
    MetricRecord r;
    r.run_id = "selection-ablation-" + strategy + "-s" + std::to_string(cfg.seed);
    r.model_id = -1;
    r.crs = u;
    r.config_hash = hash;
    r.seed = cfg.seed;
    rep.records.push_back(std::move(r));
    rep.summary["selection_" + strategy] = u;
    (void)selected;
  };

  BrdResult game = brd_select(K, cfg.gen.L, util, cache);
  record("game", game.selected, game.trace.back().utility);
  rep.summary["selection_game_converged"] = game.converged ? 1.0 : 0.0;
  rep.traces.emplace_back("selection-ablation-game-s" + std::to_string(cfg.seed), game.trace);

  std::vector<std::pair<double, int>> solo;
  for (int i = 0; i < K; ++i) solo.emplace_back(cache.eval({i}, util), i);
  std::sort(solo.begin(), solo.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int> top;
  for (int i = 0; i < cfg.gen.L && i < K; ++i) top.push_back(solo[i].second);
  std::sort(top.begin(), top.end());
  record("individual", top, cache.eval(top, util));

  Rng rng(derive_seed(master, kSelectPurpose, 1));
  std::vector<int> rnd = sample_without_replacement(rng, K, std::min(cfg.gen.L, K));
  std::sort(rnd.begin(), rnd.end());
  record("random", rnd, cache.eval(rnd, util));

  return rep;
}

Report run_brd_trace(const ExperimentConfig& cfg) {
  // the worked three-model table; optimum reachable from zeros is {1,2} at 5
  const std::map<std::vector<int>, double> table{{{0}, 1.0},    {{1}, 2.0},    {{2}, 3.0},
                                                 {{0, 1}, 4.0}, {{0, 2}, 2.5}, {{1, 2}, 5.0}};
  UtilityFn util = [table](const std::vector<int>& dedup) { return table.at(dedup); };
  UtilityCache cache;
  BrdResult res = brd_select(3, 2, util, cache);
  NashReport nash = nash_check(res.action, 3, util, cache);

  Report rep;
  const std::string run_id = "brd-trace-s" + std::to_string(cfg.seed);
  rep.traces.emplace_back(run_id, res.trace);
  MetricRecord r;
  r.run_id = run_id;
  r.model_id = -1;
  r.crs = res.trace.back().utility;
  r.config_hash = config_hash(cfg);
  r.seed = cfg.seed;
  rep.records.push_back(std::move(r));
  rep.summary["brd_final_utility"] = res.trace.back().utility;
  rep.summary["brd_converged"] = res.converged ? 1.0 : 0.0;
  rep.summary["brd_nash"] = nash.is_nash ? 1.0 : 0.0;
  return rep;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (preset.empty()) throw ConfigError("preset must be named");
  if (!(query_fraction >= 0 && query_fraction < 1))
    throw ConfigError("query_fraction must be in [0,1)");
  if (init_population < 1) throw ConfigError("init_population must be >= 1");
  if (founder_embed < 1) throw ConfigError("founder_embed must be >= 1");
  if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
  if (rank_variants < 6) throw ConfigError("rank_variants must be >= 6");
  if (self_train_iters < 1) throw ConfigError("self_train_iters must be >= 1");
  gen.validate();
  hyper.validate();
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "preset",        "arm",          "dataset_path", "synth",
      "query_fraction", "gen",          "hyper",        "init_population",
      "founder_embed", "warmup_iters",  "rank_variants", "self_train_iters",
      "seed",          "out_dir",       "formats"};
  for (const auto& item : j.items())
    if (!known.count(item.key())) throw ConfigError("unknown config key: " + item.key());
  if (j.contains("dataset_path") && j.contains("synth"))
    throw ConfigError("set exactly one of dataset_path and synth");

  ExperimentConfig cfg;
  try {
    cfg.preset = j.value("preset", cfg.preset);
    cfg.arm = j.value("arm", cfg.arm);
    cfg.dataset_path = j.value("dataset_path", cfg.dataset_path);
    if (j.contains("synth")) cfg.synth = j.at("synth").get<SynthSpec>();
    cfg.query_fraction = j.value("query_fraction", cfg.query_fraction);
    if (j.contains("gen")) cfg.gen = j.at("gen").get<GenerationConfig>();
    if (j.contains("hyper")) cfg.hyper = j.at("hyper").get<HyperParams>();
    cfg.init_population = j.value("init_population", cfg.init_population);
    cfg.founder_embed = j.value("founder_embed", cfg.founder_embed);
    cfg.warmup_iters = j.value("warmup_iters", cfg.warmup_iters);
    cfg.rank_variants = j.value("rank_variants", cfg.rank_variants);
    cfg.self_train_iters = j.value("self_train_iters", cfg.self_train_iters);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.formats = j.value("formats", cfg.formats);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j{{"preset", cfg.preset},
                   {"arm", cfg.arm},
                   {"query_fraction", cfg.query_fraction},
                   {"gen", cfg.gen},
                   {"hyper", cfg.hyper},
                   {"init_population", cfg.init_population},
                   {"founder_embed", cfg.founder_embed},
                   {"warmup_iters", cfg.warmup_iters},
                   {"rank_variants", cfg.rank_variants},
                   {"self_train_iters", cfg.self_train_iters},
                   {"seed", cfg.seed},
                   {"out_dir", cfg.out_dir},
                   {"formats", cfg.formats}};
  if (cfg.dataset_path.empty())
    j["synth"] = cfg.synth;
  else
    j["dataset_path"] = cfg.dataset_path;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // output plumbing does not change what the experiment computes
  nlohmann::json j = experiment_to_json(cfg);
  j.erase("out_dir");
  j.erase("formats");
  const uint64_t h = fnv1a(j.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

FeatureDataset load_or_synthesize(const ExperimentConfig& cfg) {
  FeatureDataset ds;
  if (!cfg.dataset_path.empty()) {
    ds = load_dataset(cfg.dataset_path);
  } else {
    SynthSpec s = cfg.synth;
    if (s.seed == 0) s.seed = derive_seed(cfg.seed, kDataPurpose);
    ds = generate_synthetic(s);
  }
  if (!has_queries(ds) && cfg.query_fraction > 0)
    ds = split_query_gallery(ds, cfg.query_fraction, derive_seed(cfg.seed, kSplitPurpose));
  return ds;
}

Report run_preset(const std::string& name, const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.preset = name;
  c.validate();
  if (name == "peg") return run_peg_preset(c);
  if (name == "crs-validation") return run_crs_validation(c);
  if (name == "selection-ablation") return run_selection_ablation(c);
  if (name == "brd-trace") return run_brd_trace(c);
  throw ConfigError("unknown preset: " + name);
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* kCsvHeader =
    "run_id,generation,model_id,crs,ics,dbi,sc,map,cmc1,cmc5,cmc10,label_acc,rho,tau,"
    "config_hash,seed";

std::vector<std::vector<std::string>> parse_csv_table(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(field);
      field.clear();
      rows.push_back(row);
      row.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError("csv: unterminated quoted field");
  if (!field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::string report_csv(const std::vector<MetricRecord>& records) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const MetricRecord& r : records) {
    out += csv_escape(r.run_id);
    out += ',' + std::to_string(r.generation);
    out += ',' + std::to_string(r.model_id);
    for (double v : {r.crs, r.ics, r.dbi, r.sc, r.map, r.cmc1, r.cmc5, r.cmc10, r.label_acc,
                     r.rho, r.tau}) {
      out += ',';
      out += csv_num(v);
    }
    out += ',' + csv_escape(r.config_hash);
    out += ',' + std::to_string(r.seed);
    out += '\n';
  }
  return out;
}

std::vector<MetricRecord> parse_report_csv(const std::string& csv) {
  const auto rows = parse_csv_table(csv);
  if (rows.empty()) throw ParseError("csv: empty document");
  {
    std::string header;
    for (size_t i = 0; i < rows[0].size(); ++i) {
      if (i) header += ',';
      header += rows[0][i];
    }
    if (header != kCsvHeader) throw ParseError("csv: unexpected header: " + header);
  }
  std::vector<MetricRecord> out;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() == 1 && r[0].empty()) continue;
    if (r.size() != 16)
      throw ParseError("csv line " + std::to_string(i + 1) + ": expected 16 fields, got " +
                       std::to_string(r.size()));
    try {
      auto num = [](const std::string& s) {
        return s.empty() ? MetricRecord::nan_value() : std::stod(s);
      };
      MetricRecord m;
      m.run_id = r[0];
      m.generation = std::stoi(r[1]);
      m.model_id = std::stoi(r[2]);
      m.crs = num(r[3]);
      m.ics = num(r[4]);
      m.dbi = num(r[5]);
      m.sc = num(r[6]);
      m.map = num(r[7]);
      m.cmc1 = num(r[8]);
      m.cmc5 = num(r[9]);
      m.cmc10 = num(r[10]);
      m.label_acc = num(r[11]);
      m.rho = num(r[12]);
      m.tau = num(r[13]);
      m.config_hash = r[14];
      m.seed = std::stoull(r[15]);
      out.push_back(std::move(m));
    } catch (const std::logic_error&) {
      throw ParseError("csv line " + std::to_string(i + 1) + ": bad numeric field");
    }
  }
  return out;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string fmt_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

struct Panel {
  double x0, y0, x1, y1;  // pixel corners, y grows downward
  double lo_x, hi_x, lo_y, hi_y;
  double px(double v) const { return x0 + (v - lo_x) / (hi_x - lo_x) * (x1 - x0); }
  double py(double v) const { return y1 - (v - lo_y) / (hi_y - lo_y) * (y1 - y0); }
};

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
}

}  // namespace

std::string report_svg(const Report& report) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"440\" "
       "viewBox=\"0 0 960 440\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"960\" height=\"440\" fill=\"white\"/>\n";

  // left panel: selection utility traces
  {
    Panel p{60, 40, 450, 400, 0, 1, 0, 1};
    double lo = 0, hi = 1;
    size_t steps = 1;
    bool any = false;
    for (const auto& [name, trace] : report.traces) {
      for (const BrdStep& st : trace) {
        if (!any) {
          lo = hi = st.utility;
          any = true;
        }
        lo = std::min(lo, st.utility);
        hi = std::max(hi, st.utility);
      }
      steps = std::max(steps, trace.size());
    }
    pad_range(lo, hi);
    p.lo_x = 0;
    p.hi_x = static_cast<double>(std::max<size_t>(steps - 1, 1));
    p.lo_y = lo;
    p.hi_y = hi;
    s << "<rect x=\"60\" y=\"40\" width=\"390\" height=\"360\" fill=\"none\" "
         "stroke=\"#444444\"/>\n";
    s << "<text x=\"60\" y=\"28\" font-size=\"14\" fill=\"#222222\">selection utility by "
         "turn</text>\n";
    int ci = 0;
    for (const auto& [name, trace] : report.traces) {
      if (trace.empty()) continue;
      s << "<polyline fill=\"none\" stroke=\"" << kPalette[ci % 6] << "\" stroke-width=\"1.5\" "
        << "points=\"";
      for (size_t i = 0; i < trace.size(); ++i) {
        if (i) s << ' ';
        s << fmt_coord(p.px(static_cast<double>(i))) << ',' << fmt_coord(p.py(trace[i].utility));
      }
      s << "\"/>\n";
      s << "<text x=\"66\" y=\"" << 56 + 16 * ci << "\" font-size=\"11\" fill=\""
        << kPalette[ci % 6] << "\">" << xml_escape(name) << "</text>\n";
      ++ci;
      if (ci >= 12) break;
    }
    if (ci == 0)
      s << "<text x=\"180\" y=\"220\" font-size=\"12\" fill=\"#888888\">no traces</text>\n";
  }

  // right panel: score vs retrieval scatter
  {
    std::vector<std::pair<double, double>> pts;
    for (const MetricRecord& r : report.records)
      if (std::isfinite(r.crs) && std::isfinite(r.map)) pts.emplace_back(r.crs, r.map);
    s << "<rect x=\"540\" y=\"40\" width=\"390\" height=\"360\" fill=\"none\" "
         "stroke=\"#444444\"/>\n";
    s << "<text x=\"540\" y=\"28\" font-size=\"14\" fill=\"#222222\">crs vs map</text>\n";
    if (pts.empty()) {
      s << "<text x=\"660\" y=\"220\" font-size=\"12\" fill=\"#888888\">no paired scores</text>\n";
    } else {
      double lox = pts[0].first, hix = pts[0].first, loy = pts[0].second, hiy = pts[0].second;
      for (const auto& [x, y] : pts) {
        lox = std::min(lox, x);
        hix = std::max(hix, x);
        loy = std::min(loy, y);
        hiy = std::max(hiy, y);
      }
      pad_range(lox, hix);
      pad_range(loy, hiy);
      Panel p{540, 40, 930, 400, lox, hix, loy, hiy};
      for (const auto& [x, y] : pts)
        s << "<circle cx=\"" << fmt_coord(p.px(x)) << "\" cy=\"" << fmt_coord(p.py(y))
          << "\" r=\"4\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>\n";
    }
  }

  s << "</svg>\n";
  return s.str();
}

std::vector<BrdStep> parse_trace_jsonl(const std::string& text) {
  std::vector<BrdStep> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      BrdStep s;
      s.round = j.at("round").get<int>();
      s.agent = j.at("agent").get<int>();
      s.actions = j.at("action_vector").get<std::vector<int>>();
      s.dedup = j.at("dedup_set").get<std::vector<int>>();
      s.utility = j.at("utility").get<double>();
      s.changed = j.at("changed").get<bool>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void emit_report(const Report& report, const std::vector<std::string>& formats,
                 const std::string& out_dir) {
  if (formats.empty()) throw ConfigError("no report formats requested");
  if (report.records.empty()) throw ConfigError("report is empty");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());
  auto write_file = [&](const std::string& name, const std::string& body) {
    const std::string path = out_dir + "/" + name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << body;
    if (!f) throw std::runtime_error("short write to " + path);
  };
  for (const std::string& fmt : formats) {
    if (fmt == "csv") {
      write_file("metrics.csv", report_csv(report.records));
    } else if (fmt == "json") {
      std::string body;
      for (const MetricRecord& r : report.records) {
        body += record_to_json(r).dump();
        body += '\n';
      }
      write_file("records.jsonl", body);
    } else if (fmt == "svg") {
      write_file("report.svg", report_svg(report));
    } else {
      throw ConfigError("unknown report format: " + fmt);
    }
  }
  for (const auto& [name, trace] : report.traces)
    write_file("trace-" + name + ".jsonl", trace_jsonl(trace));
  if (!report.summary.empty()) {
    nlohmann::json j(report.summary);
    write_file("summary.json", j.dump(2) + "\n");
  }
}

Report evaluate_checkpoint(const std::string& checkpoint_dir, const std::string& dataset_path) {
  std::ifstream f(checkpoint_dir + "/manifest.json");
  if (!f) throw ParseError("cannot open manifest in " + checkpoint_dir);
  nlohmann::json manifest;
  GenerationConfig g;
  RunContext ctx;
  try {
    manifest = nlohmann::json::parse(f);
    g = manifest.at("config").get<GenerationConfig>();
    ctx.run_id = manifest.value("run_id", std::string("run")) + "-eval";
    ctx.config_hash = manifest.value("config_hash", std::string());
    ctx.master_seed = manifest.value("master_seed", uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(checkpoint_dir + "/manifest.json: " + e.what());
  }
  Population pop = load_generation(checkpoint_dir);
  pop.records.clear();
  FeatureDataset ds = load_dataset(dataset_path);
  append_member_metrics(pop, ds, g, ctx, pop.generation);
  Report rep;
  rep.records = std::move(pop.records);
  return rep;
}

Report load_report(const std::string& dir) {
  namespace fs = std::filesystem;
  Report rep;
  const std::string jsonl = dir + "/records.jsonl";
  if (fs::exists(jsonl)) {
    std::ifstream f(jsonl);
    if (!f) throw ParseError("cannot open " + jsonl);
    std::string line;
    int n = 0;
    while (std::getline(f, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        rep.records.push_back(record_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(jsonl + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  } else if (fs::exists(dir + "/metrics.csv")) {
    std::ifstream f(dir + "/metrics.csv", std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    rep.records = parse_report_csv(buf.str());
  } else {
    throw ParseError("no records.jsonl or metrics.csv in " + dir);
  }

  std::vector<std::string> trace_files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("trace-", 0) == 0 && name.size() > 12 &&
        name.substr(name.size() - 6) == ".jsonl")
      trace_files.push_back(name);
  }
  std::sort(trace_files.begin(), trace_files.end());
  for (const std::string& name : trace_files) {
    std::ifstream f(dir + "/" + name, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    rep.traces.emplace_back(name.substr(6, name.size() - 12), parse_trace_jsonl(buf.str()));
  }

  const std::string sum = dir + "/summary.json";
  if (fs::exists(sum)) {
    std::ifstream f(sum);
    try {
      nlohmann::json j = nlohmann::json::parse(f);
      for (const auto& item : j.items())
        if (item.value().is_number()) rep.summary[item.key()] = item.value().get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(sum + ": " + e.what());
    }
  }
  return rep;
}

}  // namespace peg
