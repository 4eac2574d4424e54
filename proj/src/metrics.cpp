#include "peg/metrics.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "peg/objectives.hpp"

namespace peg {

ScatterReport ics(const Eigen::MatrixXd& features, const ClusterAssignment& assignment) {
  const int N = static_cast<int>(features.rows());
  if (static_cast<int>(assignment.labels.size()) != N)
    throw ConfigError("assignment length mismatch");
  const int M = assignment.num_clusters;
  // M == 1 is tolerated: the lone centroid coincides with the global mean, so j = 0.
  if (M < 1) throw ConfigError("scatter ratio needs a non-empty clustering");

  ScatterReport r;
  r.cluster_sizes.assign(M, 0);
  r.centroids = Eigen::MatrixXd::Zero(M, features.cols());
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(features.cols());
  int kept = 0;
  for (int i = 0; i < N; ++i) {
    int c = assignment.labels[i];
    if (c < 0) continue;
    r.cluster_sizes[c]++;
    r.centroids.row(c) += features.row(i);
    total += features.row(i);
    kept++;
  }
  if (kept == 0) throw ConfigError("all samples are outliers");
  for (int c = 0; c < M; ++c)
    if (r.cluster_sizes[c] == 0) throw ConfigError("cluster " + std::to_string(c) + " is empty");
  for (int c = 0; c < M; ++c) r.centroids.row(c) /= r.cluster_sizes[c];
  r.mean = total / kept;

  r.s_intra_per_cluster.assign(M, 0.0);
  for (int i = 0; i < N; ++i) {
    int c = assignment.labels[i];
    if (c < 0) continue;
    r.s_intra_per_cluster[c] += (features.row(i) - r.centroids.row(c)).squaredNorm();
  }
  for (int c = 0; c < M; ++c) {
    r.s_intra += r.s_intra_per_cluster[c];
    r.s_inter += r.cluster_sizes[c] * (r.centroids.row(c) - r.mean).squaredNorm();
  }
  if (r.s_intra > 0) {
    r.j = r.s_inter / r.s_intra;
  } else {
    r.j = r.s_inter > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    r.degenerate = true;
  }
  return r;
}

double dbi(const Eigen::MatrixXd& features, const ClusterAssignment& assignment) {
  const int M = assignment.num_clusters;
  if (M < 2) throw ConfigError("DBI needs >= 2 clusters");
  ScatterReport r = ics(features, assignment);
  // mean member-to-centroid distance per cluster
  std::vector<double> s(M, 0.0);
  for (int i = 0; i < static_cast<int>(features.rows()); ++i) {
    int c = assignment.labels[i];
    if (c < 0) continue;
    s[c] += (features.row(i) - r.centroids.row(c)).norm();
  }
  for (int c = 0; c < M; ++c) s[c] /= r.cluster_sizes[c];

  double total = 0;
  for (int i = 0; i < M; ++i) {
    double worst = 0;
    for (int j = 0; j < M; ++j) {
      if (j == i) continue;
      double d = (r.centroids.row(i) - r.centroids.row(j)).norm();
      double ratio = d > 0 ? (s[i] + s[j]) / d : std::numeric_limits<double>::infinity();
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / M;
}

double silhouette(const Eigen::MatrixXd& features, const ClusterAssignment& assignment) {
  const int N = static_cast<int>(features.rows());
  const int M = assignment.num_clusters;
  if (M < 2) throw ConfigError("silhouette needs >= 2 clusters");
  std::vector<int> size(M, 0);
  for (int i = 0; i < N; ++i)
    if (assignment.labels[i] >= 0) size[assignment.labels[i]]++;

  double total = 0;
  int counted = 0;
  for (int i = 0; i < N; ++i) {
    int ci = assignment.labels[i];
    if (ci < 0) continue;
    counted++;
    if (size[ci] <= 1) continue;  // singleton clusters contribute 0
    std::vector<double> mean_dist(M, 0.0);
    for (int j = 0; j < N; ++j) {
      int cj = assignment.labels[j];
      if (cj < 0 || j == i) continue;
      mean_dist[cj] += (features.row(i) - features.row(j)).norm();
    }
    double a = mean_dist[ci] / (size[ci] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < M; ++c) {
      if (c == ci || size[c] == 0) continue;
      b = std::min(b, mean_dist[c] / size[c]);
    }
    double denom = std::max(a, b);
    if (denom > 0) total += (b - a) / denom;
  }
  if (counted == 0) throw ConfigError("all samples are outliers");
  return total / counted;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const int n = static_cast<int>(xs.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return xs[a] < xs[b]; });
  std::vector<double> rank(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    double avg = (i + j) / 2.0 + 1.0;
    for (int k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ConfigError("need two equal-length series");
  std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
  const int n = static_cast<int>(xs.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ConfigError("need two equal-length series");
  const int n = static_cast<int>(xs.size());
  long long concordant = 0, discordant = 0, tx = 0, ty = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
      if (dx == 0 && dy == 0) {
        tx++;
        ty++;
      } else if (dx == 0) {
        tx++;
      } else if (dy == 0) {
        ty++;
      } else if ((dx > 0) == (dy > 0)) {
        concordant++;
      } else {
        discordant++;
      }
    }
  }
  const long long n0 = static_cast<long long>(n) * (n - 1) / 2;
  double denom = std::sqrt(static_cast<double>(n0 - tx)) * std::sqrt(static_cast<double>(n0 - ty));
  if (denom == 0) return std::numeric_limits<double>::quiet_NaN();
  return (concordant - discordant) / denom;
}

void CrsConfig::validate() const {
  if (ref_layers.empty()) throw ConfigError("ref_layers must not be empty");
  for (int w : ref_layers)
    if (w < 1) throw ConfigError("ref_layers widths must be >= 1");
  if (M < 2) throw ConfigError("crs M must be >= 2");
  if (ref_iters < 1) throw ConfigError("ref_iters must be >= 1");
  if (!(ref_lr > 0)) throw ConfigError("ref_lr must be > 0");
  if (ref_P < 1 || ref_K < 2) throw ConfigError("reference batch needs P >= 1 and K >= 2");
  if (!(ref_eps > 0 && ref_eps < 1)) throw ConfigError("ref_eps must be in (0,1)");
  if (kmeans_iters < 1 || kmeans_batch < 1) throw ConfigError("k-means schedule invalid");
  if (ref_avg < 1) throw ConfigError("ref_avg must be >= 1");
}

namespace {

constexpr uint64_t kCrsKmeansPurpose = 0x6b6d65616e73ULL;  // "kmeans"
constexpr uint64_t kCrsHeadPurpose = 0x68656164ULL;        // "head"
constexpr uint64_t kCrsBatchPurpose = 0x6261746368ULL;     // "batch"

}  // namespace

double reference_scatter(const Eigen::MatrixXd& raw_inputs, const std::vector<int>& labels,
                         int num_clusters, const CrsConfig& cfg) {
  cfg.validate();
  if (num_clusters < 2) throw ConfigError("reference training needs >= 2 pseudo-classes");

  std::vector<int> arch;
  arch.push_back(static_cast<int>(raw_inputs.cols()));
  arch.insert(arch.end(), cfg.ref_layers.begin(), cfg.ref_layers.end());
  HyperParams hp;
  hp.eps = cfg.ref_eps;
  hp.w_id = 1.0;
  hp.w_tri = 1.0;
  hp.w_mid = 0.0;
  hp.w_mtri = 0.0;
  hp.lr = cfg.ref_lr;
  Embedder ref = init_model(arch, hp, cfg.ref_seed, num_clusters);

  const int P = std::min(cfg.ref_P, num_clusters);
  for (int it = 0; it < cfg.ref_iters; ++it) {
    PKBatch pk = sample_pk_batch(labels, P, cfg.ref_K,
                                 derive_seed(cfg.ref_seed, kCrsBatchPurpose, it));
    Eigen::MatrixXd bx(pk.indices.size(), raw_inputs.cols());
    for (size_t b = 0; b < pk.indices.size(); ++b) bx.row(b) = raw_inputs.row(pk.indices[b]);
    ForwardCache fc = forward(ref, bx, false, true);
    MinedPairs mined = mine_hard_pairs(fc.features, pk.labels);
    ValueGrad idl = id_loss(fc.scores, pk.labels, hp.eps);
    ValueGrad tri = softmax_triplet_loss(fc.features, mined);
    EmbedderParams grads = backward(ref, fc, tri.grad, idl.grad);
    adam_step(ref, grads, hp.lr, cfg.ref_weight_decay);
  }

  Eigen::MatrixXd feats = forward_features(ref, raw_inputs, false);
  ClusterAssignment a;
  a.labels = labels;
  a.num_clusters = num_clusters;
  return ics(feats, a).j;
}

double crs(const Eigen::MatrixXd& evaluated_features, const Eigen::MatrixXd& raw_inputs,
           const CrsConfig& cfg) {
  cfg.validate();
  if (evaluated_features.rows() != raw_inputs.rows())
    throw ConfigError("evaluated features and raw inputs disagree on N");
  ClusterAssignment pseudo = kmeans_minibatch(evaluated_features, cfg.M, crs_kmeans_seed(cfg),
                                              cfg.kmeans_iters, cfg.kmeans_batch);
  return reference_scatter(raw_inputs, pseudo.labels, pseudo.num_clusters, cfg);
}

double crs_averaged(const Eigen::MatrixXd& evaluated_features, const Eigen::MatrixXd& raw_inputs,
                    const CrsConfig& cfg) {
  cfg.validate();
  if (evaluated_features.rows() != raw_inputs.rows())
    throw ConfigError("evaluated features and raw inputs disagree on N");
  ClusterAssignment pseudo = kmeans_minibatch(evaluated_features, cfg.M, crs_kmeans_seed(cfg),
                                              cfg.kmeans_iters, cfg.kmeans_batch);
  double total = 0;
  for (int i = 0; i < cfg.ref_avg; ++i) {
    CrsConfig fit = cfg;
    fit.ref_seed = cfg.ref_seed + static_cast<uint64_t>(i);
    total += reference_scatter(raw_inputs, pseudo.labels, pseudo.num_clusters, fit);
  }
  return total / cfg.ref_avg;
}

uint64_t crs_kmeans_seed(const CrsConfig& cfg) {
  return derive_seed(cfg.ref_seed, kCrsKmeansPurpose);
}

RetrievalReport map_cmc(const Eigen::MatrixXd& embedded, const std::vector<int>& ids,
                        const std::vector<int>& cameras, const std::vector<Split>& split) {
  const int N = static_cast<int>(embedded.rows());
  if (static_cast<int>(ids.size()) != N || static_cast<int>(cameras.size()) != N ||
      static_cast<int>(split.size()) != N)
    throw ConfigError("metadata length mismatch");
  std::vector<int> queries, gallery;
  for (int i = 0; i < N; ++i) {
    if (split[i] == Split::Query) queries.push_back(i);
    if (split[i] == Split::Gallery) gallery.push_back(i);
  }
  if (queries.empty()) throw std::runtime_error("no query samples");

  RetrievalReport rep;
  rep.queries = static_cast<int>(queries.size());
  for (int q : queries) {
    std::vector<std::pair<double, int>> ranked;  // (distance, gallery index)
    for (int g : gallery) {
      if (ids[g] == ids[q] && cameras[g] == cameras[q]) continue;  // standard exclusion
      ranked.emplace_back((embedded.row(q) - embedded.row(g)).norm(), g);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;
    });
    int relevant = 0;
    for (const auto& [d, g] : ranked)
      if (ids[g] == ids[q]) relevant++;
    if (relevant == 0)
      throw std::runtime_error("query " + std::to_string(q) +
                               " has no valid gallery match after camera filtering");
    double ap = 0;
    int hits = 0;
    bool top1 = false, top5 = false, top10 = false;
    for (size_t k = 0; k < ranked.size(); ++k) {
      if (ids[ranked[k].second] == ids[q]) {
        hits++;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        if (k < 1) top1 = true;
        if (k < 5) top5 = true;
        if (k < 10) top10 = true;
      }
    }
    rep.map += ap / relevant;
    rep.cmc1 += top1 ? 1 : 0;
    rep.cmc5 += top5 ? 1 : 0;
    rep.cmc10 += top10 ? 1 : 0;
  }
  rep.map /= rep.queries;
  rep.cmc1 /= rep.queries;
  rep.cmc5 /= rep.queries;
  rep.cmc10 /= rep.queries;
  return rep;
}

double label_accuracy(const ClusterAssignment& pseudo, const std::vector<int>& gt_ids) {
  if (pseudo.labels.size() != gt_ids.size()) throw ConfigError("label length mismatch");
  std::map<int, std::map<int, int>> votes;  // cluster -> id -> count
  int kept = 0;
  for (size_t i = 0; i < pseudo.labels.size(); ++i) {
    if (pseudo.labels[i] < 0) continue;
    votes[pseudo.labels[i]][gt_ids[i]]++;
    kept++;
  }
  if (kept == 0) throw std::runtime_error("all samples are outliers");
  std::map<int, int> majority;
  for (const auto& [cluster, counts] : votes) {
    int best_id = -1, best = -1;
    for (const auto& [id, n] : counts)
      if (n > best) {  // map order breaks ties toward the smaller id
        best = n;
        best_id = id;
      }
    majority[cluster] = best_id;
  }
  int correct = 0;
  for (size_t i = 0; i < pseudo.labels.size(); ++i) {
    if (pseudo.labels[i] < 0) continue;
    if (majority[pseudo.labels[i]] == gt_ids[i]) correct++;
  }
  return static_cast<double>(correct) / kept;
}

}  // namespace peg
