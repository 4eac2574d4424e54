#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "peg/clustering.hpp"
#include "peg/common.hpp"
#include "peg/dataset.hpp"
#include "peg/embedder.hpp"

namespace peg {

// Inter-/intra-cluster scatter decomposition. j = s_inter / s_intra; when
// s_intra is zero j becomes +inf and degenerate is set (callers treat it as
// maximal and should log the case).
struct ScatterReport {
  std::vector<double> s_intra_per_cluster;
  double s_intra = 0;
  double s_inter = 0;
  double j = 0;
  std::vector<int> cluster_sizes;
  Eigen::MatrixXd centroids;
  Eigen::RowVectorXd mean;
  bool degenerate = false;
};

// Outliers (label -1) are excluded from every sum. A single cluster is legal
// and scores j = 0 (its centroid is the global mean).
ScatterReport ics(const Eigen::MatrixXd& features, const ClusterAssignment& assignment);

double dbi(const Eigen::MatrixXd& features, const ClusterAssignment& assignment);
double silhouette(const Eigen::MatrixXd& features, const ClusterAssignment& assignment);

// Rank correlations; ties by average ranks (rho) and tau-b (tau). A constant
// sequence has no defined rank correlation and yields NaN.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);
double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys);

// Reference-model recipe for the cross-reference scatter utility. Every field
// participates in determinism: CRS is a pure function of (features, raw X, cfg).
struct CrsConfig {
  std::vector<int> ref_layers = {16, 8};  // hidden widths then embed dim; input dim from data
  uint64_t ref_seed = 7;
  int M = 20;          // k-means cluster count, shared by every evaluated model
  int ref_iters = 200; // reference training iterations
  double ref_lr = 2e-3;
  int ref_P = 4;
  int ref_K = 4;
  double ref_eps = 0.1;          // label smoothing of the reference loss
  double ref_weight_decay = 5e-4;
  int kmeans_iters = 25;
  int kmeans_batch = 256;
  int ref_avg = 1;     // reference fits averaged per score (seeds ref_seed..+n-1)

  void validate() const;
};

// Trains a fresh reference model (fixed-seed init) on the raw inputs with the
// given pseudo-labels for cfg.ref_iters steps of smoothed cross entropy plus
// softmax triplet loss, then returns the scatter ratio of its features under
// those labels. The building block beneath crs().
double reference_scatter(const Eigen::MatrixXd& raw_inputs, const std::vector<int>& labels,
                         int num_clusters, const CrsConfig& cfg);

// Cross-reference scatter: k-means on the evaluated features (fixed M), then
// reference_scatter of the resulting pseudo-labels over the raw inputs.
double crs(const Eigen::MatrixXd& evaluated_features, const Eigen::MatrixXd& raw_inputs,
           const CrsConfig& cfg);

// crs() averaged over cfg.ref_avg reference initialisations. The partition is
// fixed, so this only knocks reference-init variance out of the score.
double crs_averaged(const Eigen::MatrixXd& evaluated_features, const Eigen::MatrixXd& raw_inputs,
                    const CrsConfig& cfg);

// Seed crs() hands to its k-means stage; callers reuse it to reproduce the
// exact partition the score was computed from.
uint64_t crs_kmeans_seed(const CrsConfig& cfg);

struct RetrievalReport {
  double map = 0;
  double cmc1 = 0, cmc5 = 0, cmc10 = 0;
  int queries = 0;
};

// Standard retrieval protocol: per query, gallery entries sharing both id and
// camera are excluded; AP over the remaining ranking; CMC@k over top-k hits.
RetrievalReport map_cmc(const Eigen::MatrixXd& embedded, const std::vector<int>& ids,
                        const std::vector<int>& cameras, const std::vector<Split>& split);

// Cluster purity: each cluster maps to its majority ground-truth id.
double label_accuracy(const ClusterAssignment& pseudo, const std::vector<int>& gt_ids);

}  // namespace peg
