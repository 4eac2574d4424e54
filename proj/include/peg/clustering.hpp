#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "peg/common.hpp"

namespace peg {

struct ClusterAssignment {
  std::vector<int> labels;  // -1 marks an outlier
  int num_clusters = 0;     // count of labels >= 0, each occurring at least once
  Eigen::MatrixXd centroids;  // num_clusters x dim, k-means only
  bool has_centroids = false;
};

// Exact Euclidean distances; symmetric, zero diagonal.
Eigen::MatrixXd pairwise_l2(const Eigen::MatrixXd& features);

// Mini-batch k-means with k-means++ seeding. batch_size >= N runs full-batch
// Lloyd iterations instead (the mode the monotonicity invariant is asserted
// in); iters counts mini-batches (or Lloyd sweeps). Empty clusters are
// re-seeded to the sample farthest from its assigned centroid; the returned
// labels are a final full nearest-centroid pass. If objective_trace is given,
// full-batch mode records the intra-cluster scatter after every assignment.
ClusterAssignment kmeans_minibatch(const Eigen::MatrixXd& features, int M, uint64_t seed,
                                   int iters, int batch_size,
                                   std::vector<double>* objective_trace = nullptr);

// Jaccard distance 1 - |R*(i) n R*(j)| / |R*(i) u R*(j)| over k-reciprocal
// neighbor sets: R(i,k1) keeps the mutual members of the k1-nearest lists
// (self included), expanded by half-size reciprocal sets that overlap R(i,k1)
// in at least two thirds of their members, then capped to the k2 closest.
Eigen::MatrixXd k_reciprocal_jaccard(const Eigen::MatrixXd& features, int k1, int k2);

// Density clustering over a precomputed distance matrix. Core points have at
// least min_samples neighbors within eps (self counted); noise gets label -1;
// labels are canonicalized by first occurrence.
ClusterAssignment dbscan(const Eigen::MatrixXd& dist, double eps, int min_samples);

}  // namespace peg
