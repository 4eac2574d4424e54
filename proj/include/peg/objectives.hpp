#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "peg/common.hpp"
#include "peg/embedder.hpp"

namespace peg {

// P pseudo-classes x K instances; outlier-labeled samples never appear.
struct PKBatch {
  std::vector<int> indices;
  std::vector<int> labels;
  int P = 0;
  int K = 0;
};

PKBatch sample_pk_batch(const std::vector<int>& labels, int P, int K, uint64_t seed);

// Target gets 1 - eps + eps/M, every other class eps/M.
Eigen::VectorXd smooth_labels(int y, int M, double eps);

// Hardest positive (same label, max distance) and hardest negative (different
// label, min distance) per anchor; ties break to the lowest index.
struct MinedPairs {
  std::vector<int> pos;
  std::vector<int> neg;
};

MinedPairs mine_hard_pairs(const Eigen::MatrixXd& features, const std::vector<int>& labels);

// P_n = exp(d_neg) / (exp(d_pos) + exp(d_neg)), entries in (0,1).
Eigen::VectorXd triplet_statistic(const Eigen::MatrixXd& features, const MinedPairs& pairs);

struct ValueGrad {
  double value = 0;
  Eigen::MatrixXd grad;
};

// Smoothed cross entropy over softmax(scores); grad w.r.t. pre-softmax scores.
ValueGrad id_loss(const Eigen::MatrixXd& scores, const std::vector<int>& targets, double eps);

// Mean of -log P_n; grad w.r.t. the batch features.
ValueGrad softmax_triplet_loss(const Eigen::MatrixXd& features, const MinedPairs& pairs);

double voting_loss(double id_value, double tri_value, double w_id, double w_tri);

// Cross entropy of the student's softmax against constant teacher rows; grad
// w.r.t. student scores only.
ValueGrad mutual_id_loss(const Eigen::MatrixXd& student_scores,
                         const Eigen::MatrixXd& teacher_probs);

// Binary cross entropy of the student's P_n against a constant teacher P_n;
// grad w.r.t. student features.
ValueGrad mutual_triplet_loss(const Eigen::MatrixXd& features, const MinedPairs& pairs,
                              const Eigen::VectorXd& teacher_pn);

// Everything a teacher contributes for one batch, captured as constants.
struct TeacherSignals {
  Eigen::MatrixXd probs;  // B x M
  Eigen::VectorXd pn;     // B
};

struct OverallLoss {
  double value = 0;
  double id_value = 0, tri_value = 0, mutual_id_value = 0, mutual_tri_value = 0;
  Eigen::MatrixXd d_scores;
  Eigen::MatrixXd d_features;
};

// w_id*L_id + w_tri*L_tri + (1/|E|) * sum_e (w_mid*L_mid^e + w_mtri*L_mtri^e),
// averaging over the actual teacher count.
OverallLoss overall_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& features,
                         const std::vector<int>& targets, const MinedPairs& pairs,
                         const std::vector<TeacherSignals>& teachers, const HyperParams& hp);

// log-floor hits in the losses above since the last reset
long clamp_events();
void reset_clamp_events();

}  // namespace peg
