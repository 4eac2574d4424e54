#include "peg/objectives.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <map>

namespace peg {

namespace {

std::atomic<long> g_clamp_events{0};

constexpr double kLogFloor = 1e-12;

double safe_log(double p) {
  if (p < kLogFloor) {
    g_clamp_events.fetch_add(1, std::memory_order_relaxed);
    p = kLogFloor;
  }
  return std::log(p);
}

}  // namespace

long clamp_events() { return g_clamp_events.load(std::memory_order_relaxed); }
void reset_clamp_events() { g_clamp_events.store(0, std::memory_order_relaxed); }

PKBatch sample_pk_batch(const std::vector<int>& labels, int P, int K, uint64_t seed) {
  if (P < 1 || K < 1) throw ConfigError("P and K must be >= 1");
  std::map<int, std::vector<int>> classes;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) classes[labels[i]].push_back(static_cast<int>(i));
  if (static_cast<int>(classes.size()) < P)
    throw std::runtime_error("only " + std::to_string(classes.size()) +
                             " non-outlier classes, need P=" + std::to_string(P));

  Rng rng(seed);
  std::vector<int> class_ids;
  class_ids.reserve(classes.size());
  for (const auto& [c, members] : classes) class_ids.push_back(c);
  std::shuffle(class_ids.begin(), class_ids.end(), rng);
  class_ids.resize(P);

  PKBatch b;
  b.P = P;
  b.K = K;
  for (int c : class_ids) {
    const std::vector<int>& members = classes[c];
    if (static_cast<int>(members.size()) >= K) {
      std::vector<int> pick = members;
      std::shuffle(pick.begin(), pick.end(), rng);
      for (int k = 0; k < K; ++k) {
        b.indices.push_back(pick[k]);
        b.labels.push_back(c);
      }
    } else {
      for (int k = 0; k < K; ++k) {
        b.indices.push_back(members[uniform_int(rng, 0, static_cast<int>(members.size()) - 1)]);
        b.labels.push_back(c);
      }
    }
  }
  return b;
}

Eigen::VectorXd smooth_labels(int y, int M, double eps) {
  if (M < 1) throw ConfigError("M must be >= 1");
  if (!(eps > 0 && eps < 1)) throw ConfigError("eps must be in (0,1)");
  if (y < 0 || y >= M) throw ConfigError("target out of range");
  Eigen::VectorXd q = Eigen::VectorXd::Constant(M, eps / M);
  q(y) = 1.0 - eps + eps / M;
  return q;
}

MinedPairs mine_hard_pairs(const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  const int B = static_cast<int>(features.rows());
  if (static_cast<int>(labels.size()) != B) throw ConfigError("labels length mismatch");
  MinedPairs p;
  p.pos.resize(B);
  p.neg.resize(B);
  for (int a = 0; a < B; ++a) {
    int best_pos = -1, best_neg = -1;
    double pd = -1, nd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < B; ++j) {
      if (j == a) continue;
      double d = (features.row(a) - features.row(j)).norm();
      if (labels[j] == labels[a]) {
        if (d > pd) {
          pd = d;
          best_pos = j;
        }
      } else {
        if (d < nd) {
          nd = d;
          best_neg = j;
        }
      }
    }
    if (best_pos < 0) throw std::runtime_error("anchor " + std::to_string(a) + " has no positive");
    if (best_neg < 0) throw std::runtime_error("anchor " + std::to_string(a) + " has no negative");
    p.pos[a] = best_pos;
    p.neg[a] = best_neg;
  }
  return p;
}

Eigen::VectorXd triplet_statistic(const Eigen::MatrixXd& features, const MinedPairs& pairs) {
  const int B = static_cast<int>(features.rows());
  Eigen::VectorXd pn(B);
  for (int a = 0; a < B; ++a) {
    double dpos = (features.row(a) - features.row(pairs.pos[a])).norm();
    double dneg = (features.row(a) - features.row(pairs.neg[a])).norm();
    pn(a) = sigmoid(dneg - dpos);
  }
  return pn;
}

ValueGrad id_loss(const Eigen::MatrixXd& scores, const std::vector<int>& targets, double eps) {
  const int B = static_cast<int>(scores.rows());
  const int M = static_cast<int>(scores.cols());
  if (static_cast<int>(targets.size()) != B) throw ConfigError("targets length mismatch");
  Eigen::MatrixXd p = softmax_rows(scores);
  ValueGrad out;
  out.grad = Eigen::MatrixXd::Zero(B, M);
  for (int i = 0; i < B; ++i) {
    Eigen::VectorXd q = smooth_labels(targets[i], M, eps);
    for (int j = 0; j < M; ++j) out.value -= q(j) * safe_log(p(i, j));
    out.grad.row(i) = (p.row(i) - q.transpose()) / B;
  }
  out.value /= B;
  return out;
}

namespace {

// spreads per-anchor gradients of the two mined distances onto the features
Eigen::MatrixXd distance_grads(const Eigen::MatrixXd& features, const MinedPairs& pairs,
                               const Eigen::VectorXd& dl_dpos, const Eigen::VectorXd& dl_dneg) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(features.rows(), features.cols());
  for (int a = 0; a < static_cast<int>(features.rows()); ++a) {
    const int pi = pairs.pos[a], ni = pairs.neg[a];
    Eigen::RowVectorXd dp = features.row(a) - features.row(pi);
    Eigen::RowVectorXd dn = features.row(a) - features.row(ni);
    double npos = dp.norm(), nneg = dn.norm();
    if (npos > 1e-12) {
      Eigen::RowVectorXd u = dp / npos;
      g.row(a) += dl_dpos(a) * u;
      g.row(pi) -= dl_dpos(a) * u;
    }
    if (nneg > 1e-12) {
      Eigen::RowVectorXd u = dn / nneg;
      g.row(a) += dl_dneg(a) * u;
      g.row(ni) -= dl_dneg(a) * u;
    }
  }
  return g;
}

}  // namespace

ValueGrad softmax_triplet_loss(const Eigen::MatrixXd& features, const MinedPairs& pairs) {
  const int B = static_cast<int>(features.rows());
  Eigen::VectorXd dl_dpos(B), dl_dneg(B);
  ValueGrad out;
  for (int a = 0; a < B; ++a) {
    double dpos = (features.row(a) - features.row(pairs.pos[a])).norm();
    double dneg = (features.row(a) - features.row(pairs.neg[a])).norm();
    out.value += softplus(dpos - dneg);  // == -log P_n
    double coeff = sigmoid(dpos - dneg) / B;
    dl_dpos(a) = coeff;
    dl_dneg(a) = -coeff;
  }
  out.value /= B;
  out.grad = distance_grads(features, pairs, dl_dpos, dl_dneg);
  return out;
}

double voting_loss(double id_value, double tri_value, double w_id, double w_tri) {
  if (w_id < 0 || w_tri < 0) throw ConfigError("voting weights must be >= 0");
  return w_id * id_value + w_tri * tri_value;
}

ValueGrad mutual_id_loss(const Eigen::MatrixXd& student_scores,
                         const Eigen::MatrixXd& teacher_probs) {
  if (student_scores.cols() != teacher_probs.cols() ||
      student_scores.rows() != teacher_probs.rows())
    throw std::runtime_error("student/teacher width mismatch");
  const int B = static_cast<int>(student_scores.rows());
  Eigen::MatrixXd s = softmax_rows(student_scores);
  ValueGrad out;
  out.grad = Eigen::MatrixXd::Zero(B, student_scores.cols());
  for (int i = 0; i < B; ++i) {
    double tsum = teacher_probs.row(i).sum();
    for (int j = 0; j < student_scores.cols(); ++j)
      out.value -= teacher_probs(i, j) * safe_log(s(i, j));
    out.grad.row(i) = (tsum * s.row(i) - teacher_probs.row(i)) / B;
  }
  out.value /= B;
  return out;
}

ValueGrad mutual_triplet_loss(const Eigen::MatrixXd& features, const MinedPairs& pairs,
                              const Eigen::VectorXd& teacher_pn) {
  const int B = static_cast<int>(features.rows());
  if (teacher_pn.size() != B) throw std::runtime_error("teacher P_n length mismatch");
  Eigen::VectorXd dl_dpos(B), dl_dneg(B);
  ValueGrad out;
  for (int a = 0; a < B; ++a) {
    double dpos = (features.row(a) - features.row(pairs.pos[a])).norm();
    double dneg = (features.row(a) - features.row(pairs.neg[a])).norm();
    double s = sigmoid(dneg - dpos);
    double t = teacher_pn(a);
    out.value -= t * safe_log(s) + (1 - t) * safe_log(1 - s);
    double dz = (s - t) / B;  // z = dneg - dpos
    dl_dneg(a) = dz;
    dl_dpos(a) = -dz;
  }
  out.value /= B;
  out.grad = distance_grads(features, pairs, dl_dpos, dl_dneg);
  return out;
}

OverallLoss overall_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& features,
                         const std::vector<int>& targets, const MinedPairs& pairs,
                         const std::vector<TeacherSignals>& teachers, const HyperParams& hp) {
  if (teachers.empty() && (hp.w_mid > 0 || hp.w_mtri > 0))
    throw ConfigError("empty teacher set with nonzero mutual weights");

  OverallLoss out;
  ValueGrad idl = id_loss(scores, targets, hp.eps);
  ValueGrad tri = softmax_triplet_loss(features, pairs);
  out.id_value = idl.value;
  out.tri_value = tri.value;
  out.d_scores = hp.w_id * idl.grad;
  out.d_features = hp.w_tri * tri.grad;
  out.value = voting_loss(idl.value, tri.value, hp.w_id, hp.w_tri);

  if (!teachers.empty()) {
    const double inv = 1.0 / static_cast<double>(teachers.size());
    for (const TeacherSignals& t : teachers) {
      ValueGrad mid = mutual_id_loss(scores, t.probs);
      ValueGrad mtri = mutual_triplet_loss(features, pairs, t.pn);
      out.mutual_id_value += mid.value;
      out.mutual_tri_value += mtri.value;
      out.d_scores += inv * hp.w_mid * mid.grad;
      out.d_features += inv * hp.w_mtri * mtri.grad;
    }
    out.value += inv * (hp.w_mid * out.mutual_id_value + hp.w_mtri * out.mutual_tri_value);
  }
  return out;
}

}  // namespace peg
