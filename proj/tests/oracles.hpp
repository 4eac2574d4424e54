#pragma once

// Independent reference implementations used to check the library. Everything
// here is written from the textbook definition with plain loops and std::set
// machinery, deliberately sharing no code with src/.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline Eigen::MatrixXd pairwise(const Eigen::MatrixXd& x) {
  const int n = static_cast<int>(x.rows());
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int c = 0; c < x.cols(); ++c) {
        double diff = x(i, c) - x(j, c);
        s += diff * diff;
      }
      d(i, j) = std::sqrt(s);
    }
  return d;
}

// Relabels so cluster ids appear in first-occurrence order; -1 is preserved.
inline std::vector<int> canonical_partition(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  int next = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) {
      out[i] = -1;
      continue;
    }
    auto it = remap.find(labels[i]);
    if (it == remap.end()) it = remap.emplace(labels[i], next++).first;
    out[i] = it->second;
  }
  return out;
}

struct LloydResult {
  std::vector<int> labels;
  double objective = std::numeric_limits<double>::infinity();
  bool valid = false;
};

// Plain Lloyd iterations from a given set of initial rows. Restarts that hit
// an empty cluster are reported invalid rather than patched.
inline LloydResult lloyd(const Eigen::MatrixXd& x, const std::vector<int>& init_rows, int sweeps) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(init_rows.size());
  Eigen::MatrixXd centroids(m, x.cols());
  for (int c = 0; c < m; ++c) centroids.row(c) = x.row(init_rows[c]);

  LloydResult res;
  res.labels.assign(n, 0);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (x.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < m; ++c) {
        double d = (x.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      res.labels[i] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, x.cols());
    std::vector<int> counts(m, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(res.labels[i]) += x.row(i);
      counts[res.labels[i]]++;
    }
    for (int c = 0; c < m; ++c) {
      if (counts[c] == 0) return res;  // invalid stays false
      centroids.row(c) = sums.row(c) / counts[c];
    }
  }
  res.objective = 0;
  for (int i = 0; i < n; ++i)
    res.objective += (x.row(i) - centroids.row(res.labels[i])).squaredNorm();
  res.valid = true;
  return res;
}

// Best partition over `restarts` random initializations plus every pair of
// rows when m == 2 and n is small (near-exhaustive for the blob instances).
inline LloydResult lloyd_best(const Eigen::MatrixXd& x, int m, int restarts, uint64_t seed) {
  const int n = static_cast<int>(x.rows());
  std::mt19937_64 rng(seed);
  LloydResult best;
  auto consider = [&](const std::vector<int>& init) {
    LloydResult r = lloyd(x, init, 100);
    if (r.valid && r.objective < best.objective - 1e-12) best = r;
    if (!best.valid && r.valid) best = r;
  };
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int t = 0; t < restarts; ++t) {
    std::shuffle(idx.begin(), idx.end(), rng);
    consider(std::vector<int>(idx.begin(), idx.begin() + m));
  }
  if (m == 2 && n <= 60)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) consider({i, j});
  return best;
}

// Classic seeds-list DBSCAN over a distance matrix: visit points in index
// order, expand each new core point's cluster to completion before moving on.
inline std::vector<int> dbscan(const Eigen::MatrixXd& dist, double eps, int min_samples) {
  const int n = static_cast<int>(dist.rows());
  auto neighbors = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j)
      if (dist(i, j) <= eps) out.push_back(j);  // self included
    return out;
  };
  const int UNVISITED = -2;
  std::vector<int> labels(n, UNVISITED);
  int cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] != UNVISITED) continue;
    std::vector<int> nb = neighbors(i);
    if (static_cast<int>(nb.size()) < min_samples) {
      labels[i] = -1;  // noise, may later be claimed as a border point
      continue;
    }
    labels[i] = cluster;
    std::vector<int> seeds = nb;
    for (size_t s = 0; s < seeds.size(); ++s) {
      int q = seeds[s];
      if (labels[q] == -1) labels[q] = cluster;  // border point
      if (labels[q] != UNVISITED) continue;
      labels[q] = cluster;
      std::vector<int> qnb = neighbors(q);
      if (static_cast<int>(qnb.size()) >= min_samples)
        seeds.insert(seeds.end(), qnb.begin(), qnb.end());
    }
    cluster++;
  }
  return labels;
}

// k-reciprocal Jaccard distances by brute-force set enumeration.
inline Eigen::MatrixXd k_reciprocal_jaccard(const Eigen::MatrixXd& x, int k1, int k2) {
  const int n = static_cast<int>(x.rows());
  Eigen::MatrixXd dist = pairwise(x);

  auto knn = [&](int i, int k) {
    std::vector<std::pair<double, int>> order;
    for (int j = 0; j < n; ++j) order.emplace_back(dist(i, j), j);
    std::sort(order.begin(), order.end());
    std::vector<int> out;
    for (int t = 0; t < k && t < n; ++t) out.push_back(order[t].second);
    return out;
  };
  auto reciprocal = [&](int i, int k) {
    std::vector<int> nb = knn(i, k);
    std::set<int> out;
    for (int j : nb) {
      std::vector<int> back = knn(j, k);
      if (std::find(back.begin(), back.end(), i) != back.end()) out.insert(j);
    }
    return out;
  };

  std::vector<std::set<int>> rstar(n);
  const int kh = (k1 + 1) / 2;
  for (int i = 0; i < n; ++i) {
    std::set<int> r = reciprocal(i, k1);
    std::set<int> expanded = r;
    for (int q : r) {
      std::set<int> rq = reciprocal(q, kh);
      std::vector<int> common;
      std::set_intersection(rq.begin(), rq.end(), r.begin(), r.end(), std::back_inserter(common));
      if (3 * static_cast<int>(common.size()) >= 2 * static_cast<int>(rq.size()))
        expanded.insert(rq.begin(), rq.end());
    }
    if (static_cast<int>(expanded.size()) > k2) {
      std::vector<std::pair<double, int>> order;
      for (int j : expanded) order.emplace_back(dist(i, j), j);
      std::sort(order.begin(), order.end());
      expanded.clear();
      for (int t = 0; t < k2; ++t) expanded.insert(order[t].second);
    }
    rstar[i] = expanded;
  }

  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::vector<int> inter, uni;
      std::set_intersection(rstar[i].begin(), rstar[i].end(), rstar[j].begin(), rstar[j].end(),
                            std::back_inserter(inter));
      std::set_union(rstar[i].begin(), rstar[i].end(), rstar[j].begin(), rstar[j].end(),
                     std::back_inserter(uni));
      out(i, j) = 1.0 - static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    }
  return out;
}

// Largest relative central-difference error of an analytic gradient, checked
// entry by entry over `flat` with step h. The denominator floor keeps noise on
// near-zero entries from dominating.
inline double max_rel_fd_error(std::vector<double>& flat,
                               const std::function<double()>& loss_at_flat,
                               const std::vector<double>& analytic, double h = 1e-4,
                               double floor = 1e-3) {
  double worst = 0;
  for (size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + h;
    const double up = loss_at_flat();
    flat[i] = keep - h;
    const double down = loss_at_flat();
    flat[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), floor});
    worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
  }
  return worst;
}

inline std::vector<double> matrix_flat(const Eigen::MatrixXd& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

inline void matrix_unflat(Eigen::MatrixXd& m, const std::vector<double>& flat) {
  std::copy(flat.begin(), flat.end(), m.data());
}

}  // namespace oracle
