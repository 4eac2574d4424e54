#include "peg/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace peg {

Eigen::MatrixXd pairwise_l2(const Eigen::MatrixXd& features) {
  const Eigen::Index N = features.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = i + 1; j < N; ++j) {
      double v = (features.row(i) - features.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

namespace {

// nearest centroid, ties to the lowest index
int nearest(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& x) {
  int best = 0;
  double bd = (centroids.row(0) - x).squaredNorm();
  for (Eigen::Index m = 1; m < centroids.rows(); ++m) {
    double d = (centroids.row(m) - x).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<int>(m);
    }
  }
  return best;
}

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& f, int M, Rng& rng) {
  const int N = static_cast<int>(f.rows());
  Eigen::MatrixXd centroids(M, f.cols());
  std::vector<char> chosen(N, 0);
  int first = uniform_int(rng, 0, N - 1);
  centroids.row(0) = f.row(first);
  chosen[first] = 1;
  Eigen::VectorXd d2(N);
  for (int i = 0; i < N; ++i) d2(i) = (f.row(i) - centroids.row(0)).squaredNorm();
  for (int m = 1; m < M; ++m) {
    double total = d2.sum();
    int pick = -1;
    if (total > 0) {
      double r = uniform_real(rng, 0.0, total);
      double acc = 0;
      for (int i = 0; i < N; ++i) {
        acc += d2(i);
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    if (pick < 0 || chosen[pick]) {
      for (int i = 0; i < N; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    centroids.row(m) = f.row(pick);
    chosen[pick] = 1;
    for (int i = 0; i < N; ++i)
      d2(i) = std::min(d2(i), (f.row(i) - centroids.row(m)).squaredNorm());
  }
  return centroids;
}

// moves every empty cluster's centroid onto the sample farthest from its
// assigned centroid, then refreshes labels; at most M rounds
void fix_empty_clusters(const Eigen::MatrixXd& f, Eigen::MatrixXd& centroids,
                        std::vector<int>& labels) {
  const int N = static_cast<int>(f.rows());
  const int M = static_cast<int>(centroids.rows());
  for (int round = 0; round < M; ++round) {
    std::vector<int> count(M, 0);
    for (int i = 0; i < N; ++i) count[labels[i]]++;
    int empty = -1;
    for (int m = 0; m < M; ++m)
      if (count[m] == 0) {
        empty = m;
        break;
      }
    if (empty < 0) return;
    int far = 0;
    double fd = -1;
    for (int i = 0; i < N; ++i) {
      double d = (f.row(i) - centroids.row(labels[i])).squaredNorm();
      if (d > fd) {
        fd = d;
        far = i;
      }
    }
    centroids.row(empty) = f.row(far);
    for (int i = 0; i < N; ++i) labels[i] = nearest(centroids, f.row(i));
  }
  throw std::runtime_error("k-means could not keep all clusters non-empty");
}

}  // namespace

ClusterAssignment kmeans_minibatch(const Eigen::MatrixXd& features, int M, uint64_t seed,
                                   int iters, int batch_size,
                                   std::vector<double>* objective_trace) {
  const int N = static_cast<int>(features.rows());
  if (M < 1) throw ConfigError("k-means M must be >= 1");
  if (M > N) throw ConfigError("k-means M exceeds sample count");
  if (iters < 1) throw ConfigError("k-means iters must be >= 1");
  if (batch_size < 1) throw ConfigError("k-means batch_size must be >= 1");

  Rng rng(seed);
  Eigen::MatrixXd centroids = kmeanspp_init(features, M, rng);

  if (batch_size >= N) {
    // full-batch Lloyd
    std::vector<int> labels(N, 0), prev(N, -1);
    for (int it = 0; it < iters; ++it) {
      double obj = 0;
      for (int i = 0; i < N; ++i) {
        labels[i] = nearest(centroids, features.row(i));
        obj += (features.row(i) - centroids.row(labels[i])).squaredNorm();
      }
      if (objective_trace) objective_trace->push_back(obj);
      fix_empty_clusters(features, centroids, labels);
      if (labels == prev) break;
      prev = labels;
      for (int m = 0; m < M; ++m) {
        Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(features.cols());
        int cnt = 0;
        for (int i = 0; i < N; ++i)
          if (labels[i] == m) {
            sum += features.row(i);
            cnt++;
          }
        centroids.row(m) = sum / cnt;
      }
    }
  } else {
    // streaming updates with per-centroid counts
    std::vector<long> counts(M, 0);
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int cursor = 0;
    for (int it = 0; it < iters; ++it) {
      for (int b = 0; b < batch_size; ++b) {
        if (cursor == N) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        int i = order[cursor++];
        int c = nearest(centroids, features.row(i));
        counts[c]++;
        double eta = 1.0 / static_cast<double>(counts[c]);
        centroids.row(c) += eta * (features.row(i) - centroids.row(c));
      }
    }
  }

  ClusterAssignment a;
  a.labels.resize(N);
  for (int i = 0; i < N; ++i) a.labels[i] = nearest(centroids, features.row(i));
  fix_empty_clusters(features, centroids, a.labels);
  a.num_clusters = M;
  a.centroids = centroids;
  a.has_centroids = true;
  return a;
}

namespace {

// k smallest by (distance, index), self included via d(i,i)=0
std::vector<int> knn_list(const Eigen::MatrixXd& dist, int i, int k) {
  const int N = static_cast<int>(dist.rows());
  std::vector<int> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (dist(i, a) != dist(i, b)) return dist(i, a) < dist(i, b);
    return a < b;
  });
  idx.resize(k);
  return idx;
}

std::vector<int> reciprocal_set(const std::vector<std::vector<int>>& knn,
                                const std::vector<std::vector<char>>& member, int i) {
  std::vector<int> r;
  for (int j : knn[i])
    if (member[j][i]) r.push_back(j);
  std::sort(r.begin(), r.end());
  return r;
}

int intersect_count(const std::vector<int>& a, const std::vector<int>& b) {
  int n = 0;
  size_t x = 0, y = 0;
  while (x < a.size() && y < b.size()) {
    if (a[x] < b[y])
      ++x;
    else if (a[x] > b[y])
      ++y;
    else {
      ++n;
      ++x;
      ++y;
    }
  }
  return n;
}

}  // namespace

Eigen::MatrixXd k_reciprocal_jaccard(const Eigen::MatrixXd& features, int k1, int k2) {
  const int N = static_cast<int>(features.rows());
  if (k1 < 1 || k1 >= N) throw ConfigError("k1 must satisfy 1 <= k1 < N");
  if (k2 < 1 || k2 >= N) throw ConfigError("k2 must satisfy 1 <= k2 < N");
  const Eigen::MatrixXd dist = pairwise_l2(features);
  const int kh = (k1 + 1) / 2;

  std::vector<std::vector<int>> knn1(N), knnh(N);
  std::vector<std::vector<char>> in1(N, std::vector<char>(N, 0)), inh(N, std::vector<char>(N, 0));
  for (int i = 0; i < N; ++i) {
    knn1[i] = knn_list(dist, i, k1);
    for (int j : knn1[i]) in1[i][j] = 1;
    knnh[i] = knn_list(dist, i, kh);
    for (int j : knnh[i]) inh[i][j] = 1;
  }

  std::vector<std::vector<int>> r1(N), rh(N), rstar(N);
  for (int i = 0; i < N; ++i) {
    r1[i] = reciprocal_set(knn1, in1, i);
    rh[i] = reciprocal_set(knnh, inh, i);
  }
  for (int i = 0; i < N; ++i) {
    std::vector<int> acc = r1[i];
    for (int q : r1[i]) {
      if (rh[q].empty()) continue;
      if (3 * intersect_count(rh[q], r1[i]) >= 2 * static_cast<int>(rh[q].size()))
        acc.insert(acc.end(), rh[q].begin(), rh[q].end());
    }
    std::sort(acc.begin(), acc.end());
    acc.erase(std::unique(acc.begin(), acc.end()), acc.end());
    if (static_cast<int>(acc.size()) > k2) {
      std::sort(acc.begin(), acc.end(), [&](int a, int b) {
        if (dist(i, a) != dist(i, b)) return dist(i, a) < dist(i, b);
        return a < b;
      });
      acc.resize(k2);
      std::sort(acc.begin(), acc.end());
    }
    rstar[i] = std::move(acc);
  }

  Eigen::MatrixXd jd = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) {
    for (int j = i + 1; j < N; ++j) {
      int inter = intersect_count(rstar[i], rstar[j]);
      int uni = static_cast<int>(rstar[i].size() + rstar[j].size()) - inter;
      double d = 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
      jd(i, j) = d;
      jd(j, i) = d;
    }
  }
  return jd;
}

ClusterAssignment dbscan(const Eigen::MatrixXd& dist, double eps, int min_samples) {
  const int N = static_cast<int>(dist.rows());
  if (!(eps > 0)) throw ConfigError("dbscan eps must be > 0");
  if (min_samples < 1) throw ConfigError("dbscan min_samples must be >= 1");

  std::vector<std::vector<int>> neigh(N);
  std::vector<char> core(N, 0);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j)
      if (dist(i, j) <= eps) neigh[i].push_back(j);
    core[i] = neigh[i].size() >= static_cast<size_t>(min_samples);
  }

  ClusterAssignment a;
  a.labels.assign(N, -1);
  int next = 0;
  for (int i = 0; i < N; ++i) {
    if (!core[i] || a.labels[i] != -1) continue;
    int cluster = next++;
    std::deque<int> queue{i};
    a.labels[i] = cluster;
    while (!queue.empty()) {
      int p = queue.front();
      queue.pop_front();
      if (!core[p]) continue;  // border points join but do not expand
      for (int q : neigh[p])
        if (a.labels[q] == -1) {
          a.labels[q] = cluster;
          queue.push_back(q);
        }
    }
  }

  // canonicalize by first occurrence
  std::vector<int> remap(next, -1);
  int canon = 0;
  for (int i = 0; i < N; ++i) {
    if (a.labels[i] < 0) continue;
    if (remap[a.labels[i]] < 0) remap[a.labels[i]] = canon++;
    a.labels[i] = remap[a.labels[i]];
  }
  a.num_clusters = canon;
  return a;
}

}  // namespace peg
