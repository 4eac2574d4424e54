#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "peg/common.hpp"

namespace peg {

enum class Split : uint8_t { Train = 0, Query = 1, Gallery = 2 };

char split_tag(Split s);
Split split_from_tag(char c);

// Identity-clustered sample vectors with ground-truth ids that training never sees.
// Training ops use every row; the query/gallery tags drive retrieval evaluation only.
struct FeatureDataset {
  Eigen::MatrixXd features;  // N x D
  std::vector<int> ids;
  std::vector<int> cameras;
  std::vector<Split> split;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;  // throws ConfigError on a broken invariant
};

struct SynthSpec {
  int num_identities = 20;
  int samples_per_identity = 50;
  int dim = 16;
  double intra_std = 0.25;
  int camera_count = 2;
  double camera_shift = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

// Gaussian identity mixture with fixed per-camera additive offsets. Cameras are
// assigned round-robin by global sample index. Feature values are exactly
// float32-representable so file round trips are bit-identical.
FeatureDataset generate_synthetic(const SynthSpec& spec);

// Replaces exactly round(fraction*N) entries with a uniformly random DIFFERENT
// label from {0..num_ids-1}; remaining entries are untouched.
std::vector<int> corrupt_labels(const std::vector<int>& ids, double fraction, int num_ids,
                                uint64_t seed);

// Per identity: one sample per camera is reserved for the gallery, then
// round(query_fraction * n_i) queries are drawn from the remainder; every other
// sample becomes gallery. Guarantees each query a cross-camera gallery match.
FeatureDataset split_query_gallery(const FeatureDataset& ds, double query_fraction, uint64_t seed);

void save_dataset(const FeatureDataset& ds, const std::string& path, bool binary = false);
FeatureDataset load_dataset(const std::string& path);

}  // namespace peg
