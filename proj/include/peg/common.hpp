#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace peg {

// Invalid configuration or arguments; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files; the CLI maps this (and other runtime failures) to exit code 3.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer, used only to derive seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stateless substream derivation: every random draw in the system is keyed by
// (master, purpose, a, b), so resumed runs never need carried generator state.
inline uint64_t derive_seed(uint64_t master, uint64_t purpose, uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = mix64(master);
  h = mix64(h ^ purpose);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return h;
}

using Rng = std::mt19937_64;

inline double uniform_real(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline double normal01(Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

// Inclusive bounds.
inline int uniform_int(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

// k distinct values from {0..n-1}, in random order.
inline std::vector<int> sample_without_replacement(Rng& rng, int n, int k) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  return idx;
}

// Rounds every entry to its nearest 32-bit float value (kept in double storage).
inline void quantize_f32(Eigen::MatrixXd& m) {
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = static_cast<double>(static_cast<float>(p[i]));
}

inline void quantize_f32(Eigen::VectorXd& v) {
  double* p = v.data();
  for (Eigen::Index i = 0; i < v.size(); ++i) p[i] = static_cast<double>(static_cast<float>(p[i]));
}

// FNV-1a over bytes; used for config hashes and pseudo-label digests.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace peg
