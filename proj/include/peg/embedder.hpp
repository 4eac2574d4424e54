#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "peg/common.hpp"

namespace peg {

// Per-model training hyper-parameters; these are the mutation targets.
struct HyperParams {
  double eps = 0.1;    // label smoothing
  double w_id = 1.0;   // smoothed cross entropy weight
  double w_tri = 1.0;  // softmax triplet weight
  double w_mid = 1.0;  // mutual id weight
  double w_mtri = 1.0; // mutual triplet weight
  double lr = 3.5e-4;

  void validate() const;
};

struct Layer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
};

struct EmbedderParams {
  std::vector<Layer> layers;   // hidden layers + linear embedding output
  Eigen::MatrixXd classifier;  // classes x embed_dim, bias-free
};

struct AdamState {
  EmbedderParams m;
  EmbedderParams v;
  long t = 0;
};

// One population member: learnable parameters, a temporally averaged copy that
// serves as the distillation teacher, and optimizer state.
struct Embedder {
  std::vector<int> arch;  // input dim, hidden widths..., embed_dim
  EmbedderParams params;
  EmbedderParams ema_params;
  HyperParams hyper;
  AdamState opt;
  int model_id = 0;
  int lineage = -1;  // parent model_id, -1 for founders
  uint64_t rng_stream = 0;

  int input_dim() const { return arch.front(); }
  int embed_dim() const { return arch.back(); }
  int head_classes() const { return static_cast<int>(params.classifier.rows()); }
};

struct ForwardCache {
  Eigen::MatrixXd input;             // B x D
  std::vector<Eigen::MatrixXd> pre;  // pre-activation per layer
  std::vector<Eigen::MatrixXd> post; // post-activation per hidden layer
  Eigen::MatrixXd features;          // B x embed_dim
  Eigen::MatrixXd scores;            // B x classes, empty unless requested
  bool used_ema = false;
};

double softplus(double x);
double sigmoid(double x);
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);

// Uniform fan-in init for every layer; the temporal average starts equal to the
// parameters. The classifier head starts with `classes` rows and is resized to
// the live cluster count before any classification use.
Embedder init_model(const std::vector<int>& arch, const HyperParams& hyper, uint64_t seed,
                    int classes = 2);

ForwardCache forward(const Embedder& m, const Eigen::MatrixXd& batch, bool use_ema,
                     bool with_scores);
Eigen::MatrixXd forward_features(const Embedder& m, const Eigen::MatrixXd& batch, bool use_ema);
Eigen::MatrixXd forward_confidence(const Embedder& m, const Eigen::MatrixXd& batch, bool use_ema);

// Fresh head of new_M rows for both params and ema_params (identical values);
// head Adam moments zeroed; body untouched.
void resize_classifier(Embedder& m, int new_M, uint64_t seed);

// Reverse-mode gradients for a scalar loss with the given upstream gradients.
// Either upstream may be empty (treated as zero). The cache must come from a
// non-EMA forward pass on this model.
EmbedderParams backward(const Embedder& m, const ForwardCache& cache,
                        const Eigen::MatrixXd& d_features, const Eigen::MatrixXd& d_scores);

// Adam with bias correction and decoupled weight decay; rejects non-finite grads.
void adam_step(Embedder& m, const EmbedderParams& grads, double lr, double weight_decay);

// ema = alpha * ema + (1 - alpha) * params, elementwise, classifier included.
void ema_update(Embedder& m, double alpha);

EmbedderParams zeros_like(const EmbedderParams& p);
long param_count(const EmbedderParams& p);
std::vector<double> flatten(const EmbedderParams& p);
void unflatten(EmbedderParams& p, const std::vector<double>& flat);

// Rounds params, ema and Adam moments to float32 values (checkpoint precision).
void quantize_model_f32(Embedder& m);

}  // namespace peg
