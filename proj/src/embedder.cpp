#include "peg/embedder.hpp"

#include <cmath>

namespace peg {

void HyperParams::validate() const {
  if (!(eps > 0 && eps < 1)) throw ConfigError("label smoothing eps must be in (0,1)");
  if (w_id < 0 || w_tri < 0 || w_mid < 0 || w_mtri < 0)
    throw ConfigError("loss weights must be >= 0");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
}

double softplus(double x) {
  // stable both directions: softplus(x) = max(x,0) + log1p(exp(-|x|))
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double mx = scores.row(i).maxCoeff();
    Eigen::ArrayXd e = (scores.row(i).array() - mx).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  return p;
}

namespace {

Eigen::MatrixXd uniform_matrix(Rng& rng, int rows, int cols, double bound) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = uniform_real(rng, -bound, bound);
  return m;
}

Eigen::VectorXd uniform_vector(Rng& rng, int n, double bound) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform_real(rng, -bound, bound);
  return v;
}

}  // namespace

Embedder init_model(const std::vector<int>& arch, const HyperParams& hyper, uint64_t seed,
                    int classes) {
  if (arch.size() < 2) throw ConfigError("arch needs at least input dim and embed dim");
  for (int w : arch)
    if (w < 1) throw ConfigError("arch widths must be >= 1");
  if (classes < 1) throw ConfigError("classes must be >= 1");
  hyper.validate();

  Embedder m;
  m.arch = arch;
  m.hyper = hyper;
  Rng rng(seed);
  for (size_t i = 1; i < arch.size(); ++i) {
    double bound = 1.0 / std::sqrt(static_cast<double>(arch[i - 1]));
    Layer l;
    l.W = uniform_matrix(rng, arch[i], arch[i - 1], bound);
    l.b = uniform_vector(rng, arch[i], bound);
    m.params.layers.push_back(std::move(l));
  }
  double cb = 1.0 / std::sqrt(static_cast<double>(arch.back()));
  m.params.classifier = uniform_matrix(rng, classes, arch.back(), cb);
  m.ema_params = m.params;
  m.opt.m = zeros_like(m.params);
  m.opt.v = zeros_like(m.params);
  m.opt.t = 0;
  return m;
}

ForwardCache forward(const Embedder& m, const Eigen::MatrixXd& batch, bool use_ema,
                     bool with_scores) {
  if (batch.cols() != m.input_dim())
    throw ConfigError("batch dim " + std::to_string(batch.cols()) + " does not match input dim " +
                      std::to_string(m.input_dim()));
  const EmbedderParams& p = use_ema ? m.ema_params : m.params;
  ForwardCache c;
  c.used_ema = use_ema;
  c.input = batch;
  Eigen::MatrixXd h = batch;
  const size_t n_layers = p.layers.size();
  for (size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd pre = (h * p.layers[l].W.transpose()).rowwise() + p.layers[l].b.transpose();
    c.pre.push_back(pre);
    if (l + 1 < n_layers) {
      h = pre.unaryExpr([](double x) { return softplus(x); });
      c.post.push_back(h);
    } else {
      c.features = pre;  // output layer is linear
    }
  }
  if (with_scores) {
    if (p.classifier.rows() < 1) throw ConfigError("classifier head has no classes");
    c.scores = c.features * p.classifier.transpose();
  }
  return c;
}

Eigen::MatrixXd forward_features(const Embedder& m, const Eigen::MatrixXd& batch, bool use_ema) {
  return forward(m, batch, use_ema, false).features;
}

Eigen::MatrixXd forward_confidence(const Embedder& m, const Eigen::MatrixXd& batch, bool use_ema) {
  return softmax_rows(forward(m, batch, use_ema, true).scores);
}

void resize_classifier(Embedder& m, int new_M, uint64_t seed) {
  if (new_M < 1) throw ConfigError("classifier size must be >= 1");
  Rng rng(seed);
  double bound = 1.0 / std::sqrt(static_cast<double>(m.embed_dim()));
  Eigen::MatrixXd fresh = uniform_matrix(rng, new_M, m.embed_dim(), bound);
  m.params.classifier = fresh;
  m.ema_params.classifier = fresh;
  m.opt.m.classifier = Eigen::MatrixXd::Zero(new_M, m.embed_dim());
  m.opt.v.classifier = Eigen::MatrixXd::Zero(new_M, m.embed_dim());
}

EmbedderParams backward(const Embedder& m, const ForwardCache& cache,
                        const Eigen::MatrixXd& d_features, const Eigen::MatrixXd& d_scores) {
  if (cache.used_ema) throw std::runtime_error("backward requires a non-EMA forward cache");
  if (cache.pre.empty()) throw std::runtime_error("backward requires a cached forward pass");
  const EmbedderParams& p = m.params;
  EmbedderParams g = zeros_like(p);

  Eigen::MatrixXd dfeat;
  if (d_scores.size() > 0) {
    if (cache.scores.size() == 0) throw std::runtime_error("no cached scores for score gradient");
    g.classifier = d_scores.transpose() * cache.features;
    dfeat = d_scores * p.classifier;
  } else {
    dfeat = Eigen::MatrixXd::Zero(cache.features.rows(), cache.features.cols());
  }
  if (d_features.size() > 0) dfeat += d_features;

  const int n_layers = static_cast<int>(p.layers.size());
  Eigen::MatrixXd delta = dfeat;  // output layer is linear
  for (int l = n_layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.post[l - 1];
    g.layers[l].W = delta.transpose() * below;
    g.layers[l].b = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd dprev = delta * p.layers[l].W;
      delta = dprev.cwiseProduct(
          cache.pre[l - 1].unaryExpr([](double x) { return sigmoid(x); }));
    }
  }
  return g;
}

namespace {

template <class Mat>
void adam_update(Mat& theta, Mat& m1, Mat& m2, const Mat& g, double lr, double wd, double bc1,
                 double bc2) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (wd > 0) theta *= (1.0 - lr * wd);  // decoupled decay, applied before the step
  m1 = b1 * m1 + (1 - b1) * g;
  m2 = b2 * m2 + (1 - b2) * g.cwiseProduct(g);
  theta.array() -= lr * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + eps);
}

}  // namespace

void adam_step(Embedder& m, const EmbedderParams& grads, double lr, double weight_decay) {
  if (grads.layers.size() != m.params.layers.size())
    throw std::runtime_error("gradient shape mismatch");
  for (size_t l = 0; l < grads.layers.size(); ++l)
    if (!grads.layers[l].W.array().isFinite().all() || !grads.layers[l].b.array().isFinite().all())
      throw std::runtime_error("non-finite gradient; update rejected");
  if (grads.classifier.size() > 0 && !grads.classifier.array().isFinite().all())
    throw std::runtime_error("non-finite gradient; update rejected");

  m.opt.t += 1;
  const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(m.opt.t));
  const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(m.opt.t));
  for (size_t l = 0; l < m.params.layers.size(); ++l) {
    adam_update(m.params.layers[l].W, m.opt.m.layers[l].W, m.opt.v.layers[l].W, grads.layers[l].W,
                lr, weight_decay, bc1, bc2);
    adam_update(m.params.layers[l].b, m.opt.m.layers[l].b, m.opt.v.layers[l].b, grads.layers[l].b,
                lr, weight_decay, bc1, bc2);
  }
  if (grads.classifier.size() > 0)
    adam_update(m.params.classifier, m.opt.m.classifier, m.opt.v.classifier, grads.classifier, lr,
                weight_decay, bc1, bc2);
}

void ema_update(Embedder& m, double alpha) {
  if (alpha < 0 || alpha > 1) throw ConfigError("ema alpha must be in [0,1]");
  for (size_t l = 0; l < m.params.layers.size(); ++l) {
    m.ema_params.layers[l].W = alpha * m.ema_params.layers[l].W + (1 - alpha) * m.params.layers[l].W;
    m.ema_params.layers[l].b = alpha * m.ema_params.layers[l].b + (1 - alpha) * m.params.layers[l].b;
  }
  m.ema_params.classifier = alpha * m.ema_params.classifier + (1 - alpha) * m.params.classifier;
}

EmbedderParams zeros_like(const EmbedderParams& p) {
  EmbedderParams z;
  for (const Layer& l : p.layers) {
    Layer zl;
    zl.W = Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols());
    zl.b = Eigen::VectorXd::Zero(l.b.size());
    z.layers.push_back(std::move(zl));
  }
  z.classifier = Eigen::MatrixXd::Zero(p.classifier.rows(), p.classifier.cols());
  return z;
}

long param_count(const EmbedderParams& p) {
  long n = 0;
  for (const Layer& l : p.layers) n += l.W.size() + l.b.size();
  return n + p.classifier.size();
}

std::vector<double> flatten(const EmbedderParams& p) {
  std::vector<double> out;
  out.reserve(param_count(p));
  for (const Layer& l : p.layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) out.push_back(l.W(r, c));
    for (Eigen::Index i = 0; i < l.b.size(); ++i) out.push_back(l.b(i));
  }
  for (Eigen::Index r = 0; r < p.classifier.rows(); ++r)
    for (Eigen::Index c = 0; c < p.classifier.cols(); ++c) out.push_back(p.classifier(r, c));
  return out;
}

void unflatten(EmbedderParams& p, const std::vector<double>& flat) {
  if (static_cast<long>(flat.size()) != param_count(p))
    throw std::runtime_error("flat parameter size mismatch");
  size_t k = 0;
  for (Layer& l : p.layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = flat[k++];
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = flat[k++];
  }
  for (Eigen::Index r = 0; r < p.classifier.rows(); ++r)
    for (Eigen::Index c = 0; c < p.classifier.cols(); ++c) p.classifier(r, c) = flat[k++];
}

namespace {

void quantize_params(EmbedderParams& p) {
  for (Layer& l : p.layers) {
    quantize_f32(l.W);
    quantize_f32(l.b);
  }
  quantize_f32(p.classifier);
}

}  // namespace

void quantize_model_f32(Embedder& m) {
  quantize_params(m.params);
  quantize_params(m.ema_params);
  quantize_params(m.opt.m);
  quantize_params(m.opt.v);
}

}  // namespace peg
