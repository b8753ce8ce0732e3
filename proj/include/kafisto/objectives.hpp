#pragma once

// Desk-scale stochastic objectives. Every objective is a finite sum of
// per-sample losses; an evaluation on a minibatch reports the mean loss,
// the per-sample losses (needed by the measurement-noise estimator) and
// the exact gradient of the mean.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kafisto/core.hpp"
#include "kafisto/rng.hpp"

namespace kafisto {

enum class ObjectiveKind { NoisyQuadratic, StochasticRosenbrock, LogisticRegressionSynthetic, TinyMLP };

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::NoisyQuadratic: return "noisy_quadratic";
    case ObjectiveKind::StochasticRosenbrock: return "stochastic_rosenbrock";
    case ObjectiveKind::LogisticRegressionSynthetic: return "logistic_regression";
    case ObjectiveKind::TinyMLP: return "tiny_mlp";
  }
  return "unknown";
}

inline ObjectiveKind objective_kind_from_string(const std::string& s) {
  for (auto k : {ObjectiveKind::NoisyQuadratic, ObjectiveKind::StochasticRosenbrock,
                 ObjectiveKind::LogisticRegressionSynthetic, ObjectiveKind::TinyMLP}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown objective kind '" + s + "'");
}

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::NoisyQuadratic;
  std::size_t dimension = 10;  // ignored by Rosenbrock (2) and TinyMLP (derived from hidden)
  std::size_t samples = 512;
  std::uint64_t seed = 0;
  double noise_scale = 0.1;       // quadratic center spread, Rosenbrock additive noise
  double condition_number = 10.0; // quadratic
  double init_scale = 1.0;        // spread of the initial point
  double separation = 2.0;        // logistic / MLP cluster distance
  std::size_t hidden = 8;         // MLP width
  std::size_t blobs_per_class = 2;

  void validate() const {
    if (samples < 1) throw InvalidArgument("objective needs at least one sample");
    if (kind != ObjectiveKind::TinyMLP && kind != ObjectiveKind::StochasticRosenbrock &&
        dimension < 1) {
      throw InvalidArgument("objective dimension must be >= 1");
    }
    if (!(condition_number >= 1.0)) throw InvalidArgument("condition_number must be >= 1");
    if (!(noise_scale >= 0.0)) throw InvalidArgument("noise_scale must be nonnegative");
    if (!(init_scale >= 0.0)) throw InvalidArgument("init_scale must be nonnegative");
    if (!(separation >= 0.0)) throw InvalidArgument("separation must be nonnegative");
    if (kind == ObjectiveKind::TinyMLP && hidden == 0) throw InvalidArgument("MLP width must be > 0");
    if (kind == ObjectiveKind::TinyMLP && blobs_per_class == 0) {
      throw InvalidArgument("blobs_per_class must be > 0");
    }
  }
};

using IndexSpan = std::span<const std::size_t>;

class Objective {
 public:
  virtual ~Objective() = default;

  virtual ObjectiveKind kind() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::size_t samples() const = 0;

  /// Loss of sample i and, when `grad` is non-null, its gradient accumulated
  /// into *grad with weight `w`.
  virtual double sample_loss(const Vector& x, std::size_t i, Vector* grad, double w) const = 0;

  virtual Vector initial_point(Rng& rng) const = 0;
  virtual std::optional<Vector> optimum() const { return std::nullopt; }
  /// Parameter block sizes (one entry for unstructured objectives).
  virtual std::vector<std::size_t> layer_sizes() const { return {dimension()}; }
  /// Training-set classification accuracy, for classifiers.
  virtual std::optional<double> accuracy(const Vector&) const { return std::nullopt; }

  ObjectiveEvaluation evaluate(const Vector& x, IndexSpan batch) const {
    if (static_cast<std::size_t>(x.size()) != dimension()) {
      throw InvalidArgument("parameter vector has length " + std::to_string(x.size()) +
                            ", objective expects " + std::to_string(dimension()));
    }
    if (batch.empty()) throw InvalidArgument("empty minibatch");
    ObjectiveEvaluation ev;
    ev.per_sample_losses.resize(static_cast<Eigen::Index>(batch.size()));
    ev.gradient = Vector::Zero(x.size());
    const double w = 1.0 / static_cast<double>(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
      if (batch[j] >= samples()) {
        throw InvalidArgument("sample index " + std::to_string(batch[j]) + " out of range [0, " +
                              std::to_string(samples()) + ")");
      }
      ev.per_sample_losses[static_cast<Eigen::Index>(j)] = sample_loss(x, batch[j], &ev.gradient, w);
    }
    ev.loss = ev.per_sample_losses.mean();
    return ev;
  }

  ObjectiveEvaluation evaluate(const Vector& x, const std::vector<std::size_t>& batch) const {
    return evaluate(x, IndexSpan(batch.data(), batch.size()));
  }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> idx(samples());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }

  /// Empirical risk over the whole dataset.
  double full_loss(const Vector& x) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < samples(); ++i) sum += sample_loss(x, i, nullptr, 0.0);
    return sum / static_cast<double>(samples());
  }

  double batch_loss(const Vector& x, IndexSpan batch) const {
    double sum = 0.0;
    for (std::size_t i : batch) sum += sample_loss(x, i, nullptr, 0.0);
    return sum / static_cast<double>(batch.size());
  }
};

using ObjectivePtr = std::shared_ptr<const Objective>;

// 0.5 (x - c_i)^T A (x - c_i) with diagonal A.
class NoisyQuadratic final : public Objective {
 public:
  NoisyQuadratic(Vector diag, Matrix centers, Vector optimum)
      : diag_(std::move(diag)), centers_(std::move(centers)), optimum_(std::move(optimum)) {
    if (diag_.size() == 0 || centers_.rows() != diag_.size() || centers_.cols() == 0) {
      throw InvalidArgument("quadratic: centers must be n x m with n = len(diag), m >= 1");
    }
    if ((diag_.array() <= 0.0).any()) throw InvalidArgument("quadratic: curvature must be positive");
  }

  static NoisyQuadratic generate(const ObjectiveSpec& spec) {
    Rng rng(derive_seed(spec.seed, "objective/quadratic"));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(spec.dimension);
    const auto m = static_cast<Eigen::Index>(spec.samples);
    Vector diag(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double t = n > 1 ? static_cast<double>(j) / static_cast<double>(n - 1) : 0.0;
      diag[j] = std::pow(spec.condition_number, t);
    }
    Vector opt(n);
    for (Eigen::Index j = 0; j < n; ++j) opt[j] = normal(rng);
    Matrix pert(n, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) pert(j, i) = spec.noise_scale * normal(rng);
    }
    // Zero-mean perturbations keep x* the exact empirical minimizer.
    const Vector mean = pert.rowwise().mean();
    pert.colwise() -= mean;
    Matrix centers = pert.colwise() + opt;
    NoisyQuadratic q(std::move(diag), std::move(centers), std::move(opt));
    q.init_scale_ = spec.init_scale;
    return q;
  }

  ObjectiveKind kind() const override { return ObjectiveKind::NoisyQuadratic; }
  std::size_t dimension() const override { return static_cast<std::size_t>(diag_.size()); }
  std::size_t samples() const override { return static_cast<std::size_t>(centers_.cols()); }

  double sample_loss(const Vector& x, std::size_t i, Vector* grad, double w) const override {
    const Vector d = x - centers_.col(static_cast<Eigen::Index>(i));
    const Vector ad = diag_.cwiseProduct(d);
    if (grad != nullptr) *grad += w * ad;
    return 0.5 * d.dot(ad);
  }

  Vector initial_point(Rng& rng) const override {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x0 = optimum_;
    for (Eigen::Index j = 0; j < x0.size(); ++j) x0[j] += init_scale_ * normal(rng);
    return x0;
  }

  std::optional<Vector> optimum() const override {
    return Vector(centers_.rowwise().mean());
  }

  const Vector& curvature() const { return diag_; }
  const Matrix& centers() const { return centers_; }

 private:
  Vector diag_;
  Matrix centers_;
  Vector optimum_;
  double init_scale_ = 1.0;
};

// (1 - x)^2 + 100 (y - x^2)^2 + scale * noise_i
class StochasticRosenbrock final : public Objective {
 public:
  explicit StochasticRosenbrock(Vector offsets) : offsets_(std::move(offsets)) {
    if (offsets_.size() == 0) throw InvalidArgument("rosenbrock needs at least one sample");
  }

  static StochasticRosenbrock generate(const ObjectiveSpec& spec) {
    Rng rng(derive_seed(spec.seed, "objective/rosenbrock"));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector off(static_cast<Eigen::Index>(spec.samples));
    for (Eigen::Index i = 0; i < off.size(); ++i) off[i] = spec.noise_scale * normal(rng);
    StochasticRosenbrock r(std::move(off));
    r.init_scale_ = spec.init_scale;
    return r;
  }

  ObjectiveKind kind() const override { return ObjectiveKind::StochasticRosenbrock; }
  std::size_t dimension() const override { return 2; }
  std::size_t samples() const override { return static_cast<std::size_t>(offsets_.size()); }

  double sample_loss(const Vector& v, std::size_t i, Vector* grad, double w) const override {
    const double x = v[0];
    const double y = v[1];
    const double a = 1.0 - x;
    const double b = y - x * x;
    if (grad != nullptr) {
      (*grad)[0] += w * (-2.0 * a - 400.0 * x * b);
      (*grad)[1] += w * (200.0 * b);
    }
    return a * a + 100.0 * b * b + offsets_[static_cast<Eigen::Index>(i)];
  }

  Vector initial_point(Rng& rng) const override {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x0(2);
    x0 << -1.2 + 0.1 * init_scale_ * normal(rng), 1.0 + 0.1 * init_scale_ * normal(rng);
    return x0;
  }

  std::optional<Vector> optimum() const override { return Vector::Ones(2); }

 private:
  Vector offsets_;
  double init_scale_ = 1.0;
};

namespace detail {

// log(1 + exp(-t)) without overflow.
inline double softplus_neg(double t) {
  return t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace detail

// log(1 + exp(-y_i w^T z_i)), labels in {-1, +1}, no bias term (the two
// clusters sit symmetrically about the origin).
class LogisticRegression final : public Objective {
 public:
  LogisticRegression(Matrix features, Vector labels)
      : features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.cols() != labels_.size() || features_.cols() == 0 || features_.rows() == 0) {
      throw InvalidArgument("logistic: features must be d x m with m labels");
    }
  }

  static LogisticRegression generate(const ObjectiveSpec& spec) {
    Rng rng(derive_seed(spec.seed, "objective/logistic"));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = static_cast<Eigen::Index>(spec.dimension);
    const auto m = static_cast<Eigen::Index>(spec.samples);
    Vector dir(d);
    for (Eigen::Index j = 0; j < d; ++j) dir[j] = normal(rng);
    dir /= dir.norm();
    const Vector mu = 0.5 * spec.separation * dir;
    Matrix z(d, m);
    Vector y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      y[i] = (i % 2 == 0) ? 1.0 : -1.0;
      for (Eigen::Index j = 0; j < d; ++j) z(j, i) = y[i] * mu[j] + normal(rng);
    }
    LogisticRegression lr(std::move(z), std::move(y));
    lr.init_scale_ = spec.init_scale;
    return lr;
  }

  ObjectiveKind kind() const override { return ObjectiveKind::LogisticRegressionSynthetic; }
  std::size_t dimension() const override { return static_cast<std::size_t>(features_.rows()); }
  std::size_t samples() const override { return static_cast<std::size_t>(features_.cols()); }

  double sample_loss(const Vector& w_vec, std::size_t i, Vector* grad, double w) const override {
    const auto col = static_cast<Eigen::Index>(i);
    const double y = labels_[col];
    const double t = y * w_vec.dot(features_.col(col));
    if (grad != nullptr) *grad -= (w * y * detail::sigmoid(-t)) * features_.col(col);
    return detail::softplus_neg(t);
  }

  Vector initial_point(Rng& rng) const override {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x0(features_.rows());
    for (Eigen::Index j = 0; j < x0.size(); ++j) x0[j] = 0.1 * init_scale_ * normal(rng);
    return x0;
  }

  std::optional<double> accuracy(const Vector& w_vec) const override {
    const Vector margins = (w_vec.transpose() * features_).transpose().cwiseProduct(labels_);
    return static_cast<double>((margins.array() > 0.0).count()) / static_cast<double>(samples());
  }

 private:
  Matrix features_;
  Vector labels_;
  double init_scale_ = 1.0;
};

// One tanh hidden layer, two-way softmax cross-entropy on 2-D blobs.
// Parameter layout: W1 (hidden x 2, row-major), b1, W2 (2 x hidden, row-major), b2.
class TinyMLP final : public Objective {
 public:
  static constexpr std::size_t kInputs = 2;
  static constexpr std::size_t kClasses = 2;

  TinyMLP(Matrix inputs, std::vector<int> labels, std::size_t hidden)
      : inputs_(std::move(inputs)), labels_(std::move(labels)), hidden_(hidden) {
    if (hidden_ == 0) throw InvalidArgument("MLP width must be > 0");
    if (inputs_.rows() != static_cast<Eigen::Index>(kInputs) ||
        inputs_.cols() != static_cast<Eigen::Index>(labels_.size()) || labels_.empty()) {
      throw InvalidArgument("MLP: inputs must be 2 x m with m labels");
    }
  }

  /// Blob centers sit on a circle of radius `separation`, alternating
  /// class, so blobs_per_class = 2 gives an XOR-like layout.
  static TinyMLP generate(const ObjectiveSpec& spec) {
    Rng rng(derive_seed(spec.seed, "objective/mlp"));
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t blobs = kClasses * spec.blobs_per_class;
    const double pi = std::acos(-1.0);
    Matrix z(kInputs, static_cast<Eigen::Index>(spec.samples));
    std::vector<int> y(spec.samples);
    for (std::size_t i = 0; i < spec.samples; ++i) {
      const std::size_t blob = i % blobs;
      const double angle = 2.0 * pi * static_cast<double>(blob) / static_cast<double>(blobs) + pi / 4.0;
      const auto c = static_cast<Eigen::Index>(i);
      z(0, c) = spec.separation * std::cos(angle) + 0.5 * normal(rng);
      z(1, c) = spec.separation * std::sin(angle) + 0.5 * normal(rng);
      y[i] = static_cast<int>(blob % kClasses);
    }
    TinyMLP mlp(std::move(z), std::move(y), spec.hidden);
    mlp.init_scale_ = spec.init_scale;
    return mlp;
  }

  ObjectiveKind kind() const override { return ObjectiveKind::TinyMLP; }
  std::size_t dimension() const override {
    return hidden_ * kInputs + hidden_ + kClasses * hidden_ + kClasses;
  }
  std::size_t samples() const override { return labels_.size(); }
  std::size_t hidden() const { return hidden_; }

  std::vector<std::size_t> layer_sizes() const override {
    return {hidden_ * kInputs, hidden_, kClasses * hidden_, kClasses};
  }

  double sample_loss(const Vector& x, std::size_t i, Vector* grad, double w) const override {
    const auto h = static_cast<Eigen::Index>(hidden_);
    const auto in = static_cast<Eigen::Index>(kInputs);
    const auto out = static_cast<Eigen::Index>(kClasses);
    const auto W1 = weights(x, 0, h, in);
    const auto b1 = x.segment(h * in, h);
    const auto W2 = weights(x, h * in + h, out, h);
    const auto b2 = x.segment(h * in + h + out * h, out);

    const Vector z = inputs_.col(static_cast<Eigen::Index>(i));
    const Vector act = (W1 * z + b1).array().tanh().matrix();
    const Vector logits = W2 * act + b2;
    const double mx = logits.maxCoeff();
    const Vector ex = (logits.array() - mx).exp().matrix();
    const double lse = mx + std::log(ex.sum());
    const int label = labels_[i];
    const double loss = lse - logits[label];

    if (grad != nullptr) {
      Vector d_logits = ex / ex.sum();
      d_logits[label] -= 1.0;
      const Vector d_act = W2.transpose() * d_logits;
      const Vector d_pre = d_act.cwiseProduct((1.0 - act.array().square()).matrix());
      Vector& g = *grad;
      weights(g, 0, h, in) += w * d_pre * z.transpose();
      g.segment(h * in, h) += w * d_pre;
      weights(g, h * in + h, out, h) += w * d_logits * act.transpose();
      g.segment(h * in + h + out * h, out) += w * d_logits;
    }
    return loss;
  }

  Vector initial_point(Rng& rng) const override {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x0 = Vector::Zero(static_cast<Eigen::Index>(dimension()));
    const auto h = static_cast<Eigen::Index>(hidden_);
    const auto in = static_cast<Eigen::Index>(kInputs);
    const auto out = static_cast<Eigen::Index>(kClasses);
    for (Eigen::Index j = 0; j < h * in; ++j) {
      x0[j] = init_scale_ * normal(rng) / std::sqrt(static_cast<double>(in));
    }
    for (Eigen::Index j = 0; j < out * h; ++j) {
      x0[h * in + h + j] = init_scale_ * normal(rng) / std::sqrt(static_cast<double>(h));
    }
    return x0;
  }

  std::optional<double> accuracy(const Vector& x) const override {
    const auto h = static_cast<Eigen::Index>(hidden_);
    const auto in = static_cast<Eigen::Index>(kInputs);
    const auto out = static_cast<Eigen::Index>(kClasses);
    const auto W1 = weights(x, 0, h, in);
    const auto b1 = x.segment(h * in, h);
    const auto W2 = weights(x, h * in + h, out, h);
    const auto b2 = x.segment(h * in + h + out * h, out);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples(); ++i) {
      const Vector act = (W1 * inputs_.col(static_cast<Eigen::Index>(i)) + b1).array().tanh().matrix();
      const Vector logits = W2 * act + b2;
      Eigen::Index arg = 0;
      logits.maxCoeff(&arg);
      if (static_cast<int>(arg) == labels_[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples());
  }

 private:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static Eigen::Map<const RowMajor> weights(const Vector& x, Eigen::Index offset, Eigen::Index rows,
                                            Eigen::Index cols) {
    return Eigen::Map<const RowMajor>(x.data() + offset, rows, cols);
  }
  static Eigen::Map<RowMajor> weights(Vector& x, Eigen::Index offset, Eigen::Index rows,
                                      Eigen::Index cols) {
    return Eigen::Map<RowMajor>(x.data() + offset, rows, cols);
  }

  Matrix inputs_;
  std::vector<int> labels_;
  std::size_t hidden_;
  double init_scale_ = 1.0;
};

inline ObjectivePtr make_objective(const ObjectiveSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case ObjectiveKind::NoisyQuadratic:
      return std::make_shared<NoisyQuadratic>(NoisyQuadratic::generate(spec));
    case ObjectiveKind::StochasticRosenbrock:
      return std::make_shared<StochasticRosenbrock>(StochasticRosenbrock::generate(spec));
    case ObjectiveKind::LogisticRegressionSynthetic:
      return std::make_shared<LogisticRegression>(LogisticRegression::generate(spec));
    case ObjectiveKind::TinyMLP:
      return std::make_shared<TinyMLP>(TinyMLP::generate(spec));
  }
  throw InvalidArgument("unknown objective kind");
}

/// Central differences of the minibatch loss, one coordinate at a time.
inline Vector finite_difference_gradient(const Objective& obj, const Vector& x, IndexSpan batch,
                                         double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const double up = obj.batch_loss(probe, batch);
    probe[j] = x[j] - h;
    const double down = obj.batch_loss(probe, batch);
    probe[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

inline Vector finite_difference_gradient(const Objective& obj, const Vector& x,
                                         const std::vector<std::size_t>& batch, double h) {
  return finite_difference_gradient(obj, x, IndexSpan(batch.data(), batch.size()), h);
}

/// Epoch-based sampling: a seeded permutation of [0, m) consumed in
/// contiguous chunks, reshuffled at every epoch boundary. The last chunk of
/// an epoch is short when batch_size does not divide m.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t m, std::size_t batch_size, std::uint64_t seed)
      : m_(m), batch_size_(batch_size), rng_(seed), perm_(m) {
    if (m_ == 0) throw InvalidArgument("dataset is empty");
    if (batch_size_ < 1 || batch_size_ > m_) {
      throw InvalidArgument("batch size must lie in [1, " + std::to_string(m_) + "]");
    }
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    shuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ >= m_) {
      ++epoch_;
      pos_ = 0;
      shuffle();
    }
    const std::size_t end = std::min(pos_ + batch_size_, m_);
    std::vector<std::size_t> batch(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                   perm_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return batch;
  }

  /// Epoch of the most recently returned batch (0-based).
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (m_ + batch_size_ - 1) / batch_size_; }

 private:
  void shuffle() {
    for (std::size_t i = m_; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(perm_[i - 1], perm_[pick(rng_)]);
    }
  }

  std::size_t m_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace kafisto
