#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lf2i/core/rng.hpp"
#include "lf2i/core/types.hpp"
#include "lf2i/learners/tree.hpp"

namespace lf2i::learners {

inline constexpr int kSchemaVersion = 1;

/// Number of learner fits performed by this process. Lets callers assert
/// that amortized stages do not refit anything.
inline std::atomic<std::uint64_t>& fit_counter() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(1 + e^t) without overflow.
inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

/// Probabilistic binary classifier. `logit` is the log-odds of class 1,
/// unclamped; clamping is the caller's policy (see OddsModel).
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t n_features() const = 0;
  virtual double logit(std::span<const double> features) const = 0;
  virtual nlohmann::json to_json() const = 0;

  double predict_proba(std::span<const double> features) const { return sigmoid(logit(features)); }
};

/// Column-wise standardization fitted on training data.
struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const Matrix& X) {
    Standardizer s;
    s.mean.assign(X.cols(), 0.0);
    s.scale.assign(X.cols(), 1.0);
    const double n = static_cast<double>(X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) s.mean[j] += X(i, j) / n;
    std::vector<double> var(X.cols(), 0.0);
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) var[j] += (X(i, j) - s.mean[j]) * (X(i, j) - s.mean[j]) / n;
    for (std::size_t j = 0; j < X.cols(); ++j) s.scale[j] = var[j] > 0 ? std::sqrt(var[j]) : 1.0;
    return s;
  }

  void apply(std::span<const double> x, std::span<double> out) const {
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"scale", scale}}; }
  static Standardizer from_json(const nlohmann::json& j) {
    return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
  }
};

inline void require_two_classes(std::span<const int> y, std::size_t min_per_class = 2) {
  std::size_t ones = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw std::invalid_argument("classifier labels must be 0 or 1");
    ones += static_cast<std::size_t>(v);
  }
  if (ones < min_per_class || y.size() - ones < min_per_class)
    throw std::runtime_error("classifier fit: need at least two examples of each class");
}

// ---------------------------------------------------------------------------
// Quadratic discriminant analysis
// ---------------------------------------------------------------------------

/// Gaussian class-conditional model per label; log-odds is the difference of
/// class log densities plus the log prior ratio.
class QDA final : public Classifier {
 public:
  struct ClassModel {
    std::vector<double> mean;
    std::vector<double> precision;  // row-major k x k
    double log_norm = 0.0;          // log prior - 0.5 log det(Sigma)
  };

  QDA() = default;
  QDA(ClassModel c0, ClassModel c1, double reg) : c0_(std::move(c0)), c1_(std::move(c1)), reg_(reg) {}

  static QDA fit(const Matrix& X, std::span<const int> y, double reg = 1e-6) {
    require_two_classes(y);
    ++fit_counter();
    return QDA(fit_class(X, y, 0, reg), fit_class(X, y, 1, reg), reg);
  }

  std::string kind() const override { return "qda"; }
  std::size_t n_features() const override { return c0_.mean.size(); }

  double logit(std::span<const double> z) const override {
    return class_score(c1_, z) - class_score(c0_, z);
  }

  nlohmann::json to_json() const override {
    auto cls = [](const ClassModel& c) {
      return nlohmann::json{{"mean", c.mean}, {"precision", c.precision}, {"log_norm", c.log_norm}};
    };
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters", {{"reg", reg_}}},
            {"body", {{"class0", cls(c0_)}, {"class1", cls(c1_)}}}};
  }

  static QDA from_json(const nlohmann::json& j) {
    auto cls = [](const nlohmann::json& c) {
      return ClassModel{c.at("mean").get<std::vector<double>>(), c.at("precision").get<std::vector<double>>(),
                        c.at("log_norm").get<double>()};
    };
    const auto& b = j.at("body");
    return QDA(cls(b.at("class0")), cls(b.at("class1")), j.at("hyperparameters").at("reg").get<double>());
  }

 private:
  static ClassModel fit_class(const Matrix& X, std::span<const int> y, int label, double reg) {
    const std::size_t k = X.cols();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    std::size_t count = 0;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      if (y[i] != label) continue;
      for (std::size_t j = 0; j < k; ++j) mu(static_cast<Eigen::Index>(j)) += X(i, j);
      ++count;
    }
    mu /= static_cast<double>(count);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    Eigen::VectorXd d(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < X.rows(); ++i) {
      if (y[i] != label) continue;
      for (std::size_t j = 0; j < k; ++j) d(static_cast<Eigen::Index>(j)) = X(i, j) - mu(static_cast<Eigen::Index>(j));
      S.noalias() += d * d.transpose();
    }
    S /= static_cast<double>(count);
    const double ridge = reg * std::max(S.diagonal().mean(), 1e-12);
    S.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw std::runtime_error("QDA: covariance not positive definite");
    const Eigen::MatrixXd P = llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
    double logdet = 0.0;
    for (Eigen::Index j = 0; j < S.rows(); ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
    ClassModel m;
    m.mean.assign(mu.data(), mu.data() + mu.size());
    m.precision.resize(k * k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        m.precision[a * k + b] = P(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    const double prior = static_cast<double>(count) / static_cast<double>(X.rows());
    m.log_norm = std::log(prior) - 0.5 * logdet;
    return m;
  }

  static double class_score(const ClassModel& c, std::span<const double> z) {
    const std::size_t k = c.mean.size();
    double d[32];
    if (k > 32) throw std::invalid_argument("QDA: more than 32 features");
    for (std::size_t j = 0; j < k; ++j) d[j] = z[j] - c.mean[j];
    double q = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      const double* row = c.precision.data() + a * k;
      double s = 0.0;
      for (std::size_t b = 0; b < k; ++b) s += row[b] * d[b];
      q += d[a] * s;
    }
    return c.log_norm - 0.5 * q;
  }

  ClassModel c0_, c1_;
  double reg_ = 1e-6;
};

// ---------------------------------------------------------------------------
// Polynomial features and logistic regression
// ---------------------------------------------------------------------------

/// All monomials of standardized inputs up to a total degree, including the
/// constant term.
class PolynomialFeatures {
 public:
  PolynomialFeatures() = default;
  PolynomialFeatures(std::size_t inputs, int degree) : inputs_(inputs), degree_(degree) {
    if (degree < 1) throw std::invalid_argument("PolynomialFeatures: degree >= 1");
    std::vector<int> exps(inputs, 0);
    enumerate(exps, 0, degree);
  }

  std::size_t size() const noexcept { return terms_.size(); }
  int degree() const noexcept { return degree_; }

  void expand(std::span<const double> z, std::span<double> out) const {
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      double v = 1.0;
      for (std::size_t j = 0; j < inputs_; ++j)
        for (int e = 0; e < terms_[t][j]; ++e) v *= z[j];
      out[t] = v;
    }
  }

 private:
  void enumerate(std::vector<int>& exps, std::size_t pos, int remaining) {
    if (pos == inputs_) {
      terms_.push_back(exps);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      exps[pos] = e;
      enumerate(exps, pos + 1, remaining - e);
    }
    exps[pos] = 0;
  }

  std::size_t inputs_ = 0;
  int degree_ = 1;
  std::vector<std::vector<int>> terms_;
};

/// Result of a penalized iteratively-reweighted least squares logistic fit.
struct IrlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // (X'WX + P)^-1 at convergence
  double deviance = 0.0;
  double edf = 0.0;
  int iterations = 0;
};

/// Penalized logistic regression by IRLS. `penalty` is added to X'WX.
inline IrlsResult irls_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& penalty,
                                int max_iter = 100, double tol = 1e-10) {
  const Eigen::Index n = X.rows(), p = X.cols();
  IrlsResult r;
  r.beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n), mu(n), w(n), z(n);
  double prev_dev = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd XtWX(p, p);
  Eigen::LDLT<Eigen::MatrixXd> solver;
  for (int it = 0; it < max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = sigmoid(eta(i));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
      z(i) = eta(i) + (y(i) - mu(i)) / w(i);
    }
    XtWX.noalias() = X.transpose() * w.asDiagonal() * X;
    solver.compute(XtWX + penalty);
    const Eigen::VectorXd beta_new = solver.solve(X.transpose() * (w.array() * z.array()).matrix());
    // step halving keeps the penalized deviance from increasing
    Eigen::VectorXd step = beta_new - r.beta;
    double dev = 0.0;
    for (int half = 0; half < 30; ++half) {
      const Eigen::VectorXd cand = r.beta + step;
      eta.noalias() = X * cand;
      dev = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) dev += 2.0 * (softplus(eta(i)) - y(i) * eta(i));
      dev += cand.dot(penalty * cand);
      if (dev <= prev_dev + 1e-12 || !std::isfinite(prev_dev)) {
        r.beta = cand;
        break;
      }
      step *= 0.5;
    }
    eta.noalias() = X * r.beta;
    r.iterations = it + 1;
    if (std::abs(prev_dev - dev) < tol * (std::abs(dev) + 1.0)) {
      prev_dev = dev;
      break;
    }
    prev_dev = dev;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    mu(i) = sigmoid(eta(i));
    w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
  }
  XtWX.noalias() = X.transpose() * w.asDiagonal() * X;
  solver.compute(XtWX + penalty);
  r.covariance = solver.solve(Eigen::MatrixXd::Identity(p, p));
  r.deviance = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) r.deviance += 2.0 * (softplus(eta(i)) - y(i) * eta(i));
  r.edf = (r.covariance * XtWX).trace();
  return r;
}

class LogisticRegression final : public Classifier {
 public:
  LogisticRegression() = default;
  LogisticRegression(Standardizer s, PolynomialFeatures poly, std::vector<double> beta, double l2)
      : std_(std::move(s)), poly_(std::move(poly)), beta_(std::move(beta)), l2_(l2) {}

  static LogisticRegression fit(const Matrix& X, std::span<const int> y, int degree = 1, double l2 = 1e-6) {
    require_two_classes(y);
    ++fit_counter();
    Standardizer s = Standardizer::fit(X);
    PolynomialFeatures poly(X.cols(), degree);
    Eigen::MatrixXd F(static_cast<Eigen::Index>(X.rows()), static_cast<Eigen::Index>(poly.size()));
    std::vector<double> z(X.cols()), f(poly.size());
    for (std::size_t i = 0; i < X.rows(); ++i) {
      s.apply(X.row(i), z);
      poly.expand(z, f);
      for (std::size_t t = 0; t < f.size(); ++t) F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = f[t];
    }
    Eigen::VectorXd yy(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) yy(static_cast<Eigen::Index>(i)) = y[i];
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(F.cols(), F.cols()) * (l2 * static_cast<double>(X.rows()));
    P(0, 0) = 0.0;  // the constant monomial comes first
    const IrlsResult r = irls_logistic(F, yy, P);
    return LogisticRegression(std::move(s), std::move(poly), std::vector<double>(r.beta.data(), r.beta.data() + r.beta.size()), l2);
  }

  std::string kind() const override { return "logistic"; }
  std::size_t n_features() const override { return std_.mean.size(); }

  double logit(std::span<const double> x) const override {
    double z[32], f[512];
    if (x.size() > 32 || poly_.size() > 512) throw std::invalid_argument("LogisticRegression: too many features");
    std_.apply(x, {z, x.size()});
    poly_.expand({z, x.size()}, {f, poly_.size()});
    double s = 0.0;
    for (std::size_t t = 0; t < beta_.size(); ++t) s += beta_[t] * f[t];
    return s;
  }

  nlohmann::json to_json() const override {
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters", {{"degree", poly_.degree()}, {"l2", l2_}}},
            {"body", {{"standardizer", std_.to_json()}, {"beta", beta_}}}};
  }

  static LogisticRegression from_json(const nlohmann::json& j) {
    const auto& h = j.at("hyperparameters");
    const auto& b = j.at("body");
    Standardizer s = Standardizer::from_json(b.at("standardizer"));
    PolynomialFeatures poly(s.mean.size(), h.at("degree").get<int>());
    return LogisticRegression(std::move(s), std::move(poly), b.at("beta").get<std::vector<double>>(),
                              h.at("l2").get<double>());
  }

 private:
  Standardizer std_;
  PolynomialFeatures poly_;
  std::vector<double> beta_;
  double l2_ = 1e-6;
};

// ---------------------------------------------------------------------------
// Gradient boosted trees
// ---------------------------------------------------------------------------

/// Additive tree ensemble: init + learning_rate * sum(trees).
struct TreeEnsemble {
  double init = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;

  double raw(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return init + learning_rate * s;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : trees) arr.push_back(t.to_json());
    return {{"init", init}, {"learning_rate", learning_rate}, {"trees", arr}};
  }

  static TreeEnsemble from_json(const nlohmann::json& j) {
    TreeEnsemble e;
    e.init = j.at("init").get<double>();
    e.learning_rate = j.at("learning_rate").get<double>();
    for (const auto& t : j.at("trees")) e.trees.push_back(RegressionTree::from_json(t));
    return e;
  }
};

/// Rows used in boosting round `round` (all rows when subsample == 1).
inline std::vector<std::size_t> boosting_rows(std::size_t n, double subsample, Engine& rng) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (subsample >= 1.0) return rows;
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::max<std::size_t>(1, static_cast<std::size_t>(subsample * static_cast<double>(n))));
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Logistic-loss boosting with Newton leaf values.
class GradientBoostedClassifier final : public Classifier {
 public:
  GradientBoostedClassifier() = default;
  GradientBoostedClassifier(TreeEnsemble e, TreeParams p, std::size_t n_features)
      : ens_(std::move(e)), params_(p), n_features_(n_features) {}

  /// With params.validation_fraction > 0 the round count is chosen by
  /// held-out log loss (patience rounds), then the model is refit on all rows.
  static GradientBoostedClassifier fit(const Matrix& X, std::span<const int> y, const TreeParams& params,
                                       std::uint64_t seed) {
    params.validate();
    require_two_classes(y);
    ++fit_counter();
    int rounds = params.rounds;
    if (params.validation_fraction > 0.0) {
      const auto [tr, va] = holdout_split(X.rows(), params.validation_fraction, derive_seed(seed, streams::kLearner + 1));
      std::vector<int> yt, yv;
      for (auto i : tr) yt.push_back(y[i]);
      for (auto i : va) yv.push_back(y[i]);
      bool both = false;
      for (int v : yt) both = both || v != yt.front();
      if (both) {
        const Matrix Xv = take_rows(X, va);
        rounds = boost(take_rows(X, tr), yt, params, params.rounds, seed, &Xv, yv).second;
      }
    }
    return GradientBoostedClassifier(boost(X, y, params, rounds, seed, nullptr, {}).first, params, X.cols());
  }

  std::string kind() const override { return "gbt"; }
  std::size_t n_features() const override { return n_features_; }
  double logit(std::span<const double> x) const override { return ens_.raw(x); }

  nlohmann::json to_json() const override {
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters", params_},
            {"body", {{"n_features", n_features_}, {"ensemble", ens_.to_json()}}}};
  }

  static GradientBoostedClassifier from_json(const nlohmann::json& j) {
    return GradientBoostedClassifier(TreeEnsemble::from_json(j.at("body").at("ensemble")),
                                     j.at("hyperparameters").get<TreeParams>(),
                                     j.at("body").at("n_features").get<std::size_t>());
  }

 private:
  static std::pair<TreeEnsemble, int> boost(const Matrix& X, std::span<const int> y, const TreeParams& params,
                                            int rounds, std::uint64_t seed, const Matrix* Xv, std::span<const int> yv) {
    const std::size_t n = X.rows();
    BinnedFeatures bins(X, params.max_bins);
    double mean_y = 0.0;
    for (int v : y) mean_y += v;
    mean_y /= static_cast<double>(n);
    TreeEnsemble ens;
    ens.init = learners::logit(std::clamp(mean_y, 1e-6, 1.0 - 1e-6));
    ens.learning_rate = params.learning_rate;
    std::vector<double> F(n, ens.init), g(n), h(n);
    std::vector<double> Fv(Xv ? Xv->rows() : 0, ens.init);
    auto val_loss = [&] {
      double l = 0.0;
      for (std::size_t i = 0; i < Fv.size(); ++i) l += softplus(Fv[i]) - yv[i] * Fv[i];
      return l;
    };
    double best = Xv ? val_loss() : 0.0;
    int best_round = 0;
    Engine rng = make_engine(seed, streams::kLearner);
    for (int round = 0; round < rounds; ++round) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(F[i]);
        g[i] = p - y[i];
        h[i] = std::max(p * (1.0 - p), 1e-12);
      }
      const auto rows = boosting_rows(n, params.subsample, rng);
      RegressionTree tree = grow_tree(bins, rows, g, h, params);
      for (std::size_t i = 0; i < n; ++i) F[i] += params.learning_rate * tree.predict(X.row(i));
      if (Xv) {
        for (std::size_t i = 0; i < Fv.size(); ++i) Fv[i] += params.learning_rate * tree.predict(Xv->row(i));
        const double l = val_loss();
        if (l < best - 1e-12 * std::abs(best)) {
          best = l;
          best_round = round + 1;
        } else if (round + 1 - best_round >= params.patience) {
          break;
        }
      }
      ens.trees.push_back(std::move(tree));
    }
    const int used = Xv ? best_round : static_cast<int>(ens.trees.size());
    return {std::move(ens), used};
  }

  TreeEnsemble ens_;
  TreeParams params_;
  std::size_t n_features_ = 0;
};

}  // namespace lf2i::learners
