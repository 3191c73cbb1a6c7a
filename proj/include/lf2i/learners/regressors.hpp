#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lf2i/learners/classifiers.hpp"
#include "lf2i/learners/tree.hpp"

namespace lf2i::learners {

/// Pinball (check) loss of predicting `pred` for target `actual` at level alpha.
inline double pinball_loss(double pred, double actual, double alpha) {
  const double diff = actual - pred;
  return diff >= 0 ? alpha * diff : (alpha - 1.0) * diff;
}

inline void require_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("quantile level alpha must lie in (0,1)");
}

inline void require_pairs(const Matrix& X, std::span<const double> y, std::size_t min_pairs) {
  if (X.rows() != y.size()) throw std::invalid_argument("regression: feature/target length mismatch");
  if (X.rows() < min_pairs)
    throw std::invalid_argument("regression: needs at least " + std::to_string(min_pairs) + " pairs");
}

/// Boosting driver shared by the regressors. `step(F)` returns the next tree
/// for current training predictions F (nullopt stops early). `loss(f, i)` is
/// the held-out loss of prediction f on validation row i. With validation
/// rows, stops after `patience` rounds without improvement and returns the
/// selected round count (best, or fewest within one se of best when
/// `one_se`); otherwise returns the rounds run.
template <class Step, class Loss>
int boost_loop(const Matrix& X, TreeEnsemble& ens, int rounds, int patience, Step&& step, const Matrix* Xv,
               Loss&& loss, bool one_se = false) {
  std::vector<double> F(X.rows(), ens.init);
  std::vector<double> Fv(Xv ? Xv->rows() : 0, ens.init);
  std::vector<std::vector<double>> history;
  auto record = [&] {
    std::vector<double> l(Fv.size());
    double s = 0.0;
    for (std::size_t i = 0; i < Fv.size(); ++i) s += l[i] = loss(Fv[i], i);
    if (one_se) history.push_back(std::move(l));
    return s;
  };
  double best = Xv ? record() : 0.0;
  int best_round = 0;
  for (int r = 0; r < rounds; ++r) {
    auto tree = step(std::span<const double>(F));
    if (!tree) break;
    for (std::size_t i = 0; i < F.size(); ++i) F[i] += ens.learning_rate * tree->predict(X.row(i));
    if (Xv) {
      for (std::size_t i = 0; i < Fv.size(); ++i) Fv[i] += ens.learning_rate * tree->predict(Xv->row(i));
    }
    ens.trees.push_back(std::move(*tree));
    if (Xv) {
      const double l = record();
      if (l < best - 1e-12 * std::abs(best)) {
        best = l;
        best_round = r + 1;
      } else if (r + 1 - best_round >= patience) {
        break;
      }
    }
  }
  if (!Xv) return static_cast<int>(ens.trees.size());
  if (!one_se || Fv.size() < 2) return best_round;
  const auto& lb = history[static_cast<std::size_t>(best_round)];
  const double m = static_cast<double>(Fv.size());
  for (int r = 0; r < best_round; ++r) {
    const auto& lr = history[static_cast<std::size_t>(r)];
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < lr.size(); ++i) {
      const double d = lr[i] - lb[i];
      sum += d;
      sum2 += d * d;
    }
    const double mean = sum / m;
    const double se = std::sqrt(std::max(0.0, (sum2 - m * mean * mean) / (m - 1.0)) / m);
    if (mean <= se) return r;
  }
  return best_round;
}

/// Round count for the final fit: params.rounds, or the early-stopping
/// optimum found on a held-out split when validation is enabled.
template <class Make>
int validated_rounds(const Matrix& X, std::span<const double> y, const TreeParams& params, std::uint64_t seed,
                     Make&& make) {
  if (params.validation_fraction <= 0.0) return params.rounds;
  const auto [tr, va] = holdout_split(X.rows(), params.validation_fraction, derive_seed(seed, streams::kLearner + 1));
  const Matrix Xt = take_rows(X, tr), Xv = take_rows(X, va);
  const auto yt = take(y, std::span<const std::size_t>(tr)), yv = take(y, std::span<const std::size_t>(va));
  TreeEnsemble scratch;
  return make(Xt, std::span<const double>(yt), &Xv, std::span<const double>(yv), params.rounds, scratch);
}

// ---------------------------------------------------------------------------
// Conditional quantile regressors
// ---------------------------------------------------------------------------

class QuantileRegressor {
 public:
  virtual ~QuantileRegressor() = default;
  virtual std::string kind() const = 0;
  virtual double alpha() const = 0;
  virtual double predict(std::span<const double> theta) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

/// Boosted trees on the pinball loss. Tree structure is fit to the negative
/// gradient by least squares; each leaf is then set to the alpha-quantile of
/// the residuals that fall in it.
class GradientBoostedQuantile final : public QuantileRegressor {
 public:
  GradientBoostedQuantile() = default;
  GradientBoostedQuantile(TreeEnsemble e, TreeParams p, double alpha)
      : ens_(std::move(e)), params_(p), alpha_(alpha) {}

  static GradientBoostedQuantile fit(const Matrix& X, std::span<const double> y, double alpha,
                                     const TreeParams& params, std::uint64_t seed) {
    require_alpha(alpha);
    params.validate();
    require_pairs(X, y, 50);
    ++fit_counter();
    auto make = [&](const Matrix& Xs, std::span<const double> ys, const Matrix* Xv, std::span<const double> yv,
                    int rounds, TreeEnsemble& ens) {
      std::vector<double> tmp(ys.begin(), ys.end());
      ens.init = sample_quantile_unbiased(tmp, alpha);
      ens.learning_rate = params.learning_rate;
      const BinnedFeatures bins(Xs, params.max_bins);
      std::vector<double> g(ys.size()), h(ys.size(), 1.0);
      std::vector<int> leaf_of;
      TreeParams ls = params;
      ls.l2 = 0.0;
      Engine rng = make_engine(seed, streams::kLearner);
      auto step = [&](std::span<const double> F) -> std::optional<RegressionTree> {
        bool any = false;
        for (std::size_t i = 0; i < ys.size(); ++i) {
          g[i] = ys[i] > F[i] ? -alpha : 1.0 - alpha;
          any = any || ys[i] != F[i];
        }
        if (!any) return std::nullopt;
        const auto rows = boosting_rows(ys.size(), params.subsample, rng);
        RegressionTree tree = grow_tree(bins, rows, g, h, ls, &leaf_of);
        std::vector<std::vector<double>> residuals(tree.nodes.size());
        for (auto i : rows) residuals[static_cast<std::size_t>(leaf_of[i])].push_back(ys[i] - F[i]);
        for (std::size_t k = 0; k < tree.nodes.size(); ++k)
          if (tree.nodes[k].feature < 0)
            tree.nodes[k].value = residuals[k].empty() ? 0.0 : sample_quantile_unbiased(residuals[k], alpha);
        return tree;
      };
      auto loss = [&](double f, std::size_t i) { return pinball_loss(f, yv[i], alpha); };
      return boost_loop(Xs, ens, rounds, params.patience, step, Xv, loss, params.one_se_rule);
    };
    TreeEnsemble ens;
    const int rounds = validated_rounds(X, y, params, seed, make);
    make(X, y, nullptr, {}, rounds, ens);
    return GradientBoostedQuantile(std::move(ens), params, alpha);
  }

  std::string kind() const override { return "gbt_quantile"; }
  double alpha() const override { return alpha_; }
  double predict(std::span<const double> theta) const override { return ens_.raw(theta); }

  nlohmann::json to_json() const override {
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters", {{"alpha", alpha_}, {"trees", params_}}},
            {"body", ens_.to_json()}};
  }

  static GradientBoostedQuantile from_json(const nlohmann::json& j) {
    const auto& h = j.at("hyperparameters");
    return GradientBoostedQuantile(TreeEnsemble::from_json(j.at("body")), h.at("trees").get<TreeParams>(),
                                   h.at("alpha").get<double>());
  }

 private:
  TreeEnsemble ens_;
  TreeParams params_;
  double alpha_ = 0.1;
};

/// Empirical quantile of the k training targets whose parameters are nearest
/// to the query (distance in per-dimension standardized units). Slow, but
/// assumption-light; also answers conditional CDF queries.
class LocalBinQuantile final : public QuantileRegressor {
 public:
  LocalBinQuantile() = default;
  LocalBinQuantile(Matrix X, std::vector<double> y, double alpha, std::size_t k, Standardizer s)
      : X_(std::move(X)), y_(std::move(y)), alpha_(alpha), k_(k), std_(std::move(s)) {}

  static LocalBinQuantile fit(const Matrix& X, std::span<const double> y, double alpha, std::size_t k = 0) {
    require_alpha(alpha);
    require_pairs(X, y, 50);
    ++fit_counter();
    if (k == 0) k = std::max<std::size_t>(50, X.rows() / 20);
    k = std::min(k, X.rows());
    Standardizer s = Standardizer::fit(X);
    Matrix Z(X.rows(), X.cols());
    for (std::size_t i = 0; i < X.rows(); ++i) s.apply(X.row(i), Z.row(i));
    return LocalBinQuantile(std::move(Z), std::vector<double>(y.begin(), y.end()), alpha, k, std::move(s));
  }

  std::string kind() const override { return "local_bin"; }
  double alpha() const override { return alpha_; }
  std::size_t neighbours() const noexcept { return k_; }

  double predict(std::span<const double> theta) const override { return quantile_at(theta, alpha_); }

  double quantile_at(std::span<const double> theta, double level) const {
    require_alpha(level);
    std::vector<double> vals = neighbourhood(theta);
    return sample_quantile(vals, level);
  }

  /// Fraction of neighbourhood targets <= value.
  double cdf(std::span<const double> theta, double value) const {
    const std::vector<double> vals = neighbourhood(theta);
    return static_cast<double>(std::count_if(vals.begin(), vals.end(), [&](double v) { return v <= value; })) /
           static_cast<double>(vals.size());
  }
  /// Fraction of neighbourhood targets strictly below value.
  double cdf_below(std::span<const double> theta, double value) const {
    const std::vector<double> vals = neighbourhood(theta);
    return static_cast<double>(std::count_if(vals.begin(), vals.end(), [&](double v) { return v < value; })) /
           static_cast<double>(vals.size());
  }

  nlohmann::json to_json() const override {
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters", {{"alpha", alpha_}, {"k", k_}}},
            {"body",
             {{"standardizer", std_.to_json()},
              {"cols", X_.cols()},
              {"x", std::vector<double>(X_.data().begin(), X_.data().end())},
              {"y", y_}}}};
  }

  static LocalBinQuantile from_json(const nlohmann::json& j) {
    const auto& b = j.at("body");
    const auto cols = b.at("cols").get<std::size_t>();
    const auto flat = b.at("x").get<std::vector<double>>();
    Matrix X;
    for (std::size_t i = 0; i + cols <= flat.size(); i += cols) X.append_row({flat.data() + i, cols});
    return LocalBinQuantile(std::move(X), b.at("y").get<std::vector<double>>(),
                            j.at("hyperparameters").at("alpha").get<double>(),
                            j.at("hyperparameters").at("k").get<std::size_t>(),
                            Standardizer::from_json(b.at("standardizer")));
  }

 private:
  std::vector<double> neighbourhood(std::span<const double> theta) const {
    std::vector<double> z(theta.size());
    std_.apply(theta, z);
    std::vector<std::pair<double, std::size_t>> dist(X_.rows());
    for (std::size_t i = 0; i < X_.rows(); ++i) {
      double d = 0.0;
      const auto r = X_.row(i);
      for (std::size_t j = 0; j < z.size(); ++j) d += (r[j] - z[j]) * (r[j] - z[j]);
      dist[i] = {d, i};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_ - 1), dist.end());
    std::vector<double> vals(k_);
    for (std::size_t t = 0; t < k_; ++t) vals[t] = y_[dist[t].second];
    return vals;
  }

  Matrix X_;
  std::vector<double> y_;
  double alpha_ = 0.1;
  std::size_t k_ = 50;
  Standardizer std_;
};

// ---------------------------------------------------------------------------
// Mean regressors
// ---------------------------------------------------------------------------

struct Band {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

class MeanRegressor {
 public:
  virtual ~MeanRegressor() = default;
  virtual std::string kind() const = 0;
  virtual double predict(std::span<const double> theta) const = 0;
  /// Pointwise +/- 2 standard-deviation band; degenerate (lo = hi = mean)
  /// for learners without an uncertainty model.
  virtual Band band(std::span<const double> theta) const {
    const double m = predict(theta);
    return {m, m, m};
  }
  virtual bool has_band() const { return false; }
  virtual nlohmann::json to_json() const = 0;
};

/// Squared-loss boosting. Predictions are clipped to [0,1] when every
/// training target lies in [0,1].
class GradientBoostedRegressor final : public MeanRegressor {
 public:
  GradientBoostedRegressor() = default;
  GradientBoostedRegressor(TreeEnsemble e, TreeParams p, bool clip) : ens_(std::move(e)), params_(p), clip_(clip) {}

  static GradientBoostedRegressor fit(const Matrix& X, std::span<const double> y, const TreeParams& params,
                                      std::uint64_t seed) {
    params.validate();
    require_pairs(X, y, 50);
    ++fit_counter();
    const bool clip = std::all_of(y.begin(), y.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
    auto make = [&](const Matrix& Xs, std::span<const double> ys, const Matrix* Xv, std::span<const double> yv,
                    int rounds, TreeEnsemble& ens) {
      ens.init = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
      ens.learning_rate = params.learning_rate;
      const BinnedFeatures bins(Xs, params.max_bins);
      std::vector<double> g(ys.size()), h(ys.size(), 1.0);
      Engine rng = make_engine(seed, streams::kLearner);
      auto step = [&](std::span<const double> F) -> std::optional<RegressionTree> {
        for (std::size_t i = 0; i < ys.size(); ++i) g[i] = F[i] - ys[i];
        RegressionTree tree = grow_tree(bins, boosting_rows(ys.size(), params.subsample, rng), g, h, params);
        if (tree.nodes.size() == 1 && std::abs(tree.nodes[0].value) < 1e-15) return std::nullopt;
        return tree;
      };
      auto loss = [&](double f, std::size_t i) {
        if (clip) f = std::clamp(f, 0.0, 1.0);
        return (f - yv[i]) * (f - yv[i]);
      };
      return boost_loop(Xs, ens, rounds, params.patience, step, Xv, loss, params.one_se_rule);
    };
    TreeEnsemble ens;
    const int rounds = validated_rounds(X, y, params, seed, make);
    make(X, y, nullptr, {}, rounds, ens);
    return GradientBoostedRegressor(std::move(ens), params, clip);
  }

  std::string kind() const override { return "gbt_regressor"; }
  double predict(std::span<const double> theta) const override {
    const double v = ens_.raw(theta);
    return clip_ ? std::clamp(v, 0.0, 1.0) : v;
  }

  nlohmann::json to_json() const override {
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters", {{"trees", params_}, {"clip_unit", clip_}}},
            {"body", ens_.to_json()}};
  }

  static GradientBoostedRegressor from_json(const nlohmann::json& j) {
    const auto& h = j.at("hyperparameters");
    return GradientBoostedRegressor(TreeEnsemble::from_json(j.at("body")), h.at("trees").get<TreeParams>(),
                                    h.at("clip_unit").get<bool>());
  }

 private:
  TreeEnsemble ens_;
  TreeParams params_;
  bool clip_ = false;
};

/// Cubic B-spline basis on equally spaced knots over [lo, hi]
/// (`interior` interior knots, interior + 4 functions). Inputs are clamped.
inline std::vector<double> cubic_bspline_basis(double x, double lo, double hi, int interior) {
  const int nbasis = interior + 4;
  const double h = (hi - lo) / (interior + 1);
  x = std::clamp(x, lo, hi);
  // knots t_j = lo + (j - 3) h, j = 0 .. interior + 7
  std::vector<double> b(static_cast<std::size_t>(nbasis + 3), 0.0);
  int span = static_cast<int>(std::floor((x - lo) / h)) + 3;
  span = std::clamp(span, 3, interior + 3);
  b[static_cast<std::size_t>(span)] = 1.0;
  auto t = [&](int j) { return lo + (j - 3) * h; };
  for (int deg = 1; deg <= 3; ++deg) {
    for (int j = 0; j < nbasis + 3 - deg; ++j) {
      const double left = b[static_cast<std::size_t>(j)] == 0.0 ? 0.0 : (x - t(j)) / (t(j + deg) - t(j)) * b[static_cast<std::size_t>(j)];
      const double right = b[static_cast<std::size_t>(j + 1)] == 0.0
                               ? 0.0
                               : (t(j + deg + 1) - x) / (t(j + deg + 1) - t(j + 1)) * b[static_cast<std::size_t>(j + 1)];
      b[static_cast<std::size_t>(j)] = left + right;
    }
  }
  b.resize(static_cast<std::size_t>(nbasis));
  return b;
}

struct MeanBasis {
  enum class Kind { Spline, Polynomial };
  Kind kind = Kind::Spline;
  int interior_knots = 6;  // spline: per dimension
  int degree = 3;          // polynomial: per dimension (additive)
};

/// Logistic regression of a [0,1] target on an additive basis of theta, with
/// a roughness penalty chosen by an AIC (UBRE) search and delta-method
/// +/- 2 sigma bands from the penalized covariance.
class LogisticMeanRegressor final : public MeanRegressor {
 public:
  LogisticMeanRegressor() = default;

  static LogisticMeanRegressor fit(const Matrix& X, std::span<const double> y, MeanBasis basis = {}) {
    require_pairs(X, y, 50);
    ++fit_counter();
    LogisticMeanRegressor m;
    m.basis_ = basis;
    m.lo_.assign(X.cols(), std::numeric_limits<double>::infinity());
    m.hi_.assign(X.cols(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) {
        m.lo_[j] = std::min(m.lo_[j], X(i, j));
        m.hi_[j] = std::max(m.hi_[j], X(i, j));
      }
    for (std::size_t j = 0; j < X.cols(); ++j)
      if (!(m.hi_[j] > m.lo_[j])) m.hi_[j] = m.lo_[j] + 1.0;

    for (double v : y)
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("LogisticMeanRegressor: targets must lie in [0,1]");
    const double first = y[0];
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == first; })) {
      m.constant_ = first;
      return m;
    }

    const Eigen::Index n = static_cast<Eigen::Index>(X.rows());
    const Eigen::Index p = static_cast<Eigen::Index>(m.n_coef());
    Eigen::MatrixXd D(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto r = m.design_row(X.row(static_cast<std::size_t>(i)));
      for (Eigen::Index t = 0; t < p; ++t) D(i, t) = r[static_cast<std::size_t>(t)];
    }
    Eigen::VectorXd yy(n);
    for (Eigen::Index i = 0; i < n; ++i) yy(i) = y[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd S = m.penalty_matrix();

    double best_aic = std::numeric_limits<double>::infinity();
    IrlsResult best;
    for (int e = -3; e <= 6; ++e) {
      const double lambda = std::pow(10.0, e);
      Eigen::MatrixXd P = lambda * S;
      P.diagonal().array() += 1e-8;
      P(0, 0) = 0.0;
      IrlsResult r = irls_logistic(D, yy, P);
      const double aic = r.deviance + 2.0 * r.edf;
      if (aic < best_aic - 1e-9) {
        best_aic = aic;
        best = std::move(r);
        m.lambda_ = lambda;
      }
    }
    m.beta_.assign(best.beta.data(), best.beta.data() + best.beta.size());
    m.cov_ = best.covariance;
    m.edf_ = best.edf;
    return m;
  }

  std::string kind() const override { return "logistic_mean"; }
  bool has_band() const override { return true; }
  double lambda() const noexcept { return lambda_; }
  double edf() const noexcept { return edf_; }

  double predict(std::span<const double> theta) const override { return band(theta).mean; }

  Band band(std::span<const double> theta) const override {
    if (constant_) return {*constant_, *constant_, *constant_};
    const auto r = design_row(theta);
    double eta = 0.0;
    for (std::size_t t = 0; t < r.size(); ++t) eta += beta_[t] * r[t];
    double var = 0.0;
    for (std::size_t a = 0; a < r.size(); ++a)
      for (std::size_t b = 0; b < r.size(); ++b)
        var += r[a] * cov_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * r[b];
    const double se = std::sqrt(std::max(var, 0.0));
    return {sigmoid(eta), sigmoid(eta - 2.0 * se), sigmoid(eta + 2.0 * se)};
  }

  nlohmann::json to_json() const override {
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index a = 0; a < cov_.rows(); ++a)
      for (Eigen::Index b = 0; b < cov_.cols(); ++b) cov.push_back(cov_(a, b));
    return {{"schema_version", kSchemaVersion},
            {"learner", kind()},
            {"hyperparameters",
             {{"basis", basis_.kind == MeanBasis::Kind::Spline ? "spline" : "polynomial"},
              {"interior_knots", basis_.interior_knots},
              {"degree", basis_.degree},
              {"lambda", lambda_}}},
            {"body",
             {{"lo", lo_},
              {"hi", hi_},
              {"beta", beta_},
              {"covariance", cov},
              {"edf", edf_},
              {"constant", constant_ ? nlohmann::json(*constant_) : nlohmann::json()}}}};
  }

  static LogisticMeanRegressor from_json(const nlohmann::json& j) {
    LogisticMeanRegressor m;
    const auto& h = j.at("hyperparameters");
    const auto& b = j.at("body");
    m.basis_.kind = h.at("basis").get<std::string>() == "spline" ? MeanBasis::Kind::Spline : MeanBasis::Kind::Polynomial;
    m.basis_.interior_knots = h.at("interior_knots").get<int>();
    m.basis_.degree = h.at("degree").get<int>();
    m.lambda_ = h.at("lambda").get<double>();
    m.lo_ = b.at("lo").get<std::vector<double>>();
    m.hi_ = b.at("hi").get<std::vector<double>>();
    m.beta_ = b.at("beta").get<std::vector<double>>();
    m.edf_ = b.at("edf").get<double>();
    if (!b.at("constant").is_null()) m.constant_ = b.at("constant").get<double>();
    const auto flat = b.at("covariance").get<std::vector<double>>();
    const auto p = static_cast<Eigen::Index>(m.beta_.size());
    m.cov_ = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index c = 0; c < p; ++c) m.cov_(a, c) = flat[static_cast<std::size_t>(a * p + c)];
    return m;
  }

 private:
  std::size_t per_dim() const {
    // one column per dimension is dropped so the intercept stays identifiable
    return basis_.kind == MeanBasis::Kind::Spline ? static_cast<std::size_t>(basis_.interior_knots + 3)
                                                  : static_cast<std::size_t>(basis_.degree);
  }
  std::size_t n_coef() const { return 1 + lo_.size() * per_dim(); }

  std::vector<double> design_row(std::span<const double> theta) const {
    std::vector<double> r;
    r.reserve(n_coef());
    r.push_back(1.0);
    for (std::size_t j = 0; j < lo_.size(); ++j) {
      if (basis_.kind == MeanBasis::Kind::Spline) {
        auto b = cubic_bspline_basis(theta[j], lo_[j], hi_[j], basis_.interior_knots);
        r.insert(r.end(), b.begin(), b.end() - 1);
      } else {
        const double z = 2.0 * (std::clamp(theta[j], lo_[j], hi_[j]) - lo_[j]) / (hi_[j] - lo_[j]) - 1.0;
        double v = 1.0;
        for (int d = 1; d <= basis_.degree; ++d) r.push_back(v *= z);
      }
    }
    return r;
  }

  /// Second-difference roughness penalty per dimension (the dropped last
  /// coefficient is pinned at zero); ridge for the polynomial basis.
  Eigen::MatrixXd penalty_matrix() const {
    const auto p = static_cast<Eigen::Index>(n_coef());
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p, p);
    const auto k = static_cast<Eigen::Index>(per_dim());
    for (std::size_t j = 0; j < lo_.size(); ++j) {
      const Eigen::Index off = 1 + static_cast<Eigen::Index>(j) * k;
      if (basis_.kind == MeanBasis::Kind::Spline) {
        const Eigen::Index full = k + 1;
        Eigen::MatrixXd Dm = Eigen::MatrixXd::Zero(full - 2, full);
        for (Eigen::Index r = 0; r < full - 2; ++r) {
          Dm(r, r) = 1.0;
          Dm(r, r + 1) = -2.0;
          Dm(r, r + 2) = 1.0;
        }
        const Eigen::MatrixXd DtD = Dm.transpose() * Dm;
        S.block(off, off, k, k) += DtD.topLeftCorner(k, k);
      } else {
        S.block(off, off, k, k) += Eigen::MatrixXd::Identity(k, k);
      }
    }
    return S;
  }

  MeanBasis basis_;
  std::vector<double> lo_, hi_;
  std::vector<double> beta_;
  Eigen::MatrixXd cov_;
  double lambda_ = 0.0;
  double edf_ = 0.0;
  std::optional<double> constant_;
};

}  // namespace lf2i::learners
