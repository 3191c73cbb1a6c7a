#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "lf2i/learners/classifiers.hpp"
#include "lf2i/learners/regressors.hpp"

namespace lf2i::learners {

/// Tree defaults for the regressors: early stopping on a 20% hold-out.
inline TreeParams regression_tree_defaults() {
  TreeParams p;
  p.validation_fraction = 0.2;
  p.one_se_rule = true;
  return p;
}

/// Leaves need about ten points on the short side of a 0.1-quantile.
inline TreeParams quantile_tree_defaults() {
  TreeParams p = regression_tree_defaults();
  p.min_samples_leaf = 100;
  return p;
}

struct ClassifierSpec {
  std::string kind = "qda";  // qda | logistic | gbt
  int degree = 1;            // logistic feature map
  double l2 = 1e-6;          // logistic ridge
  double reg = 1e-6;         // qda covariance ridge
  TreeParams trees;
};

struct QuantileSpec {
  std::string kind = "gbt";  // gbt | local_bin
  TreeParams trees = quantile_tree_defaults();
  std::size_t neighbours = 0;  // local_bin; 0 picks max(50, n/20)
};

struct MeanSpec {
  std::string kind = "gbt";  // gbt | logistic_spline | logistic_poly; p-values also conditional_cdf
  TreeParams trees = regression_tree_defaults();
  int interior_knots = 6;
  int degree = 3;
  std::size_t neighbours = 0;  // conditional_cdf; 0 picks max(50, n/20)
};

inline void to_json(nlohmann::json& j, const ClassifierSpec& s) {
  j = {{"kind", s.kind}, {"degree", s.degree}, {"l2", s.l2}, {"reg", s.reg}, {"trees", s.trees}};
}
inline void from_json(const nlohmann::json& j, ClassifierSpec& s) {
  s.kind = j.value("kind", s.kind);
  s.degree = j.value("degree", s.degree);
  s.l2 = j.value("l2", s.l2);
  s.reg = j.value("reg", s.reg);
  if (j.contains("trees")) from_json(j.at("trees"), s.trees);
}
inline void to_json(nlohmann::json& j, const QuantileSpec& s) {
  j = {{"kind", s.kind}, {"trees", s.trees}, {"neighbours", s.neighbours}};
}
inline void from_json(const nlohmann::json& j, QuantileSpec& s) {
  s.kind = j.value("kind", s.kind);
  s.neighbours = j.value("neighbours", s.neighbours);
  if (j.contains("trees")) from_json(j.at("trees"), s.trees);
}
inline void to_json(nlohmann::json& j, const MeanSpec& s) {
  j = {{"kind", s.kind}, {"trees", s.trees}, {"interior_knots", s.interior_knots}, {"degree", s.degree},
       {"neighbours", s.neighbours}};
}
inline void from_json(const nlohmann::json& j, MeanSpec& s) {
  s.kind = j.value("kind", s.kind);
  s.interior_knots = j.value("interior_knots", s.interior_knots);
  s.degree = j.value("degree", s.degree);
  s.neighbours = j.value("neighbours", s.neighbours);
  if (j.contains("trees")) from_json(j.at("trees"), s.trees);
}

inline std::shared_ptr<const Classifier> fit_classifier(const ClassifierSpec& spec, const Matrix& X,
                                                        std::span<const int> y, std::uint64_t seed) {
  if (spec.kind == "qda") return std::make_shared<QDA>(QDA::fit(X, y, spec.reg));
  if (spec.kind == "logistic")
    return std::make_shared<LogisticRegression>(LogisticRegression::fit(X, y, spec.degree, spec.l2));
  if (spec.kind == "gbt")
    return std::make_shared<GradientBoostedClassifier>(GradientBoostedClassifier::fit(X, y, spec.trees, seed));
  throw std::invalid_argument("unknown classifier kind: " + spec.kind);
}

inline std::shared_ptr<const QuantileRegressor> fit_quantile(const QuantileSpec& spec, const Matrix& thetas,
                                                             std::span<const double> values, double alpha,
                                                             std::uint64_t seed) {
  require_alpha(alpha);
  if (spec.kind == "gbt")
    return std::make_shared<GradientBoostedQuantile>(
        GradientBoostedQuantile::fit(thetas, values, alpha, spec.trees, seed));
  if (spec.kind == "local_bin")
    return std::make_shared<LocalBinQuantile>(LocalBinQuantile::fit(thetas, values, alpha, spec.neighbours));
  throw std::invalid_argument("unknown quantile regressor kind: " + spec.kind);
}

inline std::shared_ptr<const MeanRegressor> fit_mean(const MeanSpec& spec, const Matrix& thetas,
                                                     std::span<const double> targets, std::uint64_t seed) {
  if (spec.kind == "gbt")
    return std::make_shared<GradientBoostedRegressor>(GradientBoostedRegressor::fit(thetas, targets, spec.trees, seed));
  if (spec.kind == "logistic_spline" || spec.kind == "logistic_poly") {
    MeanBasis basis;
    basis.kind = spec.kind == "logistic_spline" ? MeanBasis::Kind::Spline : MeanBasis::Kind::Polynomial;
    basis.interior_knots = spec.interior_knots;
    basis.degree = spec.degree;
    return std::make_shared<LogisticMeanRegressor>(LogisticMeanRegressor::fit(thetas, targets, basis));
  }
  throw std::invalid_argument("unknown mean regressor kind: " + spec.kind);
}

inline void check_schema(const nlohmann::json& j) {
  const int v = j.at("schema_version").get<int>();
  if (v != kSchemaVersion) throw std::runtime_error("model file schema version " + std::to_string(v) + " unsupported");
}

inline std::shared_ptr<const Classifier> load_classifier(const nlohmann::json& j) {
  check_schema(j);
  const auto kind = j.at("learner").get<std::string>();
  if (kind == "qda") return std::make_shared<QDA>(QDA::from_json(j));
  if (kind == "logistic") return std::make_shared<LogisticRegression>(LogisticRegression::from_json(j));
  if (kind == "gbt") return std::make_shared<GradientBoostedClassifier>(GradientBoostedClassifier::from_json(j));
  throw std::runtime_error("model file holds no classifier: " + kind);
}

inline std::shared_ptr<const QuantileRegressor> load_quantile(const nlohmann::json& j) {
  check_schema(j);
  const auto kind = j.at("learner").get<std::string>();
  if (kind == "gbt_quantile") return std::make_shared<GradientBoostedQuantile>(GradientBoostedQuantile::from_json(j));
  if (kind == "local_bin") return std::make_shared<LocalBinQuantile>(LocalBinQuantile::from_json(j));
  throw std::runtime_error("model file holds no quantile regressor: " + kind);
}

inline std::shared_ptr<const MeanRegressor> load_mean(const nlohmann::json& j) {
  check_schema(j);
  const auto kind = j.at("learner").get<std::string>();
  if (kind == "gbt_regressor")
    return std::make_shared<GradientBoostedRegressor>(GradientBoostedRegressor::from_json(j));
  if (kind == "logistic_mean") return std::make_shared<LogisticMeanRegressor>(LogisticMeanRegressor::from_json(j));
  throw std::runtime_error("model file holds no mean regressor: " + kind);
}

}  // namespace lf2i::learners
