#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "lf2i/core/parallel.hpp"
#include "lf2i/learners/spec.hpp"
#include "lf2i/param_space.hpp"
#include "lf2i/simulators.hpp"
#include "lf2i/statistics.hpp"

namespace lf2i {

/// Simulated (theta_i, lambda(D_i; theta_i)) pairs. `targets` holds the
/// coordinates the statistic is evaluated at; `thetas` the full draws.
struct SimulationTable {
  Matrix thetas;
  Matrix targets;
  std::vector<double> lambda;

  std::size_t size() const noexcept { return lambda.size(); }

  std::vector<ParamPoint> target_points() const {
    std::vector<ParamPoint> out(targets.rows());
    for (std::size_t i = 0; i < targets.rows(); ++i)
      out[i] = ParamPoint(std::vector<double>(targets.row(i).begin(), targets.row(i).end()));
    return out;
  }
};

/// For i < count: theta_i ~ sampler, D_i ~ F_theta_i (size n),
/// lambda_i = lambda(D_i; theta_i restricted to the statistic's target dims).
template <ParamSampler Sampler>
SimulationTable simulate_statistics(const Simulator& sim, const Sampler& sampler, const StatisticEvaluator& stat,
                                    std::size_t count, std::size_t n, std::uint64_t seed,
                                    std::uint64_t stream = streams::kCalibration) {
  if (count == 0 || n == 0) throw std::invalid_argument("simulate_statistics: count and n must be positive");
  const auto& dims = stat.target_dims();
  SimulationTable t;
  t.thetas = Matrix(count, sim.param_dim());
  t.targets = Matrix(count, dims.size());
  t.lambda.resize(count);
  parallel_for(count, [&](std::size_t i) {
    Engine rng = make_engine(seed, stream + i);
    const ParamPoint theta = sampler(rng);
    const Dataset D = sim.sample(theta, n, rng);
    const ParamPoint target = project(theta, dims);
    std::copy(theta.begin(), theta.end(), t.thetas.row(i).begin());
    std::copy(target.begin(), target.end(), t.targets.row(i).begin());
    t.lambda[i] = stat.evaluate(D, target);
  });
  return t;
}

/// Amortized critical values C_theta: the alpha-quantile of lambda given theta.
class CalibrationModel {
 public:
  CalibrationModel() = default;
  CalibrationModel(std::shared_ptr<const learners::QuantileRegressor> regressor, double alpha, std::size_t train_size,
                   std::string statistic, bool degenerate = false)
      : regressor_(std::move(regressor)),
        alpha_(alpha),
        train_size_(train_size),
        statistic_(std::move(statistic)),
        degenerate_(degenerate) {}

  double alpha() const noexcept { return alpha_; }
  std::size_t train_size() const noexcept { return train_size_; }
  const std::string& statistic() const noexcept { return statistic_; }
  bool degenerate() const noexcept { return degenerate_; }
  const learners::QuantileRegressor& regressor() const { return *regressor_; }

  double cutoff(std::span<const double> theta) const { return regressor_->predict(theta); }

  /// Composite null: inf over the grid points spanning Theta_0.
  double composite_cutoff(std::span<const ParamPoint> null_grid) const {
    if (null_grid.empty()) throw std::invalid_argument("composite_cutoff: empty null grid");
    double c = std::numeric_limits<double>::infinity();
    for (const auto& t : null_grid) c = std::min(c, cutoff(t.span()));
    return c;
  }

  nlohmann::json to_json() const {
    return {{"alpha", alpha_},
            {"train_size", train_size_},
            {"statistic", statistic_},
            {"degenerate", degenerate_},
            {"regressor", regressor_->to_json()}};
  }

  static CalibrationModel from_json(const nlohmann::json& j) {
    return CalibrationModel(learners::load_quantile(j.at("regressor")), j.at("alpha").get<double>(),
                            j.at("train_size").get<std::size_t>(), j.at("statistic").get<std::string>(),
                            j.at("degenerate").get<bool>());
  }

 private:
  std::shared_ptr<const learners::QuantileRegressor> regressor_;
  double alpha_ = 0.1;
  std::size_t train_size_ = 0;
  std::string statistic_;
  bool degenerate_ = false;
};

/// Fit the alpha-quantile of lambda on the target coordinates of a table.
inline CalibrationModel fit_critical_values(const SimulationTable& table, const StatisticEvaluator& stat,
                                            double alpha, const learners::QuantileSpec& spec, std::uint64_t seed) {
  learners::require_alpha(alpha);
  const bool degenerate =
      std::all_of(table.lambda.begin(), table.lambda.end(), [&](double v) { return v == table.lambda.front(); });
  if (degenerate) std::clog << "warning: statistic is constant over the calibration sample; cutoff is constant\n";
  auto reg = learners::fit_quantile(spec, table.targets, table.lambda, alpha, seed);
  return CalibrationModel(std::move(reg), alpha, table.size(), stat.name(), degenerate);
}

template <ParamSampler Sampler>
CalibrationModel estimate_critical_values(const Simulator& sim, const Sampler& prop, const StatisticEvaluator& stat,
                                          std::size_t train_size, std::size_t n, double alpha,
                                          const learners::QuantileSpec& spec, std::uint64_t seed) {
  if (train_size < 100) throw std::invalid_argument("estimate_critical_values: B' must be at least 100");
  learners::require_alpha(alpha);
  const SimulationTable table = simulate_statistics(sim, prop, stat, train_size, n, seed, streams::kCalibration);
  return fit_critical_values(table, stat, alpha, spec, seed);
}

/// Per-grid-point empirical alpha-quantile of lambda(D; theta0) from
/// `draws_per_point` fresh datasets at each theta0 (the Monte Carlo oracle).
inline std::vector<double> mc_critical_values(const Simulator& sim, std::span<const ParamPoint> grid,
                                              const StatisticEvaluator& stat, double alpha,
                                              std::size_t draws_per_point, std::size_t n, std::uint64_t seed) {
  if (draws_per_point < 100) throw std::invalid_argument("mc_critical_values: at least 100 draws per point");
  learners::require_alpha(alpha);
  std::vector<double> out(grid.size());
  parallel_for(grid.size(), [&](std::size_t g) {
    std::vector<double> lam(draws_per_point);
    for (std::size_t r = 0; r < draws_per_point; ++r) {
      Engine rng = make_engine(seed, streams::kMonteCarlo + g * draws_per_point + r);
      const Dataset D = sim.sample(grid[g], n, rng);
      lam[r] = stat.evaluate(D, project(grid[g], stat.target_dims()));
    }
    out[g] = learners::sample_quantile(lam, alpha);
  });
  return out;
}

struct ChiSquareCutoff {
  double raw = 0.0;       // chi^2_{dof, 1 - alpha}
  double lr_scale = 0.0;  // -raw / 2, comparable with log-likelihood-ratio statistics
};

inline ChiSquareCutoff chi2_cutoff(double alpha, unsigned dof) {
  if (dof < 1) throw std::invalid_argument("chi2_cutoff: dof must be at least 1");
  learners::require_alpha(alpha);
  boost::math::chi_squared_distribution<double> chi(static_cast<double>(dof));
  const double q = boost::math::quantile(chi, 1.0 - alpha);
  return {q, -0.5 * q};
}

/// p-value surface p(D_obs; theta) for one observed dataset.
/// p-value surface for one observed dataset. Either a regression of Z on
/// theta, or the conditional CDF of lambda given theta from the table,
/// evaluated at lambda(D_obs; theta).
class PValueModel {
 public:
  PValueModel() = default;
  PValueModel(std::shared_ptr<const learners::MeanRegressor> regressor, std::size_t train_size, std::string statistic)
      : regressor_(std::move(regressor)), train_size_(train_size), statistic_(std::move(statistic)) {}
  PValueModel(std::shared_ptr<const learners::LocalBinQuantile> cdf, StatisticEvaluator stat, Dataset observed,
              std::size_t train_size)
      : cdf_(std::move(cdf)),
        stat_(std::make_shared<const StatisticEvaluator>(std::move(stat))),
        observed_(std::move(observed)),
        train_size_(train_size),
        statistic_(stat_->name()) {}

  std::size_t train_size() const noexcept { return train_size_; }
  const std::string& statistic() const noexcept { return statistic_; }
  std::string method() const { return cdf_ ? "conditional_cdf" : regressor_->kind(); }
  bool has_regressor() const noexcept { return regressor_ != nullptr; }
  const learners::MeanRegressor& regressor() const {
    if (!regressor_) throw std::logic_error("PValueModel: conditional-CDF model has no mean regressor");
    return *regressor_;
  }

  double pvalue(std::span<const double> theta) const {
    if (cdf_) {
      const ParamPoint t(std::vector<double>(theta.begin(), theta.end()));
      return cdf_->cdf_below(theta, stat_->evaluate(observed_, t));
    }
    return std::clamp(regressor_->predict(theta), 0.0, 1.0);
  }

  /// Composite null: sup over the grid points spanning Theta_0.
  double composite_pvalue(std::span<const ParamPoint> null_grid) const {
    if (null_grid.empty()) throw std::invalid_argument("composite_pvalue: empty null grid");
    double p = 0.0;
    for (const auto& t : null_grid) p = std::max(p, pvalue(t.span()));
    return p;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"train_size", train_size_}, {"statistic", statistic_}, {"method", method()}};
    if (cdf_)
      j["neighbours"] = cdf_->neighbours();
    else
      j["regressor"] = regressor_->to_json();
    return j;
  }

 private:
  std::shared_ptr<const learners::MeanRegressor> regressor_;
  std::shared_ptr<const learners::LocalBinQuantile> cdf_;
  std::shared_ptr<const StatisticEvaluator> stat_;
  Dataset observed_;
  std::size_t train_size_ = 0;
  std::string statistic_;
};

/// Z_i = 1{lambda_i < lambda(D_obs; theta_i)} regressed on theta_i. The table
/// may be shared across observed datasets; only this regression is per-D_obs.
/// With spec.kind == "conditional_cdf" the nearest-neighbour law of lambda
/// around theta is used instead, queried at lambda(D_obs; theta).
inline PValueModel estimate_pvalues(const Dataset& observed, const SimulationTable& table,
                                    const StatisticEvaluator& stat, const learners::MeanSpec& spec,
                                    std::uint64_t seed) {
  if (spec.kind == "conditional_cdf") {
    auto cdf = std::make_shared<const learners::LocalBinQuantile>(
        learners::LocalBinQuantile::fit(table.targets, table.lambda, 0.5, spec.neighbours));
    return PValueModel(std::move(cdf), stat, observed, table.size());
  }
  const auto targets = table.target_points();
  const auto obs = stat.evaluate_many(observed, targets);
  std::vector<double> z(table.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = table.lambda[i] < obs[i] ? 1.0 : 0.0;
  auto reg = learners::fit_mean(spec, table.targets, z, seed);
  return PValueModel(std::move(reg), table.size(), stat.name());
}

template <ParamSampler Sampler>
PValueModel estimate_pvalues(const Dataset& observed, const Simulator& sim, const Sampler& prop,
                             const StatisticEvaluator& stat, std::size_t train_size, std::size_t n,
                             const learners::MeanSpec& spec, std::uint64_t seed) {
  if (train_size < 100) throw std::invalid_argument("estimate_pvalues: B' must be at least 100");
  const SimulationTable table = simulate_statistics(sim, prop, stat, train_size, n, seed, streams::kPValue);
  return estimate_pvalues(observed, table, stat, spec, seed);
}

}  // namespace lf2i
