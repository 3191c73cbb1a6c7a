#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lf2i/core/types.hpp"
#include "lf2i/odds.hpp"
#include "lf2i/param_space.hpp"
#include "lf2i/simulators.hpp"

namespace lf2i {

/// max + log sum exp(v - max).
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_mean_exp(std::span<const double> v) {
  return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

/// -(n/2) ||xbar - theta0||^2.
inline double exact_lrt_mvg(const Dataset& D, std::span<const double> theta0) {
  const auto xbar = D.mean();
  double s = 0.0;
  for (std::size_t j = 0; j < xbar.size(); ++j) s += (xbar[j] - theta0[j]) * (xbar[j] - theta0[j]);
  return -0.5 * static_cast<double>(D.size()) * s;
}

/// log of N(xbar; theta0, I/n) / prod_j [ (1/(b-a)) P(a < N(xbar_j, 1/n) < b) ].
inline double exact_bf_mvg(const Dataset& D, std::span<const double> theta0, double a, double b) {
  const auto xbar = D.mean();
  const double n = static_cast<double>(D.size());
  const double rn = std::sqrt(n);
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < xbar.size(); ++j) {
    num += detail::log_normal_pdf(rn * (xbar[j] - theta0[j])) + std::log(rn);
    den += detail::log_normal_interval(rn * (a - xbar[j]), rn * (b - xbar[j])) - std::log(b - a);
  }
  return num - den;
}

enum class StatisticKind { ACORE, BFF, ExactLRT_MVG, ExactBF_MVG, External };

inline std::string to_string(StatisticKind k) {
  switch (k) {
    case StatisticKind::ACORE: return "acore";
    case StatisticKind::BFF: return "bff";
    case StatisticKind::ExactLRT_MVG: return "exact_lrt";
    case StatisticKind::ExactBF_MVG: return "exact_bf";
    case StatisticKind::External: return "external";
  }
  return "unknown";
}

/// Uniform contract lambda(D; theta0) over estimated and exact statistics.
///
/// ACORE and BFF evaluate over `grid` (all parameter dims). When built with a
/// nuisance grid, theta0 holds interest coordinates only: ACORE profiles the
/// numerator over psi (h-ACORE) and BFF averages it over psi (h-BFF).
class StatisticEvaluator {
 public:
  using ExternalFn = std::function<double(const Dataset&, std::span<const double>)>;

  enum class Denominator { Riemann, MonteCarlo };

  static StatisticEvaluator acore(std::shared_ptr<const OddsModel> odds, std::vector<ParamPoint> grid,
                                  std::vector<ParamPoint> psi_grid = {}) {
    return from_odds(StatisticKind::ACORE, std::move(odds), std::move(grid), std::move(psi_grid));
  }

  static StatisticEvaluator bff(std::shared_ptr<const OddsModel> odds, std::vector<ParamPoint> grid,
                                std::vector<ParamPoint> psi_grid = {}) {
    return from_odds(StatisticKind::BFF, std::move(odds), std::move(grid), std::move(psi_grid));
  }

  /// BFF whose denominator averages over m fresh proposal draws (fixed at
  /// construction) instead of the evaluation grid.
  static StatisticEvaluator bff_monte_carlo(std::shared_ptr<const OddsModel> odds, const UniformProposal& prop,
                                            std::size_t m, std::uint64_t seed,
                                            std::vector<ParamPoint> psi_grid = {}) {
    if (m == 0) throw std::invalid_argument("bff_monte_carlo: m must be positive");
    Engine rng = make_engine(seed, streams::kMonteCarlo);
    std::vector<ParamPoint> draws;
    draws.reserve(m);
    for (std::size_t j = 0; j < m; ++j) draws.push_back(prop(rng));
    auto s = from_odds(StatisticKind::BFF, std::move(odds), std::move(draws), std::move(psi_grid));
    s.denominator_ = Denominator::MonteCarlo;
    return s;
  }

  static StatisticEvaluator exact_lrt(std::size_t d) {
    StatisticEvaluator s;
    s.kind_ = StatisticKind::ExactLRT_MVG;
    s.target_.resize(d);
    std::iota(s.target_.begin(), s.target_.end(), std::size_t{0});
    return s;
  }

  static StatisticEvaluator exact_bf(std::size_t d, double a, double b) {
    StatisticEvaluator s = exact_lrt(d);
    s.kind_ = StatisticKind::ExactBF_MVG;
    s.box_lo_ = a;
    s.box_hi_ = b;
    return s;
  }

  static StatisticEvaluator external(std::string name, std::vector<std::size_t> target_dims, ExternalFn fn) {
    StatisticEvaluator s;
    s.kind_ = StatisticKind::External;
    s.name_ = std::move(name);
    s.target_ = std::move(target_dims);
    s.fn_ = std::move(fn);
    return s;
  }

  StatisticKind kind() const noexcept { return kind_; }
  std::string name() const {
    if (kind_ == StatisticKind::External) return name_;
    std::string n = to_string(kind_);
    return hybrid() ? "h-" + n : n;
  }
  bool hybrid() const noexcept { return !psi_grid_.empty(); }
  Denominator denominator_mode() const noexcept { return denominator_; }
  /// Coordinates of theta0 expected by evaluate().
  const std::vector<std::size_t>& target_dims() const noexcept { return target_; }
  const std::vector<ParamPoint>& grid() const noexcept { return grid_; }
  const std::vector<ParamPoint>& psi_grid() const noexcept { return psi_grid_; }
  const OddsModel* odds() const noexcept { return odds_.get(); }

  /// Toggle the n = 1 shortcut that replaces the BFF denominator with
  /// log(p/(1-p)) when the odds were trained against the marginal.
  void set_denominator_identity(bool on) noexcept { denominator_identity_ = on; }

  double evaluate(const Dataset& D, const ParamPoint& theta0) const {
    return evaluate_many(D, std::span<const ParamPoint>(&theta0, 1)).front();
  }

  /// lambda(D; theta0_k) for every k, sharing the denominator work.
  std::vector<double> evaluate_many(const Dataset& D, std::span<const ParamPoint> theta0s) const {
    if (D.size() == 0) throw std::invalid_argument("statistic: empty dataset");
    for (const auto& t : theta0s)
      if (t.size() != target_.size())
        throw std::invalid_argument("statistic: theta0 has " + std::to_string(t.size()) + " coordinates, expected " +
                                    std::to_string(target_.size()));
    std::vector<double> out(theta0s.size());
    switch (kind_) {
      case StatisticKind::ExactLRT_MVG:
        for (std::size_t k = 0; k < theta0s.size(); ++k) out[k] = exact_lrt_mvg(D, theta0s[k].span());
        return out;
      case StatisticKind::ExactBF_MVG:
        for (std::size_t k = 0; k < theta0s.size(); ++k)
          out[k] = exact_bf_mvg(D, theta0s[k].span(), box_lo_, box_hi_);
        return out;
      case StatisticKind::External:
        for (std::size_t k = 0; k < theta0s.size(); ++k) out[k] = fn_(D, theta0s[k].span());
        return out;
      case StatisticKind::ACORE:
      case StatisticKind::BFF:
        break;
    }
    const std::vector<double> num = numerators(D, theta0s);
    if (kind_ == StatisticKind::ACORE) {
      const auto S = odds_->sum_log_odds(D, grid_);
      const double max_grid = *std::max_element(S.begin(), S.end());
      for (std::size_t k = 0; k < num.size(); ++k) out[k] = num[k] - std::max(max_grid, num[k]);
    } else {
      const double den = bff_log_denominator(D);
      for (std::size_t k = 0; k < num.size(); ++k) out[k] = num[k] - den;
    }
    return out;
  }

  /// log[(1/m) sum_j prod_i O(x_i; theta_j)] over the grid (or MC draws).
  double bff_log_denominator(const Dataset& D) const {
    if (kind_ != StatisticKind::BFF) throw std::logic_error("bff_log_denominator: not a BFF evaluator");
    if (denominator_identity_ && D.size() == 1 && odds_->marginal_reference()) return odds_->log_prior_odds();
    const auto S = odds_->sum_log_odds(D, grid_);
    return log_mean_exp(S);
  }

 private:
  static StatisticEvaluator from_odds(StatisticKind kind, std::shared_ptr<const OddsModel> odds,
                                      std::vector<ParamPoint> grid, std::vector<ParamPoint> psi_grid) {
    if (!odds) throw std::invalid_argument("statistic: null odds model");
    if (grid.empty()) throw std::invalid_argument("statistic: empty evaluation grid");
    const ParamSpace& space = odds->space();
    for (const auto& t : grid) space.require(t.span());
    StatisticEvaluator s;
    s.kind_ = kind;
    s.odds_ = std::move(odds);
    s.grid_ = std::move(grid);
    s.psi_grid_ = std::move(psi_grid);
    if (s.psi_grid_.empty()) {
      s.target_.resize(space.dims());
      std::iota(s.target_.begin(), s.target_.end(), std::size_t{0});
    } else {
      if (!space.has_nuisance()) throw std::invalid_argument("statistic: nuisance grid given but space has none");
      for (const auto& psi : s.psi_grid_)
        if (psi.size() != space.nuisance_dims().size())
          throw std::invalid_argument("statistic: nuisance grid point has wrong dimension");
      s.target_ = space.interest_dims();
    }
    return s;
  }

  std::vector<double> numerators(const Dataset& D, std::span<const ParamPoint> theta0s) const {
    if (!hybrid()) return odds_->sum_log_odds(D, theta0s);
    const ParamSpace& space = odds_->space();
    std::vector<double> out(theta0s.size());
    std::vector<ParamPoint> full(psi_grid_.size());
    for (std::size_t k = 0; k < theta0s.size(); ++k) {
      for (std::size_t j = 0; j < psi_grid_.size(); ++j) full[j] = space.combine(theta0s[k].span(), psi_grid_[j].span());
      const auto S = odds_->sum_log_odds(D, full);
      out[k] = kind_ == StatisticKind::ACORE ? *std::max_element(S.begin(), S.end()) : log_mean_exp(S);
    }
    return out;
  }

  StatisticKind kind_ = StatisticKind::External;
  std::string name_;
  std::shared_ptr<const OddsModel> odds_;
  std::vector<ParamPoint> grid_;
  std::vector<ParamPoint> psi_grid_;
  std::vector<std::size_t> target_;
  Denominator denominator_ = Denominator::Riemann;
  bool denominator_identity_ = true;
  double box_lo_ = -5.0, box_hi_ = 5.0;
  ExternalFn fn_;
};

/// BFF by direct products of odds (no log space); overflows for large n.
inline double bff_direct(const OddsModel& odds, const Dataset& D, const ParamPoint& theta0,
                         std::span<const ParamPoint> grid) {
  auto prod = [&](const ParamPoint& t) {
    double v = 1.0;
    for (std::size_t i = 0; i < D.size(); ++i) v *= odds.odds(D.row(i), t.span());
    return v;
  };
  double den = 0.0;
  for (const auto& t : grid) den += prod(t);
  den /= static_cast<double>(grid.size());
  return prod(theta0) / den;
}

/// Monte Carlo estimate of (1/m) sum_j O(x; theta_j), theta_j ~ prop, with its
/// standard error. Equals p/(1-p) in expectation when G is the marginal.
inline McEstimate mc_bff_denominator(const OddsModel& odds, std::span<const double> x, const UniformProposal& prop,
                                     std::size_t m, std::uint64_t seed) {
  if (m < 2) throw std::invalid_argument("mc_bff_denominator: m must be at least 2");
  Engine rng = make_engine(seed, streams::kMonteCarlo);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const ParamPoint t = prop(rng);
    const double o = odds.odds(x, t.span());
    sum += o;
    sum2 += o * o;
  }
  const double md = static_cast<double>(m);
  const double mean = sum / md;
  const double var = std::max(0.0, (sum2 - md * mean * mean) / (md - 1.0));
  return {mean, std::sqrt(var / md)};
}

}  // namespace lf2i
