#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lf2i/calibration.hpp"
#include "lf2i/odds.hpp"
#include "lf2i/param_space.hpp"
#include "lf2i/statistics.hpp"

namespace lf2i {

/// Confidence set stored as an explicit mask over a grid.
struct ConfidenceSet {
  enum class Mode { CriticalValue, PValue };

  std::vector<ParamPoint> grid;
  std::vector<char> accepted;
  std::vector<double> stats;       // lambda (critical-value mode) or p-value
  std::vector<double> thresholds;  // cutoff (critical-value mode) or alpha
  double alpha = 0.1;
  Mode mode = Mode::CriticalValue;
  bool approximate = false;  // hybrid nuisance handling

  std::size_t count() const { return static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), 1)); }
  double fraction() const { return grid.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(grid.size()); }

  /// [min, max] of accepted points for a one-dimensional grid.
  std::optional<std::pair<double, double>> hull() const {
    if (grid.empty() || grid.front().size() != 1) throw std::logic_error("ConfidenceSet::hull: needs a 1D grid");
    std::optional<std::pair<double, double>> h;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (!accepted[j]) continue;
      const double v = grid[j][0];
      if (!h) h = std::make_pair(v, v);
      h->first = std::min(h->first, v);
      h->second = std::max(h->second, v);
    }
    return h;
  }

  /// Interval summary {phi_lo, phi_hi, length_pct} relative to [lo, hi].
  nlohmann::json interval_summary(double lo, double hi) const {
    const auto h = hull();
    if (!h) return {{"phi_lo", nullptr}, {"phi_hi", nullptr}, {"length_pct", 0.0}, {"approximate", approximate}};
    return {{"phi_lo", h->first},
            {"phi_hi", h->second},
            {"length_pct", 100.0 * (h->second - h->first) / (hi - lo)},
            {"approximate", approximate}};
  }

  void write_csv(std::ostream& os) const {
    const std::size_t d = grid.empty() ? 0 : grid.front().size();
    for (std::size_t k = 0; k < d; ++k) os << "theta_" << k << ',';
    os << "accepted,lambda," << (mode == Mode::CriticalValue ? "c_hat" : "p_hat") << '\n';
    os.precision(17);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      for (std::size_t k = 0; k < d; ++k) os << grid[j][k] << ',';
      if (mode == Mode::CriticalValue)
        os << int(accepted[j]) << ',' << stats[j] << ',' << thresholds[j] << '\n';
      else
        os << int(accepted[j]) << ",," << stats[j] << '\n';
    }
  }
};

/// Accept theta_j iff lambda(D; theta_j) >= cutoffs[j].
inline ConfidenceSet invert_with_cutoffs(const StatisticEvaluator& stat, const Dataset& observed,
                                         std::vector<ParamPoint> grid, std::vector<double> cutoffs, double alpha) {
  if (grid.empty()) throw std::invalid_argument("invert: empty grid");
  if (cutoffs.size() != grid.size()) throw std::invalid_argument("invert: one cutoff per grid point required");
  ConfidenceSet cs;
  cs.stats = stat.evaluate_many(observed, grid);
  cs.grid = std::move(grid);
  cs.thresholds = std::move(cutoffs);
  cs.accepted.resize(cs.grid.size());
  for (std::size_t j = 0; j < cs.grid.size(); ++j) cs.accepted[j] = cs.stats[j] >= cs.thresholds[j];
  cs.alpha = alpha;
  cs.approximate = stat.hybrid();
  return cs;
}

/// Neyman inversion with amortized critical values.
inline ConfidenceSet invert(const StatisticEvaluator& stat, const CalibrationModel& calib, const Dataset& observed,
                            std::vector<ParamPoint> grid) {
  if (calib.statistic() != stat.name())
    throw std::invalid_argument("invert: calibration fitted for '" + calib.statistic() + "', statistic is '" +
                                stat.name() + "'");
  if (grid.empty()) throw std::invalid_argument("invert: empty grid");
  std::vector<double> cut(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) cut[j] = calib.cutoff(grid[j].span());
  return invert_with_cutoffs(stat, observed, std::move(grid), std::move(cut), calib.alpha());
}

/// p-value mode: accept theta_j iff p(D; theta_j) > alpha.
inline ConfidenceSet invert(const PValueModel& pvalues, std::vector<ParamPoint> grid, double alpha) {
  if (grid.empty()) throw std::invalid_argument("invert: empty grid");
  ConfidenceSet cs;
  cs.mode = ConfidenceSet::Mode::PValue;
  cs.alpha = alpha;
  cs.grid = std::move(grid);
  cs.stats.resize(cs.grid.size());
  cs.thresholds.assign(cs.grid.size(), alpha);
  cs.accepted.resize(cs.grid.size());
  for (std::size_t j = 0; j < cs.grid.size(); ++j) {
    cs.stats[j] = pvalues.pvalue(cs.grid[j].span());
    cs.accepted[j] = cs.stats[j] > alpha;
  }
  cs.approximate = pvalues.statistic().rfind("h-", 0) == 0;
  return cs;
}

struct NuisanceProfile {
  ParamPoint phi;
  ParamPoint psi_hat;
  double log_odds_sum = 0.0;
};

/// psi_hat(phi) = argmax over the psi grid of sum_i log O(x_i; (phi, psi)).
inline NuisanceProfile profile_nuisance(const OddsModel& odds, const Dataset& observed, const ParamPoint& phi,
                                        std::span<const ParamPoint> psi_grid) {
  const ParamSpace& space = odds.space();
  if (!space.has_nuisance()) throw std::invalid_argument("profile_nuisance: space has no nuisance dims");
  if (psi_grid.empty()) throw std::invalid_argument("profile_nuisance: empty nuisance grid");
  std::vector<ParamPoint> full(psi_grid.size());
  for (std::size_t j = 0; j < psi_grid.size(); ++j) full[j] = space.combine(phi.span(), psi_grid[j].span());
  const auto S = odds.sum_log_odds(observed, full);
  const auto best = static_cast<std::size_t>(std::max_element(S.begin(), S.end()) - S.begin());
  return {phi, psi_grid[best], S[best]};
}

inline std::vector<NuisanceProfile> profile_nuisance(const OddsModel& odds, const Dataset& observed,
                                                     std::span<const ParamPoint> phi_grid,
                                                     std::span<const ParamPoint> psi_grid) {
  std::vector<NuisanceProfile> out(phi_grid.size());
  parallel_for(phi_grid.size(), [&](std::size_t k) { out[k] = profile_nuisance(odds, observed, phi_grid[k], psi_grid); });
  return out;
}

/// Proposal pi'(phi, psi) = U(Phi) x delta at psi_hat of the nearest profiled phi.
class ProfiledProposal {
 public:
  ProfiledProposal(const ParamSpace& space, std::vector<NuisanceProfile> profiles)
      : space_(space), phi_prop_(UniformProposal(space).marginal(space.interest_dims())), profiles_(std::move(profiles)) {
    if (profiles_.empty()) throw std::invalid_argument("ProfiledProposal: no profiles");
    for (const auto& p : profiles_) phi_grid_.push_back(p.phi);
  }

  ParamPoint operator()(Engine& rng) const {
    const ParamPoint phi = phi_prop_(rng);
    const std::size_t k = nearest_index(phi_grid_, phi.span());
    return space_.combine(phi.span(), profiles_[k].psi_hat.span());
  }

 private:
  ParamSpace space_;
  UniformProposal phi_prop_;
  std::vector<NuisanceProfile> profiles_;
  std::vector<ParamPoint> phi_grid_;
};

/// h-ACORE style cutoffs: calibrate under pi' built from D_obs profiles; the
/// quantile regression is on phi only.
inline CalibrationModel hybrid_critical_values(const Simulator& sim, std::vector<NuisanceProfile> profiles,
                                               const StatisticEvaluator& stat, std::size_t train_size,
                                               std::size_t n, double alpha, const learners::QuantileSpec& spec,
                                               std::uint64_t seed) {
  if (!sim.space().has_nuisance()) return estimate_critical_values(sim, UniformProposal(sim.space()), stat, train_size, n, alpha, spec, seed);
  ProfiledProposal prop(sim.space(), std::move(profiles));
  return estimate_critical_values(sim, prop, stat, train_size, n, alpha, spec, seed);
}

/// h-BFF style cutoffs: calibration draws span all of Theta, the quantile
/// regression is on phi only. Does not depend on D_obs.
inline CalibrationModel marginal_critical_values(const Simulator& sim, const UniformProposal& prop,
                                                 const StatisticEvaluator& stat, std::size_t train_size,
                                                 std::size_t n, double alpha, const learners::QuantileSpec& spec,
                                                 std::uint64_t seed) {
  return estimate_critical_values(sim, prop, stat, train_size, n, alpha, spec, seed);
}

/// Hybrid p-values for one D_obs under the profiled proposal.
inline PValueModel hybrid_pvalues(const Dataset& observed, const Simulator& sim, std::vector<NuisanceProfile> profiles,
                                  const StatisticEvaluator& stat, std::size_t train_size, std::size_t n,
                                  const learners::MeanSpec& spec, std::uint64_t seed) {
  if (!sim.space().has_nuisance())
    return estimate_pvalues(observed, sim, UniformProposal(sim.space()), stat, train_size, n, spec, seed);
  ProfiledProposal prop(sim.space(), std::move(profiles));
  return estimate_pvalues(observed, sim, prop, stat, train_size, n, spec, seed);
}

}  // namespace lf2i
