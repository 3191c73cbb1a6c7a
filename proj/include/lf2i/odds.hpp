#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lf2i/core/types.hpp"
#include "lf2i/learners/classifiers.hpp"
#include "lf2i/param_space.hpp"
#include "lf2i/simulators.hpp"

namespace lf2i {

/// Odds O(x; theta) = P(Y=1 | theta, x) / P(Y=0 | theta, x), either from a
/// fitted classifier on joint (theta, x) features or from analytic densities.
class OddsModel {
 public:
  static constexpr double kDefaultClamp = 1e-6;

  OddsModel(std::shared_ptr<const learners::Classifier> classifier, ParamSpace space, double p = 0.5,
            double clamp = kDefaultClamp, bool marginal_reference = true)
      : classifier_(std::move(classifier)),
        space_(std::move(space)),
        p_(p),
        clamp_(clamp),
        marginal_reference_(marginal_reference) {
    if (!classifier_) throw std::invalid_argument("OddsModel: null classifier");
    check_common();
  }

  /// Exact odds (p/(1-p)) f(x|theta) / g(x) with g the marginal under `prop`.
  /// Unclamped (clamp = 0).
  static OddsModel oracle(std::shared_ptr<const Simulator> sim, UniformProposal prop, double p = 0.5) {
    if (!sim || !sim->has_density()) throw std::invalid_argument("OddsModel::oracle: simulator has no density");
    OddsModel m;
    m.space_ = sim->space();
    m.sim_ = std::move(sim);
    m.prop_ = std::move(prop);
    m.p_ = p;
    m.clamp_ = 0.0;
    m.check_common();
    return m;
  }

  bool is_oracle() const noexcept { return sim_ != nullptr; }
  const ParamSpace& space() const noexcept { return space_; }
  double p() const noexcept { return p_; }
  double clamp() const noexcept { return clamp_; }
  double log_prior_odds() const { return std::log(p_ / (1.0 - p_)); }
  bool marginal_reference() const noexcept { return marginal_reference_; }
  std::string describe() const { return is_oracle() ? "oracle:" + sim_->name() : classifier_->kind(); }
  const learners::Classifier* classifier() const noexcept { return classifier_.get(); }

  double log_odds(std::span<const double> x, std::span<const double> theta) const {
    space_.require(theta);
    return is_oracle() ? oracle_log_odds(x, theta, sim_->log_marginal(x, prop_)) : classifier_log_odds(x, theta);
  }
  double odds(std::span<const double> x, std::span<const double> theta) const {
    return std::exp(log_odds(x, theta));
  }
  double probability(std::span<const double> x, std::span<const double> theta) const {
    return learners::sigmoid(log_odds(x, theta));
  }
  double odds_ratio(std::span<const double> x, std::span<const double> theta0,
                    std::span<const double> theta1) const {
    return std::exp(log_odds(x, theta0) - log_odds(x, theta1));
  }

  /// S(theta) = sum_i log O(x_i; theta) for every theta in `thetas`.
  std::vector<double> sum_log_odds(const Dataset& D, std::span<const ParamPoint> thetas) const {
    if (D.size() == 0) throw std::invalid_argument("sum_log_odds: empty dataset");
    for (const auto& t : thetas) space_.require(t.span());
    std::vector<double> out(thetas.size(), 0.0);
    if (is_oracle()) {
      std::vector<double> lg(D.size());
      for (std::size_t i = 0; i < D.size(); ++i) lg[i] = sim_->log_marginal(D.row(i), prop_);
      for (std::size_t j = 0; j < thetas.size(); ++j)
        for (std::size_t i = 0; i < D.size(); ++i) out[j] += oracle_log_odds(D.row(i), thetas[j].span(), lg[i]);
    } else {
      for (std::size_t j = 0; j < thetas.size(); ++j)
        for (std::size_t i = 0; i < D.size(); ++i) out[j] += classifier_log_odds(D.row(i), thetas[j].span());
    }
    return out;
  }

 private:
  OddsModel() = default;

  void check_common() const {
    if (!(p_ > 0.0 && p_ < 1.0)) throw std::invalid_argument("OddsModel: p must be in (0,1)");
    if (!(clamp_ >= 0.0 && clamp_ < 0.5)) throw std::invalid_argument("OddsModel: clamp must be in [0, 0.5)");
  }

  double classifier_log_odds(std::span<const double> x, std::span<const double> theta) const {
    thread_local std::vector<double> buf;
    joint_features(theta, x, buf);
    double t = classifier_->logit(buf);
    if (clamp_ > 0.0) {
      const double bound = std::log1p(-clamp_) - std::log(clamp_);
      t = std::clamp(t, -bound, bound);
    }
    return t;
  }

  double oracle_log_odds(std::span<const double> x, std::span<const double> theta, double log_g) const {
    return log_prior_odds() + sim_->log_density(x, theta) - log_g;
  }

  std::shared_ptr<const learners::Classifier> classifier_;
  std::shared_ptr<const Simulator> sim_;
  UniformProposal prop_;
  ParamSpace space_;
  double p_ = 0.5;
  double clamp_ = kDefaultClamp;
  bool marginal_reference_ = true;
};

/// Mean held-out cross-entropy, computed from log-odds via softplus.
inline double cross_entropy(const OddsModel& model, const std::vector<LabeledExample>& heldout) {
  if (heldout.empty()) throw std::invalid_argument("cross_entropy: empty held-out set");
  double total = 0.0;
  for (const auto& ex : heldout) {
    const double t = model.log_odds(ex.x, ex.theta.span());
    total += ex.y == 1 ? learners::softplus(-t) : learners::softplus(t);
  }
  return total / static_cast<double>(heldout.size());
}

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
};

/// Monte Carlo estimate of the integrated odds loss: mean over x ~ G, theta ~ pi
/// (independent pairs) of (O_a(x;theta) - O_b(x;theta))^2.
inline McEstimate integrated_odds_loss(const OddsModel& a, const OddsModel& b, const Simulator& sim,
                                       const UniformProposal& prop, std::size_t draws, std::uint64_t seed,
                                       const ReferenceDistribution& reference = ReferenceDistribution::marginal()) {
  if (draws < 1000) throw std::invalid_argument("integrated_odds_loss: at least 1000 draws required");
  std::vector<double> sq(draws);
  parallel_for(draws, [&](std::size_t i) {
    Engine rng = make_engine(seed, streams::kLoss + i);
    const std::vector<double> x = reference.draw(sim, prop, rng);
    const ParamPoint theta = prop(rng);
    const double d = a.odds(x, theta.span()) - b.odds(x, theta.span());
    sq[i] = d * d;
  });
  double mean = 0.0;
  for (double v : sq) mean += v;
  mean /= static_cast<double>(draws);
  double var = 0.0;
  for (double v : sq) var += (v - mean) * (v - mean);
  var /= static_cast<double>(draws - 1);
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

struct LossRow {
  std::string classifier;
  std::size_t B = 0;
  double ce_loss = 0.0;
  double odds_loss = 0.0;
  double se = 0.0;
};

inline void to_json(nlohmann::json& j, const LossRow& r) {
  j = {{"classifier", r.classifier}, {"B", r.B}, {"ce_loss", r.ce_loss}, {"odds_loss", r.odds_loss}, {"se", r.se}};
}

}  // namespace lf2i
