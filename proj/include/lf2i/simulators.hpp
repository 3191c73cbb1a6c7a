#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "lf2i/core/parallel.hpp"
#include "lf2i/core/rng.hpp"
#include "lf2i/core/types.hpp"
#include "lf2i/param_space.hpp"

namespace lf2i {

namespace detail {

inline double log_normal_pdf(double z) {
  return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// log P(lo < Z < hi) for standard normal Z, accurate in both tails.
inline double log_normal_interval(double lo, double hi) {
  if (!(lo < hi)) return -std::numeric_limits<double>::infinity();
  const double s = 1.0 / std::numbers::sqrt2;
  double p;
  if (lo > 0.0)
    p = 0.5 * (std::erfc(lo * s) - std::erfc(hi * s));
  else if (hi < 0.0)
    p = 0.5 * (std::erfc(-hi * s) - std::erfc(-lo * s));
  else
    p = 1.0 - 0.5 * std::erfc(-lo * s) - 0.5 * std::erfc(hi * s);
  return std::log(p);
}

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Full Gauss-Legendre rule on [-1, 1] expanded from Boost's half-rule tables.
template <unsigned N>
std::pair<std::vector<double>, std::vector<double>> gauss_legendre_rule() {
  using Rule = boost::math::quadrature::gauss<double, N>;
  const auto& x = Rule::abscissa();
  const auto& w = Rule::weights();
  std::vector<double> nodes, weights;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] == 0.0) {
      nodes.push_back(0.0);
      weights.push_back(w[k]);
    } else {
      nodes.push_back(x[k]);
      weights.push_back(w[k]);
      nodes.push_back(-x[k]);
      weights.push_back(w[k]);
    }
  }
  return {nodes, weights};
}

}  // namespace detail

/// Stochastic forward model F_theta. Implementations are stateless after
/// construction, so one instance may be shared by many threads.
class Simulator {
 public:
  explicit Simulator(ParamSpace space) : space_(std::move(space)) {}
  virtual ~Simulator() = default;

  virtual std::string name() const = 0;
  virtual std::size_t obs_dim() const = 0;

  /// Draw a single observation into `out` (length obs_dim()).
  virtual void draw(std::span<const double> theta, Engine& rng, std::span<double> out) const = 0;

  /// Analytic log density of one observation, when the model has one.
  virtual bool has_density() const { return false; }
  virtual double log_density(std::span<const double> /*x*/, std::span<const double> /*theta*/) const {
    throw std::logic_error(name() + ": no analytic density");
  }

  /// log of the marginal density of one observation under a uniform proposal.
  virtual double log_marginal(std::span<const double> /*x*/, const UniformProposal& /*prop*/) const {
    throw std::logic_error(name() + ": no analytic marginal");
  }

  const ParamSpace& space() const noexcept { return space_; }
  std::size_t param_dim() const noexcept { return space_.dims(); }

  /// n i.i.d. rows from F_theta using the caller's engine.
  Dataset sample(const ParamPoint& theta, std::size_t n, Engine& rng) const {
    space_.require(theta.span());
    if (n == 0) throw std::invalid_argument("sample: n must be positive");
    Dataset d(n, obs_dim());
    for (std::size_t i = 0; i < n; ++i) draw(theta.span(), rng, d.row(i));
    return d;
  }

 private:
  ParamSpace space_;
};

/// X ~ w N(theta, 1) + (1 - w) N(-theta, 1), theta in [0, 5] by default.
class GaussianMixture1D final : public Simulator {
 public:
  explicit GaussianMixture1D(double weight = 0.5, ParamSpace space = ParamSpace::cube(1, 0.0, 5.0, 51))
      : Simulator(std::move(space)), weight_(weight) {
    if (!(weight_ > 0.0 && weight_ < 1.0))
      throw std::invalid_argument("GaussianMixture1D: mixing weight must be in (0,1)");
    if (this->space().dims() != 1) throw std::invalid_argument("GaussianMixture1D: 1-D parameter");
  }

  std::string name() const override { return "gmm"; }
  std::size_t obs_dim() const override { return 1; }
  double weight() const noexcept { return weight_; }

  void draw(std::span<const double> theta, Engine& rng, std::span<double> out) const override {
    const bool first = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < weight_;
    const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
    out[0] = (first ? theta[0] : -theta[0]) + z;
  }

  bool has_density() const override { return true; }
  double log_density(std::span<const double> x, std::span<const double> theta) const override {
    return detail::log_add_exp(std::log(weight_) + detail::log_normal_pdf(x[0] - theta[0]),
                               std::log1p(-weight_) + detail::log_normal_pdf(x[0] + theta[0]));
  }

  double log_marginal(std::span<const double> x, const UniformProposal& prop) const override {
    const double a = prop.lower()[0], b = prop.upper()[0];
    const double plus = std::log(weight_) + detail::log_normal_interval(a - x[0], b - x[0]);
    const double minus = std::log1p(-weight_) + detail::log_normal_interval(x[0] + a, x[0] + b);
    return detail::log_add_exp(plus, minus) - std::log(b - a);
  }

 private:
  double weight_;
};

/// X ~ N(theta, I_d).
class MultivariateGaussian final : public Simulator {
 public:
  explicit MultivariateGaussian(std::size_t d, double lo = -5.0, double hi = 5.0)
      : MultivariateGaussian(ParamSpace::cube(d, lo, hi, d <= 2 ? 51 : 25)) {}
  explicit MultivariateGaussian(ParamSpace space) : Simulator(std::move(space)) {}

  std::string name() const override { return "mvg"; }
  std::size_t obs_dim() const override { return param_dim(); }

  void draw(std::span<const double> theta, Engine& rng, std::span<double> out) const override {
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = theta[j] + z(rng);
  }

  bool has_density() const override { return true; }
  double log_density(std::span<const double> x, std::span<const double> theta) const override {
    double q = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) q += (x[j] - theta[j]) * (x[j] - theta[j]);
    return -0.5 * q - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
  }

  /// Product of per-coordinate normal interval probabilities over the box.
  double log_marginal(std::span<const double> x, const UniformProposal& prop) const override {
    double l = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double a = prop.lower()[j], b = prop.upper()[j];
      l += detail::log_normal_interval(a - x[j], b - x[j]) - std::log(b - a);
    }
    return l;
  }
};

/// Counting experiment with a control region: X = (M, N),
/// M ~ Pois(gamma b), N ~ Pois(b + eps s), theta = (s, b, eps).
class PoissonCounting final : public Simulator {
 public:
  static ParamSpace default_space(std::size_t grid_points = 51) {
    return ParamSpace({0.0, 90.0, 0.5}, {20.0, 110.0, 1.0}, {0}, {1, 2}, grid_points);
  }

  explicit PoissonCounting(double gamma = 1.0, ParamSpace space = default_space())
      : Simulator(std::move(space)), gamma_(gamma) {
    if (!(gamma_ > 0.0)) throw std::invalid_argument("PoissonCounting: gamma must be positive");
    if (this->space().dims() != 3) throw std::invalid_argument("PoissonCounting: theta = (s, b, eps)");
  }

  std::string name() const override { return "poisson"; }
  std::size_t obs_dim() const override { return 2; }
  double gamma() const noexcept { return gamma_; }

  void draw(std::span<const double> theta, Engine& rng, std::span<double> out) const override {
    const double s = theta[0], b = theta[1], eps = theta[2];
    out[0] = static_cast<double>(std::poisson_distribution<long>(gamma_ * b)(rng));
    const double rate = b + eps * s;
    out[1] = rate > 0.0 ? static_cast<double>(std::poisson_distribution<long>(rate)(rng)) : 0.0;
  }

  bool has_density() const override { return true; }
  double log_density(std::span<const double> x, std::span<const double> theta) const override {
    const double s = theta[0], b = theta[1], eps = theta[2];
    const double m = x[0], n = x[1];
    const double mu_m = gamma_ * b, mu_n = b + eps * s;
    return m * std::log(mu_m) - mu_m - std::lgamma(m + 1.0) + n * std::log(mu_n) - mu_n -
           std::lgamma(n + 1.0);
  }

  /// Tensor Gauss-Legendre quadrature of the density over the proposal box.
  double log_marginal(std::span<const double> x, const UniformProposal& prop) const override {
    static const auto rule = detail::gauss_legendre_rule<30>();
    const auto& [nodes, weights] = rule;
    double acc = -std::numeric_limits<double>::infinity();
    std::array<double, 3> th{};
    auto map = [&](std::size_t d, double u) {
      return 0.5 * (prop.lower()[d] + prop.upper()[d]) + 0.5 * (prop.upper()[d] - prop.lower()[d]) * u;
    };
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      th[0] = map(0, nodes[i]);
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        th[1] = map(1, nodes[j]);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          th[2] = map(2, nodes[k]);
          const double lw = std::log(weights[i] * weights[j] * weights[k] / 8.0);
          acc = detail::log_add_exp(acc, lw + log_density(x, th));
        }
      }
    }
    return acc;
  }

 private:
  double gamma_;
};

/// Draw n rows from F_theta, reproducible under `seed`.
inline Dataset sample_forward(const Simulator& sim, const ParamPoint& theta, std::size_t n,
                              std::uint64_t seed) {
  Engine rng = make_engine(seed, streams::kObserved);
  return sim.sample(theta, n, rng);
}

/// Draw theta ~ prop, then X ~ F_theta; returns X (a draw from the marginal).
template <ParamSampler Proposal>
std::vector<double> sample_marginal(const Simulator& sim, const Proposal& prop, Engine& rng) {
  const ParamPoint theta = prop(rng);
  std::vector<double> x(sim.obs_dim());
  sim.draw(theta.span(), rng, x);
  return x;
}

template <ParamSampler Proposal>
std::vector<double> sample_marginal(const Simulator& sim, const Proposal& prop, std::uint64_t seed) {
  Engine rng = make_engine(seed);
  return sample_marginal(sim, prop, rng);
}

/// Reference distribution G of the odds classification problem.
/// The marginal F_X is the default; a uniform box in observation space is
/// available as an alternative.
struct ReferenceDistribution {
  enum class Kind { Marginal, UniformBox };
  Kind kind = Kind::Marginal;
  std::vector<double> lower, upper;  // observation-space box for UniformBox

  static ReferenceDistribution marginal() { return {}; }
  static ReferenceDistribution uniform(std::vector<double> lo, std::vector<double> hi) {
    return {Kind::UniformBox, std::move(lo), std::move(hi)};
  }

  template <ParamSampler Proposal>
  std::vector<double> draw(const Simulator& sim, const Proposal& prop, Engine& rng) const {
    if (kind == Kind::Marginal) return sample_marginal(sim, prop, rng);
    std::vector<double> x(lower.size());
    for (std::size_t j = 0; j < x.size(); ++j)
      x[j] = std::uniform_real_distribution<double>(lower[j], upper[j])(rng);
    return x;
  }
};

struct LabeledExample {
  ParamPoint theta;
  std::vector<double> x;
  int y = 0;  // 1: x ~ F_theta, 0: x ~ G
};

/// Labeled sample T = {(theta_i, X_i, Y_i)} for odds estimation.
template <ParamSampler Proposal>
std::vector<LabeledExample> generate_labeled_sample(
    const Simulator& sim, const Proposal& prop, std::size_t B, double p, std::uint64_t seed,
    const ReferenceDistribution& reference = ReferenceDistribution::marginal()) {
  if (B == 0) throw std::invalid_argument("generate_labeled_sample: B must be positive");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("generate_labeled_sample: p must be in (0,1)");
  std::vector<LabeledExample> out(B);
  parallel_for(B, [&](std::size_t i) {
    Engine rng = make_engine(seed, streams::kLabeled + i);
    LabeledExample& ex = out[i];
    ex.theta = prop(rng);
    ex.y = std::bernoulli_distribution(p)(rng) ? 1 : 0;
    if (ex.y == 1) {
      ex.x.resize(sim.obs_dim());
      sim.draw(ex.theta.span(), rng, ex.x);
    } else {
      ex.x = reference.draw(sim, prop, rng);
    }
  });
  return out;
}

/// Flatten labeled examples into (theta, x) features and labels.
inline std::pair<Matrix, std::vector<int>> to_features(const std::vector<LabeledExample>& examples) {
  if (examples.empty()) return {};
  const std::size_t cols = examples.front().theta.size() + examples.front().x.size();
  Matrix X(examples.size(), cols);
  std::vector<int> y(examples.size());
  std::vector<double> buf;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    joint_features(examples[i].theta.span(), examples[i].x, buf);
    std::copy(buf.begin(), buf.end(), X.row(i).begin());
    y[i] = examples[i].y;
  }
  return {std::move(X), std::move(y)};
}

}  // namespace lf2i
