#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "lf2i/core/rng.hpp"
#include "lf2i/core/types.hpp"

namespace lf2i {

/// Box-bounded parameter space with an interest/nuisance split.
class ParamSpace {
 public:
  ParamSpace() = default;

  ParamSpace(std::vector<double> lower, std::vector<double> upper,
             std::vector<std::size_t> interest_dims = {},
             std::vector<std::size_t> nuisance_dims = {},
             std::size_t grid_points_per_dim = 51)
      : lower_(std::move(lower)),
        upper_(std::move(upper)),
        interest_(std::move(interest_dims)),
        nuisance_(std::move(nuisance_dims)),
        grid_points_(grid_points_per_dim) {
    if (lower_.empty() || lower_.size() != upper_.size())
      throw std::invalid_argument("ParamSpace: bounds must be non-empty and of equal length");
    for (std::size_t i = 0; i < lower_.size(); ++i)
      if (!(lower_[i] < upper_[i]))
        throw std::invalid_argument("ParamSpace: lower < upper required in every dimension");
    if (interest_.empty() && nuisance_.empty()) {
      interest_.resize(lower_.size());
      std::iota(interest_.begin(), interest_.end(), std::size_t{0});
    }
    std::set<std::size_t> seen;
    for (auto d : interest_) seen.insert(d);
    for (auto d : nuisance_)
      if (!seen.insert(d).second)
        throw std::invalid_argument("ParamSpace: interest and nuisance dims overlap");
    if (seen.size() != lower_.size() || *seen.rbegin() != lower_.size() - 1)
      throw std::invalid_argument("ParamSpace: interest and nuisance dims must cover 0..dims-1");
    if (grid_points_ == 0) throw std::invalid_argument("ParamSpace: grid_points_per_dim must be positive");
  }

  /// Convenience: [lo, hi]^d with every dimension of interest.
  static ParamSpace cube(std::size_t d, double lo, double hi, std::size_t grid_points = 51) {
    return ParamSpace(std::vector<double>(d, lo), std::vector<double>(d, hi), {}, {}, grid_points);
  }

  std::size_t dims() const noexcept { return lower_.size(); }
  const std::vector<double>& lower() const noexcept { return lower_; }
  const std::vector<double>& upper() const noexcept { return upper_; }
  const std::vector<std::size_t>& interest_dims() const noexcept { return interest_; }
  const std::vector<std::size_t>& nuisance_dims() const noexcept { return nuisance_; }
  bool has_nuisance() const noexcept { return !nuisance_.empty(); }
  std::size_t grid_points_per_dim() const noexcept { return grid_points_; }

  double volume(std::span<const std::size_t> dims) const {
    double v = 1.0;
    for (auto d : dims) v *= upper_[d] - lower_[d];
    return v;
  }

  bool contains(std::span<const double> theta, double tol = 1e-12) const {
    if (theta.size() != dims()) return false;
    for (std::size_t i = 0; i < dims(); ++i)
      if (theta[i] < lower_[i] - tol || theta[i] > upper_[i] + tol) return false;
    return true;
  }

  void require(std::span<const double> theta) const {
    if (theta.size() != dims()) {
      std::ostringstream os;
      os << "parameter has " << theta.size() << " coordinates, space has " << dims();
      throw std::domain_error(os.str());
    }
    if (!contains(theta)) throw std::domain_error("parameter outside the parameter space box");
  }

  /// Assemble a full point from interest coordinates and nuisance coordinates.
  ParamPoint combine(std::span<const double> phi, std::span<const double> psi) const {
    if (phi.size() != interest_.size() || psi.size() != nuisance_.size())
      throw std::invalid_argument("ParamSpace::combine: coordinate count mismatch");
    ParamPoint out(std::vector<double>(dims(), 0.0));
    for (std::size_t k = 0; k < interest_.size(); ++k) out[interest_[k]] = phi[k];
    for (std::size_t k = 0; k < nuisance_.size(); ++k) out[nuisance_[k]] = psi[k];
    return out;
  }

  /// Regular grid with `points` nodes per listed dim, endpoints included.
  /// Returned points contain only the listed coordinates, in listed order.
  std::vector<ParamPoint> grid_over(std::span<const std::size_t> dims, std::size_t points) const {
    return lattice(dims, points, false);
  }

  /// Interest-parameter evaluation grid: grid_points_per_dim^|interest| points.
  std::vector<ParamPoint> interest_grid() const { return grid_over(interest_, grid_points_); }
  std::vector<ParamPoint> nuisance_grid(std::size_t points) const { return grid_over(nuisance_, points); }

  std::vector<ParamPoint> full_grid(std::size_t points) const {
    std::vector<std::size_t> all(dims());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return grid_over(all, points);
  }

  /// Cell-centred (midpoint rule) grid over all dims: `points` cells per dim.
  std::vector<ParamPoint> midpoint_grid(std::size_t points) const {
    std::vector<std::size_t> all(dims());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return lattice(all, points, true);
  }

 private:
  std::vector<ParamPoint> lattice(std::span<const std::size_t> dims, std::size_t points,
                                  bool midpoint) const {
    if (points == 0) throw std::invalid_argument("grid: points must be positive");
    std::vector<ParamPoint> out;
    if (dims.empty()) {
      out.emplace_back();
      return out;
    }
    std::size_t total = 1;
    for (std::size_t k = 0; k < dims.size(); ++k) total *= points;
    out.reserve(total);
    std::vector<std::size_t> idx(dims.size(), 0);
    const double np = static_cast<double>(points);
    for (std::size_t t = 0; t < total; ++t) {
      ParamPoint p(std::vector<double>(dims.size()));
      for (std::size_t k = 0; k < dims.size(); ++k) {
        const double lo = lower_[dims[k]], hi = upper_[dims[k]];
        const double j = static_cast<double>(idx[k]);
        if (midpoint)
          p[k] = lo + (hi - lo) * (j + 0.5) / np;
        else
          p[k] = points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * j / (np - 1.0);
      }
      out.push_back(std::move(p));
      for (std::size_t k = dims.size(); k-- > 0;) {
        if (++idx[k] < points) break;
        idx[k] = 0;
      }
    }
    return out;
  }

  std::vector<double> lower_, upper_;
  std::vector<std::size_t> interest_, nuisance_;
  std::size_t grid_points_ = 51;
};

/// Uniform proposal distribution over an axis-aligned box.
class UniformProposal {
 public:
  UniformProposal() = default;
  UniformProposal(std::vector<double> lower, std::vector<double> upper)
      : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.empty() || lower_.size() != upper_.size())
      throw std::invalid_argument("UniformProposal: bad bounds");
    for (std::size_t i = 0; i < lower_.size(); ++i)
      if (!(lower_[i] < upper_[i]))
        throw std::invalid_argument("UniformProposal: zero-width or inverted box");
  }
  explicit UniformProposal(const ParamSpace& space) : UniformProposal(space.lower(), space.upper()) {}

  std::size_t dims() const noexcept { return lower_.size(); }
  const std::vector<double>& lower() const noexcept { return lower_; }
  const std::vector<double>& upper() const noexcept { return upper_; }

  ParamPoint operator()(Engine& rng) const {
    ParamPoint p{std::vector<double>(dims())};
    for (std::size_t i = 0; i < dims(); ++i)
      p[i] = std::uniform_real_distribution<double>(lower_[i], upper_[i])(rng);
    return p;
  }

  double log_density(std::span<const double> theta) const {
    double lv = 0.0;
    for (std::size_t i = 0; i < dims(); ++i) {
      if (theta[i] < lower_[i] || theta[i] > upper_[i])
        return -std::numeric_limits<double>::infinity();
      lv += std::log(upper_[i] - lower_[i]);
    }
    return -lv;
  }
  double density(std::span<const double> theta) const { return std::exp(log_density(theta)); }

  /// Restriction to a sub-box, renormalized (the restricted proposals of the
  /// Bayes-factor numerator and denominator).
  UniformProposal restrict(std::vector<double> lower, std::vector<double> upper) const {
    for (std::size_t i = 0; i < dims(); ++i) {
      lower[i] = std::max(lower[i], lower_[i]);
      upper[i] = std::min(upper[i], upper_[i]);
    }
    return UniformProposal(std::move(lower), std::move(upper));
  }

  /// Marginal proposal over a subset of coordinates.
  UniformProposal marginal(std::span<const std::size_t> dims) const {
    std::vector<double> lo, hi;
    for (auto d : dims) {
      lo.push_back(lower_[d]);
      hi.push_back(upper_[d]);
    }
    return UniformProposal(std::move(lo), std::move(hi));
  }

 private:
  std::vector<double> lower_, upper_;
};

/// Anything that draws parameter points from an Engine.
template <class S>
concept ParamSampler = requires(const S& s, Engine& rng) {
  { s(rng) } -> std::convertible_to<ParamPoint>;
};

/// Index of the grid point closest (Euclidean) to `p`.
inline std::size_t nearest_index(std::span<const ParamPoint> grid, std::span<const double> p) {
  if (grid.empty()) throw std::invalid_argument("nearest_index: empty grid");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double d = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double t = grid[j][k] - p[k];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

}  // namespace lf2i
