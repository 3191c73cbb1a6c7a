#pragma once

#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lf2i/calibration.hpp"
#include "lf2i/core/parallel.hpp"
#include "lf2i/learners/spec.hpp"
#include "lf2i/simulators.hpp"
#include "lf2i/statistics.hpp"

namespace lf2i {

enum class CoverageLabel { UC, CC, OC };

inline const char* to_string(CoverageLabel l) {
  switch (l) {
    case CoverageLabel::UC: return "UC";
    case CoverageLabel::CC: return "CC";
    case CoverageLabel::OC: return "OC";
  }
  return "?";
}

inline CoverageLabel label_for(double lo, double hi, double nominal) {
  if (hi < nominal) return CoverageLabel::UC;
  if (lo > nominal) return CoverageLabel::OC;
  return CoverageLabel::CC;
}

struct CoverageReport {
  std::vector<ParamPoint> grid;
  std::vector<double> mean, lo, hi;
  std::vector<CoverageLabel> labels;
  double nominal = 0.9;
  std::size_t train_size = 0;
  double mean_indicator = 0.0;  // average W over the diagnostic sample

  void write_csv(std::ostream& os) const {
    const std::size_t d = grid.empty() ? 0 : grid.front().size();
    for (std::size_t k = 0; k < d; ++k) os << "theta_" << k << ',';
    os << "mean,lo,hi,label\n";
    os.precision(17);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      for (std::size_t k = 0; k < d; ++k) os << grid[j][k] << ',';
      os << mean[j] << ',' << lo[j] << ',' << hi[j] << ',' << to_string(labels[j]) << '\n';
    }
  }
};

struct RegionFractions {
  double uc = 0.0, cc = 0.0, oc = 0.0;  // percentages
};

inline RegionFractions classify_regions(const CoverageReport& report, double nominal) {
  if (report.grid.empty()) throw std::invalid_argument("classify_regions: empty report");
  RegionFractions f;
  for (std::size_t j = 0; j < report.grid.size(); ++j) {
    switch (label_for(report.lo[j], report.hi[j], nominal)) {
      case CoverageLabel::UC: f.uc += 1; break;
      case CoverageLabel::CC: f.cc += 1; break;
      case CoverageLabel::OC: f.oc += 1; break;
    }
  }
  const double m = static_cast<double>(report.grid.size());
  f.uc *= 100.0 / m;
  f.cc *= 100.0 / m;
  f.oc *= 100.0 / m;
  return f;
}

inline nlohmann::json summary_json(const CoverageReport& r) {
  const auto f = classify_regions(r, r.nominal);
  return {{"nominal", r.nominal},
          {"train_size", r.train_size},
          {"mean_indicator", r.mean_indicator},
          {"UC_pct", f.uc},
          {"CC_pct", f.cc},
          {"OC_pct", f.oc}};
}

/// Regress coverage indicators W_i on target coordinates and evaluate the
/// fitted surface with its band on the report grid.
inline CoverageReport coverage_from_indicators(const Matrix& targets, std::span<const double> w,
                                               std::vector<ParamPoint> report_grid, double nominal,
                                               const learners::MeanSpec& spec, std::uint64_t seed) {
  auto reg = learners::fit_mean(spec, targets, w, seed);
  CoverageReport r;
  r.nominal = nominal;
  r.train_size = w.size();
  for (double v : w) r.mean_indicator += v;
  r.mean_indicator /= static_cast<double>(w.size());
  r.grid = std::move(report_grid);
  for (const auto& t : r.grid) {
    const auto b = reg->band(t.span());
    r.mean.push_back(b.mean);
    r.lo.push_back(b.lo);
    r.hi.push_back(b.hi);
    r.labels.push_back(label_for(b.lo, b.hi, nominal));
  }
  return r;
}

/// Coverage diagnostics for an arbitrary acceptance rule
/// accept(D, target) -> bool. Draws (theta'_i, D'_i) from `prop`.
template <ParamSampler Sampler, class Accept>
CoverageReport estimate_coverage(const Simulator& sim, const Sampler& prop, const std::vector<std::size_t>& target_dims,
                                 Accept&& accept, std::size_t train_size, std::size_t n, double nominal,
                                 std::vector<ParamPoint> report_grid, const learners::MeanSpec& spec,
                                 std::uint64_t seed) {
  if (train_size < 100) throw std::invalid_argument("estimate_coverage: B'' must be at least 100");
  Matrix targets(train_size, target_dims.size());
  std::vector<double> w(train_size);
  parallel_for(train_size, [&](std::size_t i) {
    Engine rng = make_engine(seed, streams::kCoverage + i);
    const ParamPoint theta = prop(rng);
    const Dataset D = sim.sample(theta, n, rng);
    const ParamPoint target = project(theta, target_dims);
    std::copy(target.begin(), target.end(), targets.row(i).begin());
    w[i] = accept(D, target) ? 1.0 : 0.0;
  });
  return coverage_from_indicators(targets, w, std::move(report_grid), nominal, spec, seed);
}

/// Coverage of the critical-value rule lambda(D; theta) >= cutoff(theta).
template <ParamSampler Sampler, class Cutoff>
CoverageReport estimate_coverage(const Simulator& sim, const Sampler& prop, const StatisticEvaluator& stat,
                                 Cutoff&& cutoff, std::size_t train_size, std::size_t n, double alpha,
                                 std::vector<ParamPoint> report_grid, const learners::MeanSpec& spec,
                                 std::uint64_t seed) {
  auto accept = [&](const Dataset& D, const ParamPoint& target) {
    return stat.evaluate(D, target) >= cutoff(target.span());
  };
  return estimate_coverage(sim, prop, stat.target_dims(), accept, train_size, n, 1.0 - alpha,
                           std::move(report_grid), spec, seed);
}

template <ParamSampler Sampler>
CoverageReport estimate_coverage(const Simulator& sim, const Sampler& prop, const StatisticEvaluator& stat,
                                 const CalibrationModel& calib, std::size_t train_size, std::size_t n,
                                 std::vector<ParamPoint> report_grid, const learners::MeanSpec& spec,
                                 std::uint64_t seed) {
  auto cutoff = [&](std::span<const double> t) { return calib.cutoff(t); };
  return estimate_coverage(sim, prop, stat, cutoff, train_size, n, calib.alpha(), std::move(report_grid), spec, seed);
}

}  // namespace lf2i
