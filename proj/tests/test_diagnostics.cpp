#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lf2i/calibration.hpp"
#include "lf2i/diagnostics.hpp"
#include "lf2i/learners/spec.hpp"
#include "lf2i/simulators.hpp"
#include "lf2i/statistics.hpp"
#include "oracles.hpp"

using namespace lf2i;

namespace {

constexpr double kAlpha = 0.1;

learners::MeanSpec spline() {
  learners::MeanSpec s;
  s.kind = "logistic_spline";
  return s;
}

CoverageReport hand_report(std::vector<double> lo, std::vector<double> hi) {
  CoverageReport r;
  for (std::size_t j = 0; j < lo.size(); ++j) {
    r.grid.push_back(ParamPoint{double(j)});
    r.mean.push_back(0.5 * (lo[j] + hi[j]));
  }
  r.lo = std::move(lo);
  r.hi = std::move(hi);
  return r;
}

}  // namespace

TEST(Labels, ThresholdsAgainstNominal) {
  EXPECT_EQ(label_for(0.80, 0.89, 0.9), CoverageLabel::UC);
  EXPECT_EQ(label_for(0.91, 0.99, 0.9), CoverageLabel::OC);
  EXPECT_EQ(label_for(0.85, 0.95, 0.9), CoverageLabel::CC);
  EXPECT_EQ(label_for(0.90, 0.90, 0.9), CoverageLabel::CC);
  EXPECT_STREQ(to_string(CoverageLabel::OC), "OC");
}

TEST(Labels, RegionPercentages) {
  const auto r = hand_report({0.80, 0.85, 0.92, 0.88}, {0.89, 0.95, 0.99, 0.91});
  const auto f = classify_regions(r, 0.9);
  EXPECT_DOUBLE_EQ(f.uc, 25.0);
  EXPECT_DOUBLE_EQ(f.cc, 50.0);
  EXPECT_DOUBLE_EQ(f.oc, 25.0);
  EXPECT_DOUBLE_EQ(f.uc + f.cc + f.oc, 100.0);
  const auto g = classify_regions(r, 0.5);
  EXPECT_DOUBLE_EQ(g.oc, 100.0);
  EXPECT_THROW(classify_regions(CoverageReport{}, 0.9), std::invalid_argument);
}

TEST(Coverage, HugeNegativeCutoffCoversEverywhere) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  auto cutoff = [](std::span<const double>) { return -1e300; };
  const auto r = estimate_coverage(sim, UniformProposal(sim.space()), stat, cutoff, 500, 10, kAlpha,
                                   sim.space().interest_grid(), spline(), 1);
  EXPECT_DOUBLE_EQ(r.mean_indicator, 1.0);
  for (std::size_t j = 0; j < r.grid.size(); ++j) {
    EXPECT_DOUBLE_EQ(r.mean[j], 1.0);
    EXPECT_EQ(r.labels[j], CoverageLabel::OC);
  }
  EXPECT_DOUBLE_EQ(classify_regions(r, 0.9).oc, 100.0);
}

TEST(Coverage, ExactLrtWithChiSquareIsMostlyCorrect) {
  MultivariateGaussian sim(2);
  const auto stat = StatisticEvaluator::exact_lrt(2);
  const double c = chi2_cutoff(kAlpha, 2).lr_scale;
  auto cutoff = [c](std::span<const double>) { return c; };
  const auto r = estimate_coverage(sim, UniformProposal(sim.space()), stat, cutoff, 5000, 10, kAlpha,
                                   ParamSpace::cube(2, -5, 5, 11).interest_grid(), spline(), 2);
  EXPECT_GE(classify_regions(r, 0.9).cc, 95.0);
  EXPECT_NEAR(r.mean_indicator, 0.9, 3.0 * std::sqrt(0.09 / 5000));
}

TEST(Coverage, BernoulliIndicatorsAreCorrectlyCovered) {
  const std::size_t n = 4000;
  Matrix T(n, 1);
  std::vector<double> w(n);
  Engine rng = make_engine(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::bernoulli_distribution b(0.9);
  for (std::size_t i = 0; i < n; ++i) {
    T(i, 0) = u(rng);
    w[i] = b(rng);
  }
  const auto r = coverage_from_indicators(T, w, ParamSpace::cube(1, 0, 5, 101).interest_grid(), 0.9, spline(), 4);
  EXPECT_GE(classify_regions(r, 0.9).cc, 90.0);
  for (std::size_t j = 0; j < r.grid.size(); ++j) {
    EXPECT_LE(r.lo[j], r.mean[j]);
    EXPECT_LE(r.mean[j], r.hi[j]);
    EXPECT_GE(r.lo[j], 0.0);
    EXPECT_LE(r.hi[j], 1.0);
  }
}

TEST(Coverage, SurfaceAverageTracksIndicatorMean) {
  // Uniform proposal on the report cube: the grid average of the surface
  // approximates the mean indicator.
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto calib = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 1000, 10, kAlpha,
                                              learners::QuantileSpec{}, 5);
  const auto r = estimate_coverage(sim, UniformProposal(sim.space()), stat, calib, 4000, 10,
                                   ParamSpace::cube(1, -5, 5, 201).interest_grid(), spline(), 6);
  EXPECT_NEAR(oracle::mean(r.mean), r.mean_indicator, 0.02);
}

TEST(Coverage, DoesNotRefitCalibration) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto calib = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 1000, 10, kAlpha,
                                              learners::QuantileSpec{}, 7);
  const auto grid = sim.space().interest_grid();
  std::vector<double> before;
  for (const auto& t : grid) before.push_back(calib.cutoff(t.span()));
  const auto fits = learners::fit_counter().load();
  estimate_coverage(sim, UniformProposal(sim.space()), stat, calib, 500, 10, grid, spline(), 8);
  EXPECT_EQ(learners::fit_counter().load(), fits + 1);
  for (std::size_t j = 0; j < grid.size(); ++j) EXPECT_EQ(calib.cutoff(grid[j].span()), before[j]);
}

TEST(Coverage, DeterministicAndSerializable) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  auto cutoff = [](std::span<const double>) { return -1.35; };
  auto run = [&] {
    return estimate_coverage(sim, UniformProposal(sim.space()), stat, cutoff, 300, 5, kAlpha,
                             sim.space().interest_grid(), spline(), 9);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.lo, b.lo);
  std::ostringstream os;
  a.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "theta_0,mean,lo,hi,label");
  const auto j = summary_json(a);
  EXPECT_EQ(j.at("train_size").get<std::size_t>(), 300u);
  EXPECT_NEAR(j.at("UC_pct").get<double>() + j.at("CC_pct").get<double>() + j.at("OC_pct").get<double>(), 100.0,
              1e-9);
  EXPECT_THROW(estimate_coverage(sim, UniformProposal(sim.space()), stat, cutoff, 99, 5, kAlpha,
                                 sim.space().interest_grid(), spline(), 9),
               std::invalid_argument);
}
