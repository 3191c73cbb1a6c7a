#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "lf2i/calibration.hpp"
#include "lf2i/simulators.hpp"
#include "lf2i/statistics.hpp"
#include "oracles.hpp"

using namespace lf2i;

namespace {

constexpr double kAlpha = 0.1;

// lambda = x_1 - theta_1 for one MVG draw: N(0,1) whatever theta is.
StatisticEvaluator standard_normal_stat(std::vector<std::size_t> dims = {0, 1}) {
  return StatisticEvaluator::external("centred", std::move(dims),
                                      [](const Dataset& D, std::span<const double> t) { return D.row(0)[0] - t[0]; });
}

// P(lambda <= q) = e^q for lambda = -chi2_2 / 2, so the density at the
// alpha-quantile log(alpha) is alpha.
double lrt2_quantile_se(std::size_t draws) { return std::sqrt(kAlpha * (1 - kAlpha) / draws) / kAlpha; }

}  // namespace

TEST(ChiSquareCutoff, TableValues) {
  EXPECT_NEAR(chi2_cutoff(0.1, 1).raw, 2.7055, 1e-4);
  EXPECT_NEAR(chi2_cutoff(0.1, 2).raw, 4.6052, 1e-4);
  EXPECT_NEAR(chi2_cutoff(0.1, 2).raw, -2.0 * std::log(0.1), 1e-10);
  EXPECT_DOUBLE_EQ(chi2_cutoff(0.1, 2).lr_scale, -0.5 * chi2_cutoff(0.1, 2).raw);
  for (unsigned d : {1u, 3u, 7u})
    for (double a : {0.01, 0.05, 0.32}) EXPECT_NEAR(chi2_cutoff(a, d).raw, oracle::chi2_quantile(1 - a, d), 1e-6);
}

TEST(ChiSquareCutoff, LimitAndErrors) {
  EXPECT_NEAR(chi2_cutoff(1.0 - 1e-9, 1).lr_scale, 0.0, 1e-12);
  EXPECT_THROW(chi2_cutoff(0.1, 0), std::invalid_argument);
  EXPECT_THROW(chi2_cutoff(0.0, 1), std::invalid_argument);
  EXPECT_THROW(chi2_cutoff(1.0, 1), std::invalid_argument);
}

TEST(CriticalValues, ConstantStatisticGivesConstantCutoff) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::external("const", {0}, [](const Dataset&, std::span<const double>) { return -1.7; });
  for (const char* kind : {"gbt", "local_bin"}) {
    learners::QuantileSpec spec;
    spec.kind = kind;
    const auto c = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 200, 1, kAlpha, spec, 1);
    EXPECT_TRUE(c.degenerate());
    for (double t = -5.0; t <= 5.0; t += 0.5) EXPECT_DOUBLE_EQ(c.cutoff(std::vector<double>{t}), -1.7) << kind;
  }
  const auto mc = mc_critical_values(sim, ParamSpace::cube(1, -5, 5, 5).interest_grid(), stat, kAlpha, 100, 1, 2);
  for (double v : mc) EXPECT_DOUBLE_EQ(v, -1.7);
}

TEST(CriticalValues, StandardNormalStatisticIsFlat) {
  MultivariateGaussian sim(2);
  const auto c = estimate_critical_values(sim, UniformProposal(sim.space()), standard_normal_stat(), 5000, 1, kAlpha,
                                          learners::QuantileSpec{}, 3);
  const double z = oracle::normal_quantile(kAlpha);
  EXPECT_NEAR(z, -1.2816, 1e-4);
  for (const auto& t : ParamSpace::cube(2, -5, 5, 11).interest_grid()) EXPECT_NEAR(c.cutoff(t.span()), z, 0.05);
}

TEST(CriticalValues, ExactLrtMatchesChiSquare) {
  MultivariateGaussian sim(2);
  const auto stat = StatisticEvaluator::exact_lrt(2);
  const auto c = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 5000, 10, kAlpha,
                                          learners::QuantileSpec{}, 4);
  EXPECT_EQ(c.statistic(), "exact_lrt");
  EXPECT_EQ(c.train_size(), 5000u);
  for (const auto& t : ParamSpace::cube(2, -5, 5, 11).interest_grid()) EXPECT_NEAR(c.cutoff(t.span()), -2.3026, 0.1);
}

TEST(CriticalValues, MonteCarloCutoffsMatchChiSquare) {
  MultivariateGaussian sim(2);
  const auto grid = ParamSpace::cube(2, -4, 4, 5).interest_grid();
  const auto mc = mc_critical_values(sim, grid, StatisticEvaluator::exact_lrt(2), kAlpha, 1000, 10, 5);
  ASSERT_EQ(mc.size(), 25u);
  for (double v : mc) EXPECT_NEAR(v, std::log(kAlpha), 4 * lrt2_quantile_se(1000));
}

TEST(CriticalValues, AgreesWithMonteCarloOracle) {
  MultivariateGaussian sim(2);
  const auto stat = StatisticEvaluator::exact_lrt(2);
  const auto grid = ParamSpace::cube(2, -4, 4, 5).interest_grid();
  const auto c = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 5000, 10, kAlpha,
                                          learners::QuantileSpec{}, 6);
  const auto mc = mc_critical_values(sim, grid, stat, kAlpha, 1000, 10, 7);
  std::size_t close = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) close += std::abs(c.cutoff(grid[g].span()) - mc[g]) < 3 * lrt2_quantile_se(1000);
  EXPECT_GE(close, static_cast<std::size_t>(std::ceil(0.9 * grid.size())));
}

TEST(CriticalValues, TypeOneErrorWithinBinomialBand) {
  MultivariateGaussian sim(2);
  const auto stat = StatisticEvaluator::exact_lrt(2);
  const auto c = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 5000, 10, kAlpha,
                                          learners::QuantileSpec{}, 8);
  const auto nulls = ParamSpace::cube(2, -4, 4, 4).midpoint_grid(4);
  const int reps = 1000;
  const double sigma = std::sqrt(kAlpha * (1 - kAlpha) / reps);
  for (std::size_t k = 0; k < 10; ++k) {
    const ParamPoint& t0 = nulls[k];
    const double cut = c.cutoff(t0.span());
    int reject = 0;
    for (int r = 0; r < reps; ++r) reject += stat.evaluate(sample_forward(sim, t0, 10, 10000 * (k + 1) + r), t0) < cut;
    EXPECT_NEAR(static_cast<double>(reject) / reps, kAlpha, 2 * sigma) << "theta0 index " << k;
  }
}

TEST(CriticalValues, GmmAcoreWithinMonteCarloBand) {
  auto sim = std::make_shared<GaussianMixture1D>();
  const UniformProposal prop(sim->space());
  auto odds = std::make_shared<OddsModel>(OddsModel::oracle(sim, prop));
  const auto stat = StatisticEvaluator::acore(odds, sim->space().full_grid(501));
  const auto c = estimate_critical_values(*sim, prop, stat, 5000, 10, kAlpha, learners::QuantileSpec{}, 9);
  const auto grid = sim->space().full_grid(21);
  // 99% order-statistic interval for the 0.1-quantile of 1000 draws.
  const int draws = 1000;
  const double half = 2.5758 * std::sqrt(draws * kAlpha * (1 - kAlpha));
  const auto lo_rank = static_cast<std::size_t>(std::floor(draws * kAlpha - half)) - 1;
  const auto hi_rank = static_cast<std::size_t>(std::ceil(draws * kAlpha + half)) - 1;
  std::size_t inside = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> lam(draws);
    for (int r = 0; r < draws; ++r) lam[r] = stat.evaluate(sample_forward(*sim, grid[g], 10, 500000 + g * draws + r), grid[g]);
    std::sort(lam.begin(), lam.end());
    const double cut = c.cutoff(grid[g].span());
    const bool ok = cut >= lam[lo_rank] && cut <= lam[hi_rank];
    inside += ok;
    EXPECT_TRUE(ok) << "theta " << grid[g][0] << " cutoff " << cut << " band [" << lam[lo_rank] << ", " << lam[hi_rank]
                    << "]";
  }
  std::printf("GMM cutoffs inside MC band: %zu / %zu\n", inside, grid.size());
}

TEST(CriticalValues, CompositeCutoffAndSerialization) {
  MultivariateGaussian sim(1);
  const auto c = estimate_critical_values(sim, UniformProposal(sim.space()), standard_normal_stat({0}), 500, 1, kAlpha,
                                          learners::QuantileSpec{}, 10);
  const std::vector<ParamPoint> nulls{ParamPoint{-1.0}, ParamPoint{0.0}, ParamPoint{2.0}};
  double mn = 1e300;
  for (const auto& t : nulls) mn = std::min(mn, c.cutoff(t.span()));
  EXPECT_DOUBLE_EQ(c.composite_cutoff(nulls), mn);
  EXPECT_THROW(c.composite_cutoff({}), std::invalid_argument);
  const auto back = CalibrationModel::from_json(nlohmann::json::parse(c.to_json().dump()));
  for (double t = -5.0; t <= 5.0; t += 0.25)
    EXPECT_EQ(back.cutoff(std::vector<double>{t}), c.cutoff(std::vector<double>{t}));
  EXPECT_EQ(back.alpha(), kAlpha);
}

TEST(CriticalValues, ArgumentErrors) {
  MultivariateGaussian sim(1);
  const UniformProposal prop(sim.space());
  const auto stat = StatisticEvaluator::exact_lrt(1);
  EXPECT_THROW(estimate_critical_values(sim, prop, stat, 99, 1, kAlpha, learners::QuantileSpec{}, 1), std::invalid_argument);
  EXPECT_THROW(estimate_critical_values(sim, prop, stat, 100, 1, 1.5, learners::QuantileSpec{}, 1), std::invalid_argument);
  EXPECT_THROW(mc_critical_values(sim, sim.space().interest_grid(), stat, kAlpha, 99, 1, 1), std::invalid_argument);
}

TEST(PValues, ObservedBelowEverySimulatedGivesZero) {
  MultivariateGaussian sim(1);
  const UniformProposal prop(sim.space());
  // Simulated lambda >= 0; observed lambda = -10.
  const auto stat = StatisticEvaluator::external("sign", {0}, [](const Dataset& D, std::span<const double>) {
    return D.row(0)[0] > 100.0 ? -10.0 : std::abs(D.row(0)[0]);
  });
  Matrix obs(1, 1);
  obs(0, 0) = 200.0;
  for (const char* kind : {"conditional_cdf", "gbt", "logistic_spline"}) {
    learners::MeanSpec spec;
    spec.kind = kind;
    const auto p = estimate_pvalues(Dataset(obs), sim, prop, stat, 500, 1, spec, 11);
    for (double t = -5.0; t <= 5.0; t += 0.5) EXPECT_NEAR(p.pvalue(std::vector<double>{t}), 0.0, 1e-9) << kind;
  }
}

TEST(PValues, UniformUnderNull) {
  MultivariateGaussian sim(1);
  const UniformProposal prop(sim.space());
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto table = simulate_statistics(sim, prop, stat, 5000, 10, 12);
  learners::MeanSpec spec;
  spec.kind = "conditional_cdf";
  const ParamPoint t0{0.5};
  std::vector<double> p(500);
  for (std::size_t r = 0; r < p.size(); ++r)
    p[r] = estimate_pvalues(sample_forward(sim, t0, 10, 3000 + r), table, stat, spec, 13).pvalue(t0.span());
  EXPECT_GT(oracle::ks_uniform(p).pvalue, 0.01);
  for (double v : p) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(PValues, AgreeWithCriticalValueTest) {
  MultivariateGaussian sim(1);
  const UniformProposal prop(sim.space());
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto table = simulate_statistics(sim, prop, stat, 5000, 10, 14);
  const auto calib = fit_critical_values(table, stat, kAlpha, learners::QuantileSpec{}, 15);
  learners::MeanSpec spec;
  spec.kind = "conditional_cdf";
  const auto nulls = ParamSpace::cube(1, -4, 4, 9).interest_grid();
  std::size_t agree = 0, total = 0;
  for (std::size_t r = 0; r < 100; ++r) {
    const ParamPoint truth{-4.0 + 0.08 * r};
    const Dataset D = sample_forward(sim, truth, 10, 7000 + r);
    const auto pm = estimate_pvalues(D, table, stat, spec, 16);
    for (const auto& t0 : nulls) {
      const bool by_p = pm.pvalue(t0.span()) <= kAlpha;
      const bool by_c = stat.evaluate(D, t0) < calib.cutoff(t0.span());
      agree += by_p == by_c;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(agree) / total, 0.95);
}

TEST(PValues, CompositeIsSupremum) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto table = simulate_statistics(sim, UniformProposal(sim.space()), stat, 1000, 10, 17);
  learners::MeanSpec spec;
  spec.kind = "conditional_cdf";
  const auto pm = estimate_pvalues(sample_forward(sim, ParamPoint{1.0}, 10, 18), table, stat, spec, 19);
  const std::vector<ParamPoint> nulls{ParamPoint{-2.0}, ParamPoint{0.9}, ParamPoint{3.0}};
  double mx = 0.0;
  for (const auto& t : nulls) mx = std::max(mx, pm.pvalue(t.span()));
  EXPECT_DOUBLE_EQ(pm.composite_pvalue(nulls), mx);
  EXPECT_EQ(pm.method(), "conditional_cdf");
  EXPECT_THROW(pm.regressor(), std::logic_error);
}
