#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "lf2i/calibration.hpp"
#include "lf2i/inference.hpp"
#include "lf2i/learners/spec.hpp"
#include "lf2i/simulators.hpp"
#include "lf2i/statistics.hpp"
#include "oracles.hpp"

using namespace lf2i;

namespace {

constexpr double kAlpha = 0.1;

Dataset rows(std::initializer_list<std::vector<double>> r) {
  Matrix X(r.size(), r.begin()->size());
  std::size_t i = 0;
  for (const auto& v : r) {
    for (std::size_t j = 0; j < v.size(); ++j) X(i, j) = v[j];
    ++i;
  }
  return Dataset(X);
}

double poisson_log_pmf(double k, double mu) { return k * std::log(mu) - mu - std::lgamma(k + 1.0); }

}  // namespace

TEST(Invert, HugeNegativeCutoffAcceptsEverything) {
  const auto grid = ParamSpace::cube(2, -5, 5, 11).interest_grid();
  const auto cs = invert_with_cutoffs(StatisticEvaluator::exact_lrt(2), rows({{4.0, -4.0}}), grid,
                                      std::vector<double>(grid.size(), -1e300), kAlpha);
  EXPECT_EQ(cs.count(), grid.size());
  EXPECT_DOUBLE_EQ(cs.fraction(), 1.0);
}

TEST(Invert, ExactLrtWithChiSquareIsDisc) {
  // xbar = (0, 0), n = 10: accept iff ||theta||^2 <= chi2_{2,0.9} / 10.
  Matrix X(10, 2, 0.0);
  X(0, 0) = 0.3;
  X(1, 0) = -0.3;
  X(2, 1) = 0.7;
  X(3, 1) = -0.7;
  const Dataset D(X);
  const auto grid = ParamSpace::cube(2, -5, 5, 51).interest_grid();
  const double cut = chi2_cutoff(kAlpha, 2).lr_scale;
  const auto cs = invert_with_cutoffs(StatisticEvaluator::exact_lrt(2), D, grid, std::vector<double>(grid.size(), cut),
                                      kAlpha);
  const double r2 = oracle::chi2_quantile(1 - kAlpha, 2) / 10.0;
  EXPECT_NEAR(r2, 0.4605, 1e-4);
  std::size_t inside = 0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const bool want = grid[j][0] * grid[j][0] + grid[j][1] * grid[j][1] <= r2;
    EXPECT_EQ(bool(cs.accepted[j]), want) << grid[j][0] << "," << grid[j][1];
    inside += want;
  }
  EXPECT_EQ(cs.count(), inside);
  EXPECT_GT(inside, 0u);
}

TEST(Invert, StatisticMismatchAndEmptyGridRejected) {
  MultivariateGaussian sim(1);
  const auto lrt = StatisticEvaluator::exact_lrt(1);
  const auto calib = estimate_critical_values(sim, UniformProposal(sim.space()), lrt, 200, 5, kAlpha,
                                              learners::QuantileSpec{}, 1);
  const auto bf = StatisticEvaluator::exact_bf(1, -5, 5);
  EXPECT_THROW(invert(bf, calib, rows({{0.0}}), sim.space().interest_grid()), std::invalid_argument);
  EXPECT_THROW(invert(lrt, calib, rows({{0.0}}), {}), std::invalid_argument);
  EXPECT_NO_THROW(invert(lrt, calib, rows({{0.0}}), sim.space().interest_grid()));
}

TEST(Invert, AmortizedOverManyObservations) {
  MultivariateGaussian sim(2);
  const auto stat = StatisticEvaluator::exact_lrt(2);
  const auto calib = estimate_critical_values(sim, UniformProposal(sim.space()), stat, 1000, 10, kAlpha,
                                              learners::QuantileSpec{}, 2);
  const auto grid = ParamSpace::cube(2, -5, 5, 21).interest_grid();
  const auto before = learners::fit_counter().load();
  for (std::uint64_t r = 0; r < 100; ++r) invert(stat, calib, sample_forward(sim, ParamPoint{1.0, -1.0}, 10, 300 + r), grid);
  EXPECT_EQ(learners::fit_counter().load(), before);
}

TEST(Invert, NestedInAlphaForOneLocalBinFamily) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto table = simulate_statistics(sim, UniformProposal(sim.space()), stat, 2000, 10, 3);
  learners::QuantileSpec spec;
  spec.kind = "local_bin";
  const auto c05 = fit_critical_values(table, stat, 0.05, spec, 4);
  const auto c20 = fit_critical_values(table, stat, 0.20, spec, 4);
  const auto grid = ParamSpace::cube(1, -5, 5, 101).interest_grid();
  for (std::uint64_t r = 0; r < 20; ++r) {
    const Dataset D = sample_forward(sim, ParamPoint{0.5}, 10, 400 + r);
    const auto wide = invert(stat, c05, D, grid), narrow = invert(stat, c20, D, grid);
    for (std::size_t j = 0; j < grid.size(); ++j)
      if (narrow.accepted[j]) {
        EXPECT_TRUE(wide.accepted[j]) << "rep " << r << " theta " << grid[j][0];
      }
  }
}

TEST(Invert, OracleAcoreWithMonteCarloCutoffsEqualsExactLrt) {
  auto sim = std::make_shared<MultivariateGaussian>(1);
  auto odds = std::make_shared<OddsModel>(OddsModel::oracle(sim, UniformProposal(sim->space())));
  const auto acore = StatisticEvaluator::acore(odds, ParamSpace::cube(1, -5, 5, 1001).interest_grid());
  const auto lrt = StatisticEvaluator::exact_lrt(1);
  const auto grid = ParamSpace::cube(1, -4, 4, 41).interest_grid();
  const auto mc_acore = mc_critical_values(*sim, grid, acore, kAlpha, 200, 10, 5);
  const auto mc_lrt = mc_critical_values(*sim, grid, lrt, kAlpha, 200, 10, 5);
  for (std::uint64_t r = 0; r < 20; ++r) {
    const Dataset D = sample_forward(*sim, ParamPoint{-1.0 + 0.1 * r}, 10, 500 + r);
    const auto a = invert_with_cutoffs(acore, D, grid, mc_acore, kAlpha);
    const auto b = invert_with_cutoffs(lrt, D, grid, mc_lrt, kAlpha);
    EXPECT_EQ(a.accepted, b.accepted) << "rep " << r;
  }
}

TEST(Invert, QdaAcoreSetsComparableToExactLrt) {
  auto sim = std::make_shared<MultivariateGaussian>(2);
  const UniformProposal prop(sim->space());
  const auto [X, y] = to_features(generate_labeled_sample(*sim, prop, 5000, 0.5, 6));
  auto odds = std::make_shared<OddsModel>(std::make_shared<learners::QDA>(learners::QDA::fit(X, y)), sim->space());
  const auto acore = StatisticEvaluator::acore(odds, ParamSpace::cube(2, -5, 5, 50).interest_grid());
  const auto calib = estimate_critical_values(*sim, prop, acore, 5000, 10, kAlpha, learners::QuantileSpec{}, 7);
  const auto lrt = StatisticEvaluator::exact_lrt(2);
  const auto grid = ParamSpace::cube(2, -5, 5, 51).interest_grid();
  const std::vector<double> chi(grid.size(), chi2_cutoff(kAlpha, 2).lr_scale);
  for (std::uint64_t r = 0; r < 5; ++r) {
    const Dataset D = sample_forward(*sim, ParamPoint{0.5, -0.5}, 10, 600 + r);
    const double a = static_cast<double>(invert(acore, calib, D, grid).count());
    const double b = static_cast<double>(invert_with_cutoffs(lrt, D, grid, chi, kAlpha).count());
    EXPECT_NEAR(a / b, 1.0, 0.5) << "rep " << r << ": " << a << " vs " << b;
  }
}

TEST(Invert, PValueModeAcceptsAboveAlpha) {
  MultivariateGaussian sim(1);
  const auto stat = StatisticEvaluator::exact_lrt(1);
  learners::MeanSpec spec;
  spec.kind = "conditional_cdf";
  const Dataset D = sample_forward(sim, ParamPoint{0.0}, 10, 8);
  const auto pm = estimate_pvalues(D, sim, UniformProposal(sim.space()), stat, 1000, 10, spec, 9);
  const auto grid = sim.space().interest_grid();
  const auto cs = invert(pm, grid, kAlpha);
  EXPECT_EQ(cs.mode, ConfidenceSet::Mode::PValue);
  for (std::size_t j = 0; j < grid.size(); ++j) EXPECT_EQ(bool(cs.accepted[j]), pm.pvalue(grid[j].span()) > kAlpha);
  EXPECT_FALSE(cs.approximate);
  std::ostringstream os;
  cs.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "theta_0,accepted,lambda,p_hat");
}

TEST(ConfidenceSetSummary, HullAndIntervalLength) {
  ConfidenceSet cs;
  for (double v : {0.0, 5.0, 10.0, 15.0, 20.0}) cs.grid.push_back(ParamPoint{v});
  cs.accepted = {0, 1, 0, 1, 0};
  const auto h = cs.hull();
  ASSERT_TRUE(h);
  EXPECT_EQ(h->first, 5.0);
  EXPECT_EQ(h->second, 15.0);
  const auto j = cs.interval_summary(0.0, 20.0);
  EXPECT_DOUBLE_EQ(j.at("length_pct").get<double>(), 50.0);
  cs.accepted = {0, 0, 0, 0, 0};
  EXPECT_FALSE(cs.hull());
  EXPECT_TRUE(cs.interval_summary(0.0, 20.0).at("phi_lo").is_null());
  ConfidenceSet two;
  two.grid = {ParamPoint{0.0, 1.0}};
  two.accepted = {1};
  EXPECT_THROW(two.hull(), std::logic_error);
}

TEST(Profile, SingletonGridReturnsThatPoint) {
  auto sim = std::make_shared<PoissonCounting>();
  const auto odds = OddsModel::oracle(sim, UniformProposal(sim->space()));
  const std::vector<ParamPoint> psi{ParamPoint{100.0, 0.8}};
  const auto p = profile_nuisance(odds, rows({{95.0, 108.0}}), ParamPoint{5.0}, psi);
  EXPECT_EQ(p.psi_hat, psi[0]);
  EXPECT_THROW(profile_nuisance(odds, rows({{95.0, 108.0}}), ParamPoint{5.0}, {}), std::invalid_argument);
}

TEST(Profile, OracleMaximizesPoissonLikelihood) {
  auto sim = std::make_shared<PoissonCounting>();
  const auto odds = OddsModel::oracle(sim, UniformProposal(sim->space()));
  const auto psi = sim->space().nuisance_grid(11);
  const Dataset D = rows({{97.0, 112.0}});
  for (double s : {0.0, 6.0, 15.0}) {
    const auto p = profile_nuisance(odds, D, ParamPoint{s}, psi);
    std::size_t best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < psi.size(); ++k) {
      const double b = psi[k][0], eps = psi[k][1];
      const double ll = poisson_log_pmf(97.0, b) + poisson_log_pmf(112.0, b + eps * s);
      if (ll > best_ll) {
        best_ll = ll;
        best = k;
      }
    }
    EXPECT_EQ(p.psi_hat, psi[best]) << "s=" << s;
  }
}

TEST(Profile, HybridAcoreEqualsAcoreAtProfiledPoint) {
  auto sim = std::make_shared<PoissonCounting>(1.0, PoissonCounting::default_space(5));
  auto odds = std::make_shared<OddsModel>(OddsModel::oracle(sim, UniformProposal(sim->space())));
  const auto psi = sim->space().nuisance_grid(5);
  const auto full = sim->space().full_grid(5);
  const auto h = StatisticEvaluator::acore(odds, full, psi);
  const auto plain = StatisticEvaluator::acore(odds, full);
  const Dataset D = rows({{101.0, 104.0}});
  for (double s : {0.0, 5.0, 12.5}) {
    const auto p = profile_nuisance(*odds, D, ParamPoint{s}, psi);
    const ParamPoint at = sim->space().combine(std::vector<double>{s}, p.psi_hat.span());
    EXPECT_NEAR(h.evaluate(D, ParamPoint{s}), plain.evaluate(D, at), 1e-12);
  }
}

TEST(Profile, ProfiledProposalUsesNearestProfile) {
  const auto space = PoissonCounting::default_space();
  std::vector<NuisanceProfile> profiles;
  profiles.push_back({ParamPoint{0.0}, ParamPoint{91.0, 0.6}, 0.0});
  profiles.push_back({ParamPoint{20.0}, ParamPoint{109.0, 0.9}, 0.0});
  const ProfiledProposal prop(space, profiles);
  Engine rng = make_engine(10);
  for (int i = 0; i < 200; ++i) {
    const auto t = prop(rng);
    ASSERT_EQ(t.size(), 3u);
    const auto& want = t[0] < 10.0 ? profiles[0].psi_hat : profiles[1].psi_hat;
    EXPECT_EQ(t[1], want[0]);
    EXPECT_EQ(t[2], want[1]);
  }
  EXPECT_THROW(ProfiledProposal(space, {}), std::invalid_argument);
}

TEST(Hybrid, NoNuisanceReducesToPlainCalibration) {
  MultivariateGaussian sim(1);
  const UniformProposal prop(sim.space());
  const auto stat = StatisticEvaluator::exact_lrt(1);
  const auto a = hybrid_critical_values(sim, {}, stat, 500, 5, kAlpha, learners::QuantileSpec{}, 11);
  const auto b = estimate_critical_values(sim, prop, stat, 500, 5, kAlpha, learners::QuantileSpec{}, 11);
  const auto m = marginal_critical_values(sim, prop, stat, 500, 5, kAlpha, learners::QuantileSpec{}, 11);
  for (double t = -5.0; t <= 5.0; t += 0.5) {
    EXPECT_EQ(a.cutoff(std::vector<double>{t}), b.cutoff(std::vector<double>{t}));
    EXPECT_EQ(m.cutoff(std::vector<double>{t}), b.cutoff(std::vector<double>{t}));
  }
  learners::MeanSpec spec;
  spec.kind = "conditional_cdf";
  const Dataset D = sample_forward(sim, ParamPoint{1.0}, 5, 12);
  const auto pa = hybrid_pvalues(D, sim, {}, stat, 500, 5, spec, 13);
  const auto pb = estimate_pvalues(D, sim, prop, stat, 500, 5, spec, 13);
  for (double t = -5.0; t <= 5.0; t += 0.5) EXPECT_EQ(pa.pvalue(std::vector<double>{t}), pb.pvalue(std::vector<double>{t}));
}

TEST(Hybrid, SetsAreFlaggedApproximate) {
  auto sim = std::make_shared<PoissonCounting>(1.0, PoissonCounting::default_space(5));
  auto odds = std::make_shared<OddsModel>(OddsModel::oracle(sim, UniformProposal(sim->space())));
  const auto psi = sim->space().nuisance_grid(3);
  const auto stat = StatisticEvaluator::acore(odds, sim->space().full_grid(3), psi);
  const Dataset D = rows({{100.0, 105.0}});
  const auto phi = sim->space().interest_grid();
  const auto profiles = profile_nuisance(*odds, D, phi, psi);
  ASSERT_EQ(profiles.size(), phi.size());
  const auto calib = hybrid_critical_values(*sim, profiles, stat, 200, 1, kAlpha, learners::QuantileSpec{}, 14);
  EXPECT_EQ(calib.statistic(), "h-acore");
  const auto cs = invert(stat, calib, D, phi);
  EXPECT_TRUE(cs.approximate);
  EXPECT_TRUE(cs.interval_summary(0.0, 20.0).at("approximate").get<bool>());
}
