#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "lf2i/param_space.hpp"

using namespace lf2i;

TEST(ParamSpace, RejectsInvertedOrEmptyBounds) {
  EXPECT_THROW(ParamSpace({1.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(ParamSpace({2.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(ParamSpace({}, {}), std::invalid_argument);
  EXPECT_THROW(ParamSpace({0.0, 0.0}, {1.0}), std::invalid_argument);
}

TEST(ParamSpace, InterestAndNuisanceMustPartitionDims) {
  EXPECT_THROW(ParamSpace({0, 0, 0}, {1, 1, 1}, {0, 1}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(ParamSpace({0, 0, 0}, {1, 1, 1}, {0}, {1}), std::invalid_argument);
  EXPECT_THROW(ParamSpace({0, 0}, {1, 1}, {0}, {5}), std::invalid_argument);
  const ParamSpace ok({0, 0, 0}, {1, 1, 1}, {0}, {1, 2});
  EXPECT_TRUE(ok.has_nuisance());
  EXPECT_EQ(ok.interest_dims(), (std::vector<std::size_t>{0}));
}

TEST(ParamSpace, DefaultsToAllInterest) {
  const auto s = ParamSpace::cube(3, -1.0, 1.0);
  EXPECT_EQ(s.interest_dims().size(), 3u);
  EXPECT_FALSE(s.has_nuisance());
}

TEST(ParamSpace, InterestGridSizeIsPointsToTheInterestDims) {
  const ParamSpace s({0, 90, 0.5}, {20, 110, 1.0}, {0}, {1, 2}, 51);
  EXPECT_EQ(s.interest_grid().size(), 51u);
  const auto s2 = ParamSpace::cube(2, -5, 5, 11);
  EXPECT_EQ(s2.interest_grid().size(), 121u);
}

TEST(ParamSpace, GridIncludesEndpointsAndIsEvenlySpaced) {
  const auto s = ParamSpace::cube(1, 0.0, 5.0, 51);
  const auto g = s.interest_grid();
  EXPECT_DOUBLE_EQ(g.front()[0], 0.0);
  EXPECT_DOUBLE_EQ(g.back()[0], 5.0);
  for (std::size_t j = 1; j < g.size(); ++j) EXPECT_NEAR(g[j][0] - g[j - 1][0], 0.1, 1e-12);
}

TEST(ParamSpace, SinglePointGridIsCentre) {
  const auto s = ParamSpace::cube(1, 2.0, 4.0);
  const auto g = s.full_grid(1);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0][0], 3.0);
}

TEST(ParamSpace, GridPointsAreDistinctAndInside) {
  const ParamSpace s({0, 90, 0.5}, {20, 110, 1.0}, {0}, {1, 2}, 7);
  const auto g = s.full_grid(4);
  ASSERT_EQ(g.size(), 64u);
  std::set<std::vector<double>> seen;
  for (const auto& p : g) {
    EXPECT_TRUE(s.contains(p.span()));
    seen.insert(p.values);
  }
  EXPECT_EQ(seen.size(), g.size());
}

TEST(ParamSpace, MidpointGridAvoidsBoundary) {
  const auto s = ParamSpace::cube(1, 0.0, 1.0);
  const auto g = s.midpoint_grid(4);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_DOUBLE_EQ(g[0][0], 0.125);
  EXPECT_DOUBLE_EQ(g[3][0], 0.875);
}

TEST(ParamSpace, CombinePlacesCoordinates) {
  const ParamSpace s({0, 0, 0}, {1, 1, 1}, {1}, {0, 2});
  const std::vector<double> phi{0.5}, psi{0.1, 0.9};
  const auto p = s.combine(phi, psi);
  EXPECT_EQ(p, (ParamPoint{0.1, 0.5, 0.9}));
  EXPECT_THROW(s.combine(psi, phi), std::invalid_argument);
}

TEST(ParamSpace, RequireRejectsOutOfBoxAndWrongArity) {
  const auto s = ParamSpace::cube(2, 0.0, 1.0);
  EXPECT_NO_THROW(s.require(std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(s.require(std::vector<double>{0.0, 1.5}), std::domain_error);
  EXPECT_THROW(s.require(std::vector<double>{0.5}), std::domain_error);
}

TEST(ParamSpace, ProjectSelectsCoordinates) {
  const ParamPoint t{1.0, 2.0, 3.0};
  const std::vector<std::size_t> dims{2, 0};
  EXPECT_EQ(project(t, dims), (ParamPoint{3.0, 1.0}));
}

TEST(UniformProposal, DensityIntegratesToOne) {
  const UniformProposal u({0.0, 90.0}, {20.0, 110.0});
  EXPECT_NEAR(u.density(std::vector<double>{5.0, 100.0}) * 400.0, 1.0, 1e-12);
  EXPECT_EQ(u.density(std::vector<double>{25.0, 100.0}), 0.0);
}

TEST(UniformProposal, RestrictionRenormalizes) {
  const UniformProposal u({0.0}, {10.0});
  const auto r = u.restrict({2.0}, {4.0});
  EXPECT_NEAR(r.density(std::vector<double>{3.0}), 0.5, 1e-12);
  const auto clipped = u.restrict({-5.0}, {5.0});
  EXPECT_DOUBLE_EQ(clipped.lower()[0], 0.0);
  EXPECT_NEAR(clipped.density(std::vector<double>{1.0}), 0.2, 1e-12);
}

TEST(UniformProposal, DrawsStayInBoxAndAreReproducible) {
  const UniformProposal u({0.0, -1.0}, {1.0, 1.0});
  Engine a = make_engine(9), b = make_engine(9);
  for (int i = 0; i < 1000; ++i) {
    const auto p = u(a);
    EXPECT_EQ(p, u(b));
    EXPECT_GE(p[0], 0.0);
    EXPECT_LE(p[0], 1.0);
    EXPECT_GE(p[1], -1.0);
  }
}

TEST(UniformProposal, ZeroWidthBoxRejected) {
  EXPECT_THROW(UniformProposal({1.0}, {1.0}), std::invalid_argument);
}

TEST(NearestIndex, FindsClosestPoint) {
  const auto g = ParamSpace::cube(1, 0.0, 1.0, 11).interest_grid();
  EXPECT_EQ(nearest_index(g, std::vector<double>{0.34}), 3u);
  EXPECT_EQ(nearest_index(g, std::vector<double>{2.0}), 10u);
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 7), derive_seed(5, 7));
}
