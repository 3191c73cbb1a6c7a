#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lf2i/learners/spec.hpp"
#include "lf2i/odds.hpp"
#include "lf2i/simulators.hpp"
#include "oracles.hpp"

using namespace lf2i;
using namespace lf2i::learners;

namespace {

Matrix uniform_thetas(std::size_t n, double lo, double hi, std::uint64_t seed, std::size_t d = 1) {
  Engine rng = make_engine(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix X(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) X(i, j) = u(rng);
  return X;
}

}  // namespace

TEST(PinballLoss, Examples) {
  EXPECT_DOUBLE_EQ(pinball_loss(0.0, 0.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(pinball_loss(0.0, 1.0, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(pinball_loss(1.0, 0.0, 0.1), 0.9);
}

TEST(PinballLoss, NonNegativeAndZeroOnlyAtTruth) {
  Engine rng = make_engine(1);
  std::normal_distribution<double> z;
  for (int i = 0; i < 1000; ++i) {
    const double a = z(rng), b = z(rng);
    EXPECT_GT(pinball_loss(a, b, 0.3), 0.0);
    EXPECT_EQ(pinball_loss(a, a, 0.3), 0.0);
  }
}

TEST(Classifier, SingleClassRejected) {
  Matrix X(10, 1);
  std::vector<int> y(10, 1);
  for (const char* kind : {"qda", "logistic", "gbt"}) {
    ClassifierSpec s;
    s.kind = kind;
    EXPECT_THROW(fit_classifier(s, X, y, 1), std::runtime_error) << kind;
  }
}

TEST(Classifier, UninformativeFeaturesGiveHalf) {
  const std::size_t n = 20000;
  const Matrix X = uniform_thetas(n, -1, 1, 2, 2);
  Engine rng = make_engine(3);
  std::vector<int> y(n);
  for (auto& v : y) v = std::bernoulli_distribution(0.5)(rng);
  for (const char* kind : {"qda", "logistic", "gbt"}) {
    ClassifierSpec s;
    s.kind = kind;
    s.trees.validation_fraction = 0.2;
    const auto c = fit_classifier(s, X, y, 4);
    const Matrix probe = uniform_thetas(200, -1, 1, 5, 2);
    for (std::size_t i = 0; i < probe.rows(); ++i)
      EXPECT_NEAR(sigmoid(c->logit(probe.row(i))), 0.5, 0.05) << kind;
  }
}

TEST(Classifier, LogisticIsCalibratedOnLogisticTruth) {
  const std::size_t n = 100000;
  Engine rng = make_engine(6);
  std::normal_distribution<double> z;
  Matrix X(n, 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = z(rng);
    X(i, 1) = z(rng);
    y[i] = std::bernoulli_distribution(sigmoid(1.0 + 2.0 * X(i, 0) - X(i, 1)))(rng);
  }
  const auto c = LogisticRegression::fit(X, y);
  std::vector<double> sum_p(10, 0), sum_y(10, 0), cnt(10, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(c.logit(X.row(i)));
    const auto b = std::min<std::size_t>(9, static_cast<std::size_t>(p * 10));
    sum_p[b] += p;
    sum_y[b] += y[i];
    cnt[b] += 1;
  }
  for (std::size_t b = 0; b < 10; ++b)
    if (cnt[b] > 500) {
      EXPECT_NEAR(sum_y[b] / cnt[b], sum_p[b] / cnt[b], 0.05) << "bin " << b;
    }
}

TEST(Classifier, QdaPosteriorMatchesAnalyticOnGaussianLocation) {
  // theta ~ U[-5, 5]; x | y=1 ~ N(theta, 1), x | y=0 ~ N(0, 9).
  const std::size_t n = 100000;
  Engine rng = make_engine(7);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::normal_distribution<double> z;
  Matrix X(n, 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::bernoulli_distribution(0.5)(rng);
    X(i, 0) = u(rng);
    X(i, 1) = y[i] ? X(i, 0) + z(rng) : 3.0 * z(rng);
  }
  const auto qda = QDA::fit(X, y);
  double mae = 0.0;
  std::size_t count = 0;
  std::vector<double> f;
  for (double th = -4.0; th <= 4.0; th += 0.5)
    for (double x = th - 2.0; x <= th + 2.0; x += 0.25) {
      const double num = oracle::normal_pdf(x, th, 1.0), den = oracle::normal_pdf(x, 0.0, 3.0);
      joint_features(std::vector<double>{th}, std::vector<double>{x}, f);
      mae += std::abs(sigmoid(qda.logit(f)) - num / (num + den));
      ++count;
    }
  EXPECT_LT(mae / count, 0.02);
}

TEST(Classifier, FitsAreDeterministic) {
  const Matrix X = uniform_thetas(2000, -2, 2, 8, 2);
  std::vector<int> y(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) y[i] = X(i, 0) + 0.3 * X(i, 1) > 0;
  ClassifierSpec s;
  s.kind = "gbt";
  s.trees.subsample = 0.7;
  const auto a = fit_classifier(s, X, y, 9), b = fit_classifier(s, X, y, 9);
  EXPECT_EQ(a->to_json().dump(), b->to_json().dump());
}

TEST(Classifier, SerializationRoundTrip) {
  const Matrix X = uniform_thetas(1000, -2, 2, 10, 2);
  std::vector<int> y(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) y[i] = X(i, 0) * X(i, 0) + X(i, 1) > 1;
  for (const char* kind : {"qda", "logistic", "gbt"}) {
    ClassifierSpec s;
    s.kind = kind;
    s.degree = 2;
    s.trees.rounds = 30;
    const auto c = fit_classifier(s, X, y, 11);
    const auto j = c->to_json();
    EXPECT_EQ(j.at("schema_version").get<int>(), kSchemaVersion);
    const auto back = load_classifier(nlohmann::json::parse(j.dump()));
    for (std::size_t i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(back->logit(X.row(i)), c->logit(X.row(i))) << kind;
  }
  auto bad = fit_classifier(ClassifierSpec{}, X, y, 1)->to_json();
  bad["schema_version"] = 99;
  EXPECT_THROW(load_classifier(bad), std::runtime_error);
}

TEST(QuantileRegressor, ConstantTargetIsExact) {
  const Matrix X = uniform_thetas(200, 0, 5, 12);
  const std::vector<double> y(200, 3.25);
  for (const char* kind : {"gbt", "local_bin"}) {
    QuantileSpec s;
    s.kind = kind;
    const auto q = fit_quantile(s, X, y, 0.1, 13);
    for (double t : {0.0, 1.3, 4.9}) EXPECT_EQ(q->predict(std::vector<double>{t}), 3.25) << kind;
  }
}

TEST(QuantileRegressor, StandardNormalTenthPercentile) {
  const double target = oracle::normal_quantile(0.1);
  EXPECT_NEAR(target, -1.2816, 1e-4);
  const std::size_t n = 5000;
  const Matrix X = uniform_thetas(n, 0, 5, 14);
  Engine rng = make_engine(15);
  std::normal_distribution<double> z;
  std::vector<double> y(n);
  for (auto& v : y) v = z(rng);
  for (const char* kind : {"gbt", "local_bin"}) {
    QuantileSpec s;
    s.kind = kind;
    s.neighbours = n;
    const auto q = fit_quantile(s, X, y, 0.1, 16);
    double worst = 0.0;
    for (double t = 0.25; t <= 4.75; t += 0.25)
      worst = std::max(worst, std::abs(q->predict(std::vector<double>{t}) - target));
    EXPECT_LT(worst, 0.05) << kind;
  }
}

TEST(QuantileRegressor, RejectsBadAlphaAndTooFewPairs) {
  const Matrix X = uniform_thetas(100, 0, 1, 17);
  const std::vector<double> y(100, 0.0);
  EXPECT_THROW(fit_quantile(QuantileSpec{}, X, y, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(fit_quantile(QuantileSpec{}, X, y, 1.0, 1), std::invalid_argument);
  const Matrix small = uniform_thetas(20, 0, 1, 17);
  EXPECT_THROW(fit_quantile(QuantileSpec{}, small, std::vector<double>(20, 0.0), 0.5, 1), std::invalid_argument);
}

TEST(QuantileRegressor, LocalBinIsMonotoneInLevel) {
  const std::size_t n = 3000;
  const Matrix X = uniform_thetas(n, 0, 5, 18);
  Engine rng = make_engine(19);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = X(i, 0) + std::normal_distribution<double>(0, 1 + X(i, 0))(rng);
  const auto q = LocalBinQuantile::fit(X, y, 0.1);
  for (double t = 0.0; t <= 5.0; t += 0.1) {
    double prev = -1e300;
    for (double a = 0.05; a < 1.0; a += 0.05) {
      const double v = q.quantile_at(std::vector<double>{t}, a);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(QuantileRegressor, BoostedCrossingsAreRare) {
  const std::size_t n = 5000;
  const Matrix X = uniform_thetas(n, 0, 5, 20);
  Engine rng = make_engine(21);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(X(i, 0)) + std::normal_distribution<double>(0, 0.5)(rng);
  const std::vector<double> levels{0.05, 0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<std::shared_ptr<const QuantileRegressor>> fits;
  for (double a : levels) fits.push_back(fit_quantile(QuantileSpec{}, X, y, a, 22));
  std::size_t pairs = 0, crossings = 0;
  for (double t = 0.0; t <= 5.0; t += 0.05)
    for (std::size_t k = 1; k < levels.size(); ++k) {
      ++pairs;
      crossings += fits[k]->predict(std::vector<double>{t}) < fits[k - 1]->predict(std::vector<double>{t});
    }
  std::cout << "boosted quantile crossings: " << crossings << " / " << pairs << '\n';
  EXPECT_LT(static_cast<double>(crossings), 0.01 * pairs);
}

TEST(QuantileRegressor, LocalBinCdfCountsNeighbourhood) {
  Matrix X;
  std::vector<double> y;
  for (int i = 0; i < 100; ++i) {
    X.append_row(std::vector<double>{static_cast<double>(i)});
    y.push_back(static_cast<double>(i % 10));
  }
  const auto q = LocalBinQuantile::fit(X, y, 0.5, 100);
  EXPECT_DOUBLE_EQ(q.cdf(std::vector<double>{50.0}, 4.0), 0.5);
  EXPECT_DOUBLE_EQ(q.cdf_below(std::vector<double>{50.0}, 4.0), 0.4);
  EXPECT_DOUBLE_EQ(q.cdf_below(std::vector<double>{50.0}, -1.0), 0.0);
}

TEST(QuantileRegressor, SerializationRoundTrip) {
  const Matrix X = uniform_thetas(500, 0, 5, 23);
  std::vector<double> y(500);
  for (std::size_t i = 0; i < 500; ++i) y[i] = X(i, 0) * X(i, 0);
  for (const char* kind : {"gbt", "local_bin"}) {
    QuantileSpec s;
    s.kind = kind;
    const auto q = fit_quantile(s, X, y, 0.3, 24);
    const auto back = load_quantile(nlohmann::json::parse(q->to_json().dump()));
    for (double t : {0.1, 2.2, 4.4}) EXPECT_DOUBLE_EQ(back->predict(std::vector<double>{t}), q->predict(std::vector<double>{t}));
  }
}

TEST(MeanRegressor, AllOnesGivesUnitSurfaceAndBand) {
  const Matrix X = uniform_thetas(300, 0, 5, 25);
  const std::vector<double> y(300, 1.0);
  for (const char* kind : {"logistic_spline", "logistic_poly", "gbt"}) {
    MeanSpec s;
    s.kind = kind;
    const auto m = fit_mean(s, X, y, 26);
    for (double t : {0.0, 2.5, 5.0}) {
      const auto b = m->band(std::vector<double>{t});
      EXPECT_EQ(b.mean, 1.0) << kind;
      EXPECT_EQ(b.lo, 1.0) << kind;
      EXPECT_EQ(b.hi, 1.0) << kind;
    }
  }
}

TEST(MeanRegressor, BernoulliNinetyIsFlat) {
  const std::size_t n = 1000;
  const Matrix X = uniform_thetas(n, 0, 5, 27);
  Engine rng = make_engine(28);
  std::vector<double> y(n);
  for (auto& v : y) v = std::bernoulli_distribution(0.9)(rng);
  const auto m = fit_mean(MeanSpec{"logistic_spline"}, X, y, 29);
  std::size_t inside = 0, band_ok = 0, total = 0;
  for (double t = 0.0; t <= 5.0; t += 0.05) {
    const auto b = m->band(std::vector<double>{t});
    inside += b.mean >= 0.88 && b.mean <= 0.92;
    band_ok += b.lo <= 0.9 && b.hi >= 0.9;
    EXPECT_LE(b.lo, b.mean);
    EXPECT_LE(b.mean, b.hi);
    ++total;
  }
  EXPECT_GE(inside, 0.95 * total);
  EXPECT_GE(band_ok, 0.9 * total);
}

TEST(MeanRegressor, BoostedPredictionsClippedForBinaryTargets) {
  const std::size_t n = 500;
  const Matrix X = uniform_thetas(n, 0, 5, 30);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = X(i, 0) > 2.5;
  const auto m = fit_mean(MeanSpec{}, X, y, 31);
  for (double t = -1.0; t <= 6.0; t += 0.1) {
    const double p = m->predict(std::vector<double>{t});
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(MeanRegressor, LogisticRejectsTargetsOutsideUnitInterval) {
  const Matrix X = uniform_thetas(100, 0, 5, 32);
  std::vector<double> y(100, 0.5);
  y[3] = 1.5;
  EXPECT_THROW(fit_mean(MeanSpec{"logistic_spline"}, X, y, 1), std::invalid_argument);
}

TEST(MeanRegressor, SerializationRoundTrip) {
  const Matrix X = uniform_thetas(400, 0, 5, 33, 2);
  Engine rng = make_engine(34);
  std::vector<double> y(400);
  for (std::size_t i = 0; i < 400; ++i) y[i] = std::bernoulli_distribution(sigmoid(X(i, 0) - X(i, 1)))(rng);
  for (const char* kind : {"logistic_spline", "gbt"}) {
    MeanSpec s;
    s.kind = kind;
    const auto m = fit_mean(s, X, y, 35);
    const auto back = load_mean(nlohmann::json::parse(m->to_json().dump()));
    const std::vector<double> t{1.0, 2.0};
    EXPECT_DOUBLE_EQ(back->predict(t), m->predict(t));
    EXPECT_DOUBLE_EQ(back->band(t).hi, m->band(t).hi);
  }
}

TEST(FitCounter, CountsEveryFit) {
  const Matrix X = uniform_thetas(200, 0, 5, 36);
  const std::vector<double> y(200, 0.0);
  const auto before = fit_counter().load();
  fit_quantile(QuantileSpec{}, X, y, 0.5, 1);
  fit_quantile(QuantileSpec{"local_bin"}, X, y, 0.5, 1);
  EXPECT_EQ(fit_counter().load(), before + 2);
}

TEST(SampleQuantile, TypeSevenAndTypeSix) {
  std::vector<double> v{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(sample_quantile(v, 0.5), 3.0);
  std::vector<double> w{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(sample_quantile(w, 0.5), 2.5);
  std::vector<double> u{10, 20, 30, 40, 50, 60, 70, 80, 90};
  EXPECT_DOUBLE_EQ(sample_quantile_unbiased(u, 0.1), 10.0);
  EXPECT_DOUBLE_EQ(sample_quantile_unbiased(u, 0.5), 50.0);
}
