#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "tspot/gpd.hpp"
#include "tspot/stats.hpp"

using namespace tspot;

namespace {

struct FixedUniform {
  double value;
  double uniform() const { return value; }
};

}  // namespace

TEST(GpdParams, RejectsNonPositiveScale) {
  EXPECT_THROW(GpdParams(0.0, 0.1), Error);
  EXPECT_THROW(GpdParams(-1.0, 0.1), Error);
  EXPECT_THROW(GpdParams(1.0, std::nan("")), Error);
  EXPECT_NO_THROW(GpdParams(1e-300, -3.0));
}

TEST(GpdParams, SupportBound) {
  GpdParams p(1.0, -0.2);
  EXPECT_TRUE(p.bounded());
  EXPECT_DOUBLE_EQ(p.upper_endpoint(), 5.0);
  EXPECT_TRUE(p.in_support(5.0));
  EXPECT_FALSE(p.in_support(5.0001));
  EXPECT_TRUE(std::isinf(GpdParams(1.0, 0.0).upper_endpoint()));
}

TEST(GpdSurvival, Examples) {
  EXPECT_EQ(gpd_survival(0.0, GpdParams(1.0, -0.2)), 1.0);
  EXPECT_NEAR(gpd_survival(1.0, GpdParams(1.0, 1.0)), 0.5, 1e-15);
  EXPECT_NEAR(gpd_survival(1.0, GpdParams(1.0, 0.0)), 0.3678794411714423, 1e-15);
  EXPECT_EQ(gpd_survival(6.0, GpdParams(1.0, -0.2)), 0.0);
  EXPECT_EQ(gpd_survival(5.0, GpdParams(1.0, -0.2)), 0.0);
}

TEST(GpdLogDensity, Examples) {
  EXPECT_NEAR(gpd_log_density(0.0, GpdParams(1.0, 0.5)), 0.0, 1e-15);
  EXPECT_NEAR(gpd_log_density(1.0, GpdParams(2.0, 0.0)), std::log(0.5) - 0.5, 1e-15);
  EXPECT_EQ(gpd_log_density(6.0, GpdParams(1.0, -0.2)),
            -std::numeric_limits<double>::infinity());
  EXPECT_EQ(gpd_log_density(5.0, GpdParams(1.0, -0.2)),
            -std::numeric_limits<double>::infinity());
}

TEST(GpdQuantile, Examples) {
  EXPECT_EQ(gpd_quantile(1.0, GpdParams(3.0, 0.7)), 0.0);
  EXPECT_NEAR(gpd_quantile(0.5, GpdParams(1.0, 1.0)), 1.0, 1e-15);
  EXPECT_NEAR(gpd_quantile(0.5, GpdParams(1.0, 0.0)), std::numbers::ln2, 1e-15);
  EXPECT_DOUBLE_EQ(gpd_quantile(0.0, GpdParams(1.0, -0.2)), 5.0);
  try {
    gpd_quantile(0.0, GpdParams(1.0, 0.1));
    FAIL() << "expected unbounded quantile error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unbounded_quantile);
  }
  EXPECT_THROW(gpd_quantile(1.5, GpdParams(1.0, 0.1)), Error);
}

TEST(GpdQuantile, RoundTripBothBranches) {
  for (double xi : {-0.1, -1e-9, 0.0, 1e-9, 0.1, 1.0, 2.5}) {
    const GpdParams p(1.7, xi);
    for (double lq = -10.0; lq <= 0.0; lq += 0.25) {
      const double q = std::pow(10.0, lq);
      const double back = gpd_survival(gpd_quantile(q, p), p);
      EXPECT_NEAR(back, q, 1e-12 * q) << "xi=" << xi << " q=" << q;
    }
  }
}

// Near the upper endpoint of a strongly bounded GPD one ulp of x moves the
// survival by |x dlogS/dx| * eps relative, so the round trip can only be as
// good as that condition number allows.
TEST(GpdQuantile, RoundTripWithinConditioningNearEndpoint) {
  const double eps = std::numeric_limits<double>::epsilon();
  for (double xi : {-0.5, -0.9}) {
    const GpdParams p(1.7, xi);
    for (double lq = -10.0; lq <= 0.0; lq += 0.25) {
      const double q = std::pow(10.0, lq);
      const double x = gpd_quantile(q, p);
      const double kappa = x / (p.sigma() * std::pow(q, -xi));
      const double back = gpd_survival(x, p);
      EXPECT_NEAR(back, q, (1e-12 + 4 * kappa * eps) * q) << "xi=" << xi << " q=" << q;
    }
  }
}

TEST(GpdSurvival, MonotoneInSupport) {
  for (double xi : {-0.4, 0.0, 0.3}) {
    const GpdParams p(2.0, xi);
    double prev = 1.0;
    for (double x = 0.01; x < 4.9; x += 0.01) {
      const double s = gpd_survival(x, p);
      EXPECT_LT(s, prev);
      prev = s;
    }
  }
}

TEST(GpdSurvival, LimitContinuity) {
  for (double x : {0.1, 1.0, 3.0, 10.0}) {
    for (double sigma : {0.5, 2.0}) {
      const double s0 = gpd_survival(x, GpdParams(sigma, 0.0));
      EXPECT_NEAR(gpd_survival(x, GpdParams(sigma, 1e-9)), s0, 1e-8);
      EXPECT_NEAR(gpd_survival(x, GpdParams(sigma, -1e-9)), s0, 1e-8);
      // Just outside the switch the series form must agree too.
      EXPECT_NEAR(gpd_survival(x, GpdParams(sigma, 2e-8)), s0, 1e-8);
    }
  }
}

TEST(GpdLogDensity, MatchesSurvivalDerivative) {
  const double h = 1e-5;
  for (double xi : {-0.3, -1e-9, 0.0, 0.2, 1.0}) {
    const GpdParams p(1.5, xi);
    for (double x = 0.05; x < 4.0; x += 0.35) {
      const double deriv = -(gpd_survival(x + h, p) - gpd_survival(x - h, p)) / (2 * h);
      EXPECT_NEAR(deriv, std::exp(gpd_log_density(x, p)), 1e-6) << xi << " " << x;
    }
  }
}

TEST(GpdSample, DeterministicSource) {
  FixedUniform half{0.5};
  EXPECT_NEAR(gpd_sample(half, GpdParams(1.0, 1.0)), 1.0, 1e-15);
  FixedUniform near_one{1.0 - 1e-15};
  EXPECT_LT(gpd_sample(near_one, GpdParams(1.0, 1.0)), 1e-14);
}

TEST(GpdSample, EmpiricalSurvivalMatches) {
  RandomSource rng(42);
  const GpdParams p(2.0, -0.3);
  const int n = 100000;
  int above = 0;
  for (int i = 0; i < n; ++i) above += gpd_sample(rng, p) > 1.0 ? 1 : 0;
  const double s = gpd_survival(1.0, p);
  const double se = std::sqrt(s * (1 - s) / n);
  EXPECT_NEAR(static_cast<double>(above) / n, s, 3 * se);
}

TEST(GpdMean, ExamplesAndError) {
  EXPECT_DOUBLE_EQ(gpd_mean(GpdParams(1.0, 0.0)), 1.0);
  EXPECT_DOUBLE_EQ(gpd_mean(GpdParams(2.0, 0.5)), 4.0);
  try {
    gpd_mean(GpdParams(1.0, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::mean_undefined);
  }
}

TEST(GpdMedian, Examples) {
  EXPECT_NEAR(gpd_median(GpdParams(1.0, 1.0)), 1.0, 1e-15);
  EXPECT_NEAR(gpd_median(GpdParams(1.0, 0.0)), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(gpd_median(GpdParams(3.0, -0.5)), 3.0 * (std::pow(2.0, -0.5) - 1) / -0.5, 1e-12);
  EXPECT_NEAR(gpd_median(GpdParams(3.0, -0.5)), 1.7574, 1e-4);
}

TEST(GpdMedian, BelowMeanWhenMeanExists) {
  for (double xi = -0.99; xi < 0.999; xi += 0.03) {
    const GpdParams p(1.3, xi);
    EXPECT_LT(gpd_median(p), gpd_mean(p)) << xi;
  }
}

TEST(GpdMoments, MonteCarloAgreement) {
  RandomSource rng(7);
  for (double xi : {-0.3, 0.0, 0.25}) {
    const GpdParams p(1.0, xi);
    const int n = 1000000;
    std::vector<double> x(n);
    for (auto& v : x) v = gpd_sample(rng, p);
    const double m = mean(x);
    const double se = std::sqrt(variance(x) / n);
    EXPECT_NEAR(m, gpd_mean(p), 4 * se) << xi;
    // Median standard error: 1 / (2 f(m) sqrt(n)).
    const double med = gpd_median(p);
    const double f = std::exp(gpd_log_density(med, p));
    std::nth_element(x.begin(), x.begin() + n / 2, x.end());
    EXPECT_NEAR(x[n / 2], med, 4.0 / (2.0 * f * std::sqrt(n))) << xi;
  }
}
