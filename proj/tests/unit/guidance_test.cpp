#include "dvce/guidance.hpp"

#include "dvce/classifier.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace dvce {
namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

constexpr double kDeg = std::numbers::pi / 180.0;

TEST(Cone, InsideIsUnchanged) {
  const Vec w = v2(1.0, 0.1);
  EXPECT_EQ(cone_project(w, v2(1.0, 0.0), 30.0), w);
}

TEST(Cone, OrthogonalInputHandExample) {
  const Vec out = cone_project(v2(0.0, 1.0), v2(1.0, 0.0), 30.0);
  EXPECT_NEAR(out[0], std::sqrt(3.0) / 4.0, 1e-15);
  EXPECT_NEAR(out[1], 0.25, 1e-15);
  EXPECT_NEAR(out.norm(), 0.5, 1e-15);
  EXPECT_NEAR(angle_between(out, v2(1.0, 0.0)), 30.0 * kDeg, 1e-12);
}

TEST(Cone, BeyondNinetyPlusAlphaClampsToZero) {
  EXPECT_EQ(cone_project(v2(-1.0, 0.01), v2(1.0, 0.0), 30.0).norm(), 0.0);
  EXPECT_EQ(cone_project(v2(-2.0, 0.0), v2(1.0, 0.0), 30.0).norm(), 0.0);
}

TEST(Cone, RejectsDegenerateInputs) {
  EXPECT_THROW(cone_project(v2(1, 0), Vec::Zero(2), 30.0), std::invalid_argument);
  EXPECT_THROW(cone_project(Vec::Zero(2), v2(1, 0), 30.0), std::invalid_argument);
  EXPECT_THROW(cone_project(v2(1, 0), v2(1, 0), 0.0), std::invalid_argument);
  EXPECT_THROW(cone_project(v2(1, 0), v2(1, 0), 90.0), std::invalid_argument);
}

TEST(Cone, PropertiesOnRandomInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.uniform_index(20));
    const Vec v = sample_standard_normal(rng, d), w = sample_standard_normal(rng, d);
    const double alpha = 0.5 + 89.0 * rng.uniform();
    const Vec out = cone_project(w, v, alpha);
    ASSERT_GE(out.dot(v), -1e-9);
    if (out.norm() > 1e-12) {
      ASSERT_LE(angle_between(out, v), alpha * kDeg + 1e-6);
      ASSERT_LT((cone_project(out, v, alpha) - out).norm(), 1e-9);
    }
    // out lies in span{v, w}
    Mat basis(d, 2);
    basis << v, w;
    const Vec resid = out - basis * basis.colPivHouseholderQr().solve(out);
    ASSERT_LT(resid.norm(), 1e-9);
    // Euclidean projection onto a convex cone: <w - out, out> = 0
    ASSERT_NEAR((w - out).dot(out), 0.0, 1e-9 * (1.0 + w.squaredNorm()));
  }
}

TEST(Cone, NoPointOfTheConeIsCloser) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec v = sample_standard_normal(rng, 3), w = sample_standard_normal(rng, 3);
    const double alpha = 5.0 + 80.0 * rng.uniform();
    const double best = (cone_project(w, v, alpha) - w).norm();
    for (int k = 0; k < 200; ++k) {
      Vec z = sample_standard_normal(rng, 3);
      if (angle_between(z, v) > alpha * kDeg) continue;
      z *= std::max(0.0, w.dot(z) / z.squaredNorm());
      ASSERT_GE((z - w).norm(), best - 1e-12);
    }
  }
}

TEST(Distance, L1SignWithTies) {
  Vec x(3), xhat = Vec::Zero(3);
  x << 2.0, -3.0, 0.0;
  Vec expect(3);
  expect << 1.0, -1.0, 0.0;
  EXPECT_EQ(distance_subgradient(DistanceKind::L1, x, xhat), expect);
  EXPECT_EQ(distance_value(DistanceKind::L1, x, xhat), 5.0);
}

TEST(Distance, CoincidenceGivesZero) {
  const Vec x = v2(0.3, -0.2);
  EXPECT_EQ(distance_subgradient(DistanceKind::L2, x, x).norm(), 0.0);
  EXPECT_EQ(distance_subgradient(DistanceKind::L15, x, x).norm(), 0.0);
}

TEST(Distance, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (DistanceKind kind : {DistanceKind::L1, DistanceKind::L2, DistanceKind::L15}) {
    for (int probe = 0; probe < 50; ++probe) {
      const Vec xhat = sample_standard_normal(rng, 6);
      const Vec x = xhat + sample_standard_normal(rng, 6);
      const ScalarFn f = [&](const Vec& z) { return distance_value(kind, z, xhat); };
      EXPECT_LT(max_relative_error(distance_subgradient(kind, x, xhat), finite_difference_gradient(f, x, 1e-6), 1e-8), 1e-5)
          << to_string(kind);
    }
  }
  EXPECT_EQ(parse_distance_kind("l1.5"), DistanceKind::L15);
  EXPECT_THROW(parse_distance_kind("lpips"), FormatError);
}

TEST(Update, CollinearExample) {
  GuidanceConfig cfg;
  const Vec e1 = v2(3.0, 0.0);
  const Vec out = guidance_update(cfg, e1, 7.0 * e1);
  EXPECT_NEAR(out[0], -0.05, 1e-15);
  EXPECT_EQ(out[1], 0.0);
}

TEST(Update, NoDistanceTerm) {
  GuidanceConfig cfg;
  cfg.distance_coef = 0.0;
  const Vec g = v2(3.0, 4.0);
  EXPECT_LT((guidance_update(cfg, g, v2(1.0, 1.0)) - 0.1 * g / 5.0).norm(), 1e-16);
}

TEST(Update, ScaleInvarianceAndBound) {
  GuidanceConfig cfg;
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec a = sample_standard_normal(rng, 5), b = sample_standard_normal(rng, 5);
    const Vec base = guidance_update(cfg, a, b);
    EXPECT_LT((guidance_update(cfg, 1000.0 * a, b) - base).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((guidance_update(cfg, a, 1e-3 * b) - base).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(base.norm(), cfg.classifier_coef + cfg.distance_coef + 1e-15);
  }
}

TEST(Update, VanishingTermsDropOut) {
  GuidanceConfig cfg;
  const Vec g = v2(0.0, 2.0);
  EXPECT_LT((guidance_update(cfg, Vec::Zero(2), g) - v2(0.0, -0.15)).norm(), 1e-16);
  EXPECT_EQ(guidance_update(cfg, Vec::Constant(2, 1e-14), Vec::Zero(2)).norm(), 0.0);
}

TEST(AdaptiveMean, EdgeCasesAndBound) {
  const Vec mu = v2(1.0, -2.0), sigma = v2(0.1, 0.3);
  EXPECT_EQ(adaptive_mean(mu, sigma, Vec::Zero(2)), mu);
  EXPECT_EQ(adaptive_mean(Vec::Zero(2), sigma, v2(1.0, 1.0)), Vec::Zero(2));
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec m = sample_standard_normal(rng, 4), g = sample_standard_normal(rng, 4);
    const Vec s = sample_standard_normal(rng, 4).cwiseAbs();
    const double shift = (adaptive_mean(m, s, g) - m).norm();
    EXPECT_LE(shift, s.maxCoeff() * m.norm() * g.norm() * (1.0 + 1e-12));
  }
}

TEST(RawMean, LinearInGradient) {
  const Vec mu = v2(1.0, -2.0), sigma = v2(0.1, 0.3), g = v2(2.0, 5.0);
  EXPECT_EQ(raw_guided_mean(mu, sigma, Vec::Zero(2)), mu);
  const Vec one = raw_guided_mean(mu, sigma, g) - mu;
  const Vec two = raw_guided_mean(mu, sigma, 2.0 * g) - mu;
  EXPECT_LT((two - 2.0 * one).norm(), 1e-15);
}

TEST(RawMean, PushesTowardTargetClass) {
  Mat means(2, 2);
  means << -2.0, 2.0, 0.0, 0.0;
  const ClassifierModel m = ClassifierModel::bayes(GaussianMixture({0.5, 0.5}, means, 1.0, {0, 1}));
  Rng rng(8);
  const Vec sigma = Vec::Constant(2, 0.2);
  int before = 0, after = 0;
  double along = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Vec x = 2.0 * sample_standard_normal(rng, 2);
    const Vec moved = raw_guided_mean(x, sigma, grad_log_prob(m, x, 1)) + 0.1 * sample_standard_normal(rng, 2);
    before += x[0] > 0;
    after += moved[0] > 0;
    along += moved[0] - x[0];
  }
  EXPECT_GT(along / n, 0.0);
  // Binomial counts: the increase must clear 4 standard errors.
  EXPECT_GT(after - before, 4.0 * std::sqrt(n * 0.25) );
}

TEST(Config, ValidatesRanges) {
  GuidanceConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.eta = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.cone_angle_deg = 90.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.classifier_coef = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_guide_mode(to_string(GuideMode::RobustTarget)), GuideMode::RobustTarget);
}

}  // namespace
}  // namespace dvce
