#include "dvce/baselines.hpp"

#include "dvce/evaluation.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace dvce {
namespace {

GaussianMixture blobs() {
  Mat means(2, 2);
  means << -2.0, 2.0, 0.0, 0.0;
  return GaussianMixture({0.5, 0.5}, means, 0.25, {0, 1});
}

TEST(Projection, InsideBallUnchanged) {
  Vec d(3);
  d << 0.1, -0.2, 0.05;
  EXPECT_EQ(project_lp_ball(d, 1.5, 1.0), d);
  EXPECT_EQ(project_lp_ball(d, 2.0, 1.0), d);
}

TEST(Projection, L2HalvesAtTwiceRadius) {
  Vec d(2);
  d << 3.0, 4.0;
  EXPECT_LT((project_lp_ball(d, 2.0, 2.5) - d / 2.0).norm(), 1e-15);
}

TEST(Projection, L15MatchesFrankWolfeOnFiveDims) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec d = 3.0 * sample_standard_normal(rng, 5);
    const double r = 0.5 + rng.uniform();
    const Vec z = project_lp_ball(d, 1.5, r);
    EXPECT_NEAR(testing::lp_norm(z, 1.5), r, 1e-8);
    EXPECT_LT((z - testing::l15_projection_frank_wolfe(d, r)).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LT(testing::l15_kkt_residual(d, z, r), 1e-8);
    EXPECT_LT(lp_projection_kkt_residual(d, z, 1.5, r), 1e-8);
  }
}

TEST(Projection, IdempotentAndShrinking) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(40));
    const Vec d = 2.0 * sample_standard_normal(rng, n);
    for (double p : {1.5, 2.0}) {
      const double r = 0.1 + 2.0 * rng.uniform();
      const Vec z = project_lp_ball(d, p, r);
      EXPECT_LE(testing::lp_norm(z, p), testing::lp_norm(d, p) + 1e-12);
      EXPECT_LE(testing::lp_norm(z, p), r * (1.0 + 1e-9));
      EXPECT_LT((project_lp_ball(z, p, r) - z).cwiseAbs().maxCoeff(), 1e-9);
      for (Eigen::Index i = 0; i < n; ++i) EXPECT_GE(z[i] * d[i], 0.0);
    }
  }
}

TEST(Projection, RejectsUnsupportedInputs) {
  EXPECT_THROW(project_lp_ball(Vec::Ones(2), 3.0, 1.0), std::invalid_argument);
  EXPECT_THROW(project_lp_ball(Vec::Ones(2), 2.0, 0.0), std::invalid_argument);
}

TEST(SvceRadius, ImageScaleGridAndDeskScaling) {
  const std::vector<double> img = svce_radius_grid(150528);
  ASSERT_EQ(img.size(), 4u);
  EXPECT_NEAR(img[0], 50.0, 1e-12);
  EXPECT_NEAR(img[3], 150.0, 1e-12);
  const std::vector<double> desk = svce_radius_grid(256);
  EXPECT_NEAR(desk[0], 50.0 * std::pow(256.0 / 150528.0, 2.0 / 3.0), 1e-12);
  EXPECT_NEAR(desk[3], 2.14, 0.01);
}

TEST(Svce, StaysInBallAndDomain) {
  Rng rng(3);
  const ClassifierModel m = ClassifierModel::trained(SmallNet::random({6, 12, 3}, Activation::Tanh, rng));
  for (int trial = 0; trial < 30; ++trial) {
    Vec xhat(6);
    for (Eigen::Index i = 0; i < 6; ++i) xhat[i] = rng.uniform();
    SvceConfig cfg;
    cfg.radius = 0.2 + rng.uniform();
    cfg.steps = 30;
    cfg.lower = 0.0;
    cfg.upper = 1.0;
    const VceResult r = svce(xhat, trial % 3, m, cfg);
    EXPECT_LE(testing::lp_norm(r.x - xhat, 1.5), cfg.radius + 1e-6);
    EXPECT_GE(r.x.minCoeff(), 0.0);
    EXPECT_LE(r.x.maxCoeff(), 1.0);
    EXPECT_EQ(r.method, "svce");
    EXPECT_NEAR(r.confidence, std::exp(class_log_probs(m, r.x)[trial % 3]), 1e-15);
  }
}

TEST(Svce, ConfidenceRisesOnBayesFixture) {
  const ClassifierModel m = ClassifierModel::bayes(blobs());
  Rng rng(4);
  int monotone = 0;
  const int runs = 100;
  for (int i = 0; i < runs; ++i) {
    const Vec xhat = blobs().sample(rng);
    SvceConfig cfg;
    cfg.radius = 2.0;
    cfg.steps = 40;
    const VceResult r = svce(xhat, 1, m, cfg);
    bool ok = true;
    for (std::size_t k = 1; k < r.trace.size(); ++k) ok = ok && r.trace[k].confidence >= r.trace[k - 1].confidence - 1e-12;
    monotone += ok;
  }
  EXPECT_GE(monotone, 95);
}

TEST(Svce, LargerBallNotWorse) {
  const ClassifierModel m = ClassifierModel::bayes(blobs());
  Rng rng(5);
  std::vector<double> small, large;
  for (int i = 0; i < 100; ++i) {
    const Vec xhat = blobs().sample(rng);
    SvceConfig a, b;
    a.radius = 0.5;
    b.radius = 2.0;
    small.push_back(svce(xhat, 1, m, a).confidence);
    large.push_back(svce(xhat, 1, m, b).confidence);
  }
  EXPECT_GE(median(large), median(small));
}

TEST(Blended, ZeroCoefficientsMatchUnguidedLateStart) {
  const NoiseSchedule s = build_default_schedule();
  const EpsilonModel m = EpsilonModel::analytic(blobs());
  const ClassifierModel cls = ClassifierModel::bayes(blobs());
  BlendedConfig bc;
  bc.classifier_coef = 0.0;
  bc.distance_coef = 0.0;
  GuidanceConfig gc;
  gc.classifier_coef = 0.0;
  gc.distance_coef = 0.0;
  Vec xhat(2);
  xhat << -2.0, 0.5;
  for (std::uint64_t i = 0; i < 10; ++i) {
    Rng a(6, i), b(6, i);
    const VceResult r = blended_vce(xhat, 1, cls, m, s, bc, a);
    EXPECT_EQ(r.x, generate_dvce(xhat, 1, cls, nullptr, m, s, gc, b).x);
    EXPECT_EQ(r.method, "blended");
    EXPECT_EQ(r.trace.size(), 100u);
  }
}

TEST(Blended, ShiftLinearInClassifierCoefficient) {
  // One step from t = 1 with fixed-large variance: x = mu + beta_1 C_c grad.
  const NoiseSchedule s = build_default_schedule();
  const EpsilonModel m = EpsilonModel::analytic(blobs());
  const ClassifierModel cls = ClassifierModel::bayes(blobs());
  Vec xhat(2);
  xhat << -1.0, 0.5;
  auto run = [&](double cc) {
    BlendedConfig bc;
    bc.classifier_coef = cc;
    bc.distance_coef = 0.0;
    bc.eta = 0.001;
    bc.variance = VarianceMode::FixedLarge;
    Rng rng(7);
    return blended_vce(xhat, 1, cls, m, s, bc, rng).x;
  };
  const Vec base = run(0.0), one = run(10.0), two = run(20.0);
  ASSERT_GT((one - base).norm(), 0.0);
  EXPECT_LT(((two - base) - 2.0 * (one - base)).norm(), 1e-12 * (1.0 + base.norm()));
}

// Expected to fail at desk scale: with weak normalized guidance the DVCE
// outcome is bimodal across seeds, so its seed variance matches the spread
// of the blended grid (ratio ~0.6 here, 0.8-1.2 on shapes16).
TEST(Blended, MoreSensitiveToCoefficientsThanDvceToSeeds) {
  const NoiseSchedule s = build_default_schedule();
  const EpsilonModel m = EpsilonModel::analytic(blobs());
  const ClassifierModel cls = ClassifierModel::bayes(blobs());
  Vec xhat(2);
  xhat << -2.0, 0.0;
  auto variance = [](const std::vector<double>& v) {
    double mean = 0.0, sq = 0.0;
    for (double x : v) mean += x / v.size();
    for (double x : v) sq += (x - mean) * (x - mean) / v.size();
    return sq;
  };
  std::vector<double> grid_conf;
  for (auto [cc, cd] : blended_coefficient_grid()) {
    BlendedConfig bc;
    bc.classifier_coef = cc;
    bc.distance_coef = cd;
    Rng rng(8);
    grid_conf.push_back(blended_vce(xhat, 1, cls, m, s, bc, rng).confidence);
  }
  std::vector<double> seed_conf;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng rng(9, i);
    seed_conf.push_back(generate_dvce(xhat, 1, cls, nullptr, m, s, GuidanceConfig{}, rng).confidence);
  }
  std::string dump;
  for (double c : grid_conf) dump += " " + std::to_string(c);
  dump += " |";
  for (double c : seed_conf) dump += " " + std::to_string(c);
  EXPECT_GT(variance(grid_conf) / std::max(variance(seed_conf), 1e-300), 1.0) << dump;
}

TEST(Blended, SelectionFollowsRule) {
  const NoiseSchedule s = build_default_schedule();
  const EpsilonModel m = EpsilonModel::analytic(blobs());
  const ClassifierModel cls = ClassifierModel::bayes(blobs());
  Rng rng(10);
  std::vector<std::pair<Vec, int>> calib;
  for (int i = 0; i < 8; ++i) calib.emplace_back(blobs().sample(rng), i % 2);
  const BlendedSelection sel = select_blended_setting(calib, cls, m, s, BlendedConfig{}, blended_coefficient_grid(), 0.9, 3, 2);
  ASSERT_EQ(sel.candidates.size(), 6u);
  const BlendedCandidate* best = nullptr;
  for (const auto& c : sel.candidates)
    if (c.mean_confidence >= 0.9 && (!best || c.median_l2 < best->median_l2)) best = &c;
  if (!best)
    best = &*std::max_element(sel.candidates.begin(), sel.candidates.end(),
                              [](const auto& a, const auto& b) { return a.mean_confidence < b.mean_confidence; });
  EXPECT_EQ(sel.chosen.classifier_coef, best->classifier_coef);
  EXPECT_EQ(sel.chosen.distance_coef, best->distance_coef);
  const BlendedSelection again = select_blended_setting(calib, cls, m, s, BlendedConfig{}, blended_coefficient_grid(), 0.9, 3, 1);
  EXPECT_EQ(again.candidates.front().median_l2, sel.candidates.front().median_l2);
}

}  // namespace
}  // namespace dvce
