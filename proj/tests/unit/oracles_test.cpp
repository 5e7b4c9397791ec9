// Checks on the test oracles themselves, against hand-computable cases.
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace dvce::testing {
namespace {

TEST(Oracle, FrankWolfeOnSymmetricInput) {
  // delta on the diagonal: the projection stays on it, |z|_1.5 = r gives
  // z_i = r / n^(2/3).
  const Vec d = Vec::Constant(4, 5.0);
  const Vec z = l15_projection_frank_wolfe(d, 2.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(z[i], 2.0 / std::pow(4.0, 2.0 / 3.0), 1e-7);
}

TEST(Oracle, FrankWolfeOneDimensional) {
  Vec d(1);
  d << -3.0;
  EXPECT_NEAR(l15_projection_frank_wolfe(d, 1.0)[0], -1.0, 1e-10);
}

TEST(Oracle, KktFlagsWrongPoints) {
  const Vec d = Vec::Constant(3, 2.0);
  const Vec good = l15_projection_frank_wolfe(d, 1.0);
  EXPECT_LT(l15_kkt_residual(d, good, 1.0), 1e-7);
  EXPECT_GT(l15_kkt_residual(d, 0.5 * good, 1.0), 0.1);
  Vec skew = good;
  skew[0] *= 1.2;
  skew[1] *= 0.7;
  EXPECT_GT(l15_kkt_residual(d, skew, 1.0), 1e-3);
}

TEST(Oracle, NormalCdf) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(1.959963984540054), 0.975, 1e-12);
}

TEST(Oracle, MomentsOfKnownSet) {
  Mat s(1, 4);
  s << 1, 2, 3, 4;
  const Moments m = sample_moments(s);
  EXPECT_DOUBLE_EQ(m.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(m.cov(0, 0), 5.0 / 3.0);
}

}  // namespace
}  // namespace dvce::testing
