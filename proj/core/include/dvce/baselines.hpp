#pragma once

#include "dvce/classifier.hpp"
#include "dvce/denoiser.hpp"
#include "dvce/sampler.hpp"
#include "dvce/schedule.hpp"

#include <limits>
#include <stdexcept>
#include <vector>

namespace dvce {

struct ProjectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Euclidean projection of delta onto {z : |z|_p <= r} for p in {1.5, 2}.
/// p = 2 scales radially. p = 1.5 solves the stationarity conditions
/// z_i + 1.5 lambda |z_i|^{1/2} = |delta_i| per coordinate (a quadratic in
/// sqrt|z_i|) and bisects on lambda. Throws ProjectionError when the
/// bisection has not converged after 200 iterations.
Vec project_lp_ball(const Vec& delta, double p, double r);

/// Max violation of the projection optimality conditions at z = proj(delta):
/// |z|_p = r (when delta was outside), and delta - z parallel to the
/// gradient of |.|_p^p at z with a nonnegative multiplier.
double lp_projection_kkt_residual(const Vec& delta, const Vec& z, double p, double r);

struct SvceConfig {
  double radius = 1.0;
  int steps = 100;
  double step_size = 0.0;  // <= 0 selects 0.05 * radius
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

/// Normalized gradient ascent on log p(y | x) inside the l1.5 ball around
/// xhat, clipped to [lower, upper]. Returns the best-confidence iterate.
VceResult svce(const Vec& xhat, int y, const ClassifierModel& robust, const SvceConfig& cfg);

/// {50, 75, 100, 150} * (d / 150528)^{2/3}, the image-scale radii carried
/// over to dimension d.
std::vector<double> svce_radius_grid(Eigen::Index d);

struct BlendedConfig {
  double classifier_coef = 10.0;
  double distance_coef = 100.0;
  double aux_weight = 0.1;  // l1 term relative to l2
  double eta = 0.5;
  VarianceMode variance = VarianceMode::FixedSmall;
};

/// Late-start guided sampling with the raw gradient of
/// C_c log p(y|x0) - C_d (|x0 - xhat|_2 + aux_weight |x0 - xhat|_1), where
/// x0 = f_dn(x_t, t), added to the reverse mean as Sigma_t * grad.
VceResult blended_vce(const Vec& xhat, int y, const ClassifierModel& target, const EpsilonModel& m,
                      const NoiseSchedule& s, const BlendedConfig& cfg, Rng& rng);

struct BlendedCandidate {
  double classifier_coef;
  double distance_coef;
  double mean_confidence;
  double median_l2;
};

struct BlendedSelection {
  BlendedConfig chosen;
  std::vector<BlendedCandidate> candidates;  // grid order, C_c major
};

/// The C_c 10 / 25 by C_d 100 / 500 / 1000 grid.
std::vector<std::pair<double, double>> blended_coefficient_grid();

/// Runs blended_vce over a calibration set for every (C_c, C_d) pair and
/// keeps the setting with the smallest median l2 change among those whose
/// mean target confidence reaches min_confidence; when none does, the one
/// with the highest mean confidence. Sample i uses Rng(seed, i).
BlendedSelection select_blended_setting(const std::vector<std::pair<Vec, int>>& calibration,
                                        const ClassifierModel& target, const EpsilonModel& m,
                                        const NoiseSchedule& s, const BlendedConfig& base,
                                        const std::vector<std::pair<double, double>>& grid,
                                        double min_confidence, std::uint64_t seed, int jobs = 1);

}  // namespace dvce
