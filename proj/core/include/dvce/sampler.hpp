#pragma once

#include "dvce/classifier.hpp"
#include "dvce/denoiser.hpp"
#include "dvce/guidance.hpp"
#include "dvce/schedule.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dvce {

struct TraceStep {
  int t;
  double confidence;  // p_target(y | f_dn(x_t, t))
  double distance;    // d(xhat, f_dn(x_t, t)) for the configured distance
  double cone_angle;  // angle(g_proj, grad_target) in radians; NaN without a cone
};

struct VceResult {
  Vec x;
  int target = 0;
  double confidence = 0.0;  // p_target(y | x)
  std::vector<TraceStep> trace;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::string method;
};

/// Ancestral sampling from x_T ~ N(0, I). The step t = 1 returns the mean.
Vec sample_unconditional(const EpsilonModel& m, const NoiseSchedule& s, Rng& rng,
                         VarianceMode variance = VarianceMode::FixedSmall);

struct LateStart {
  Vec state;
  int start_step;
};

/// T_start = round(eta * T) (at least 1); state = forward_sample(xhat, T_start, eps).
LateStart late_start_init(const NoiseSchedule& s, const Vec& xhat, double eta, Rng& rng);

/// grad_{x_t} log p(y | f_dn(x_t, t)) through the denoiser Jacobian.
Vec guided_classifier_gradient(const DenoisedEstimate& est, const ClassifierModel& m, int y);

/// Counterfactual for xhat into class y: late start, then per step the
/// normalized classifier/distance update (cone-projected robust gradient in
/// the classifier slot when a guide is used) scaled by Sigma_t |mu_theta|.
/// robust may be null unless cfg.guide == GuideMode::Cone.
VceResult generate_dvce(const Vec& xhat, int y, const ClassifierModel& target,
                        const ClassifierModel* robust, const EpsilonModel& m, const NoiseSchedule& s,
                        const GuidanceConfig& cfg, Rng& rng);

}  // namespace dvce
