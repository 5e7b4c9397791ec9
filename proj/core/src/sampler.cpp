#include "dvce/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dvce {

namespace {

void require_finite_state(const Vec& x, int t, const std::vector<TraceStep>* trace = nullptr) {
  if (x.allFinite()) return;
  std::ostringstream msg;
  msg << "reverse diffusion produced a non-finite state at step t=" << t;
  if (trace && !trace->empty()) {
    const auto& last = trace->back();
    msg << " (trace: " << trace->size() << " steps, last t=" << last.t << " confidence=" << last.confidence
        << " distance=" << last.distance << ")";
  }
  throw NonFiniteError(msg.str());
}

Vec step_noise(const NoiseSchedule& s, int t, VarianceMode mode, Rng& rng, Eigen::Index d) {
  const Vec var = reverse_variance(s, t, mode, d);
  return var.cwiseSqrt().cwiseProduct(sample_standard_normal(rng, d));
}

}  // namespace

Vec sample_unconditional(const EpsilonModel& m, const NoiseSchedule& s, Rng& rng, VarianceMode variance) {
  const Eigen::Index d = m.dim();
  Vec x = sample_standard_normal(rng, d);
  for (int t = s.steps(); t >= 1; --t) {
    const Vec mu = reverse_mean_from_eps(s, x, t, predict_epsilon(m, s, x, t).eps_hat);
    x = t > 1 ? Vec(mu + step_noise(s, t, variance, rng, d)) : mu;
    require_finite_state(x, t);
  }
  return x;
}

LateStart late_start_init(const NoiseSchedule& s, const Vec& xhat, double eta, Rng& rng) {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("late_start_init: eta must lie in (0, 1]");
  const int T = s.steps();
  const int start = std::clamp(static_cast<int>(std::lround(eta * T)), 1, T);
  const Vec eps = sample_standard_normal(rng, xhat.size());
  return {forward_sample(s, xhat, start, eps), start};
}

Vec guided_classifier_gradient(const DenoisedEstimate& est, const ClassifierModel& m, int y) {
  return est.pullback(grad_log_prob(m, est.x0(), y));
}

VceResult generate_dvce(const Vec& xhat, int y, const ClassifierModel& target, const ClassifierModel* robust,
                        const EpsilonModel& m, const NoiseSchedule& s, const GuidanceConfig& cfg, Rng& rng) {
  cfg.validate();
  if (xhat.size() != m.dim() || target.dim() != m.dim()) {
    throw DimensionError("generate_dvce: input, classifier and denoiser dimensions differ");
  }
  if (y < 0 || y >= target.classes()) throw std::out_of_range("generate_dvce: target class out of range");
  GuideMode mode = cfg.guide;
  if (mode == GuideMode::Auto) mode = robust ? GuideMode::Cone : GuideMode::Target;
  if (mode == GuideMode::Cone && robust == nullptr) {
    throw std::invalid_argument("generate_dvce: cone projection requested without a robust model");
  }

  VceResult result;
  result.target = y;
  result.seed = rng.seed();
  result.stream = rng.stream_index();
  result.method = "dvce";

  const Eigen::Index d = xhat.size();
  LateStart init = late_start_init(s, xhat, cfg.eta, rng);
  Vec x = std::move(init.state);
  result.trace.reserve(static_cast<std::size_t>(init.start_step));

  for (int t = init.start_step; t >= 1; --t) {
    const DenoisedEstimate est(m, s, x, t);
    const Vec mu = reverse_mean_from_eps(s, x, t, est.output().eps_hat);
    const Vec grad_target = guided_classifier_gradient(est, target, y);

    Vec g_proj;
    double cone_angle = std::numeric_limits<double>::quiet_NaN();
    if (mode == GuideMode::Cone) {
      const Vec grad_guide = guided_classifier_gradient(est, *robust, y);
      if (grad_target.norm() > cfg.norm_floor && grad_guide.norm() > cfg.norm_floor) {
        g_proj = cone_project(grad_guide, grad_target, cfg.cone_angle_deg, cfg.norm_floor);
        if (g_proj.norm() > cfg.norm_floor) cone_angle = angle_between(g_proj, grad_target);
      } else {
        // a saturated target or guide leaves no cone to project into
        g_proj = Vec::Zero(d);
      }
    } else {
      g_proj = grad_target;
    }

    const Vec grad_dist = est.pullback(distance_subgradient(cfg.distance, est.x0(), xhat));
    const Vec g_update = guidance_update(cfg, g_proj, grad_dist);
    const Vec sigma = reverse_variance(s, t, cfg.variance, d);
    const Vec mu_t = adaptive_mean(mu, sigma, g_update);

    result.trace.push_back({t, std::exp(class_log_probs(target, est.x0())[y]),
                            distance_value(cfg.distance, est.x0(), xhat), cone_angle});

    x = t > 1 ? Vec(mu_t + sigma.cwiseSqrt().cwiseProduct(sample_standard_normal(rng, d))) : mu_t;
    require_finite_state(x, t, &result.trace);
  }
  result.x = std::move(x);
  result.confidence = std::exp(class_log_probs(target, result.x)[y]);
  return result;
}

}  // namespace dvce
