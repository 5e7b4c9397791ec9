#include "dvce/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace dvce {

std::size_t NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bars_[check(t)];
}

std::string NoiseSchedule::fingerprint() const {
  return "T=" + std::to_string(steps()) + " beta_start=" + format_double(beta_start_) +
         " beta_end=" + format_double(beta_end_);
}

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("build_linear_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.betas_.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha_bars_.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.posterior_vars_.assign(static_cast<std::size_t>(T) + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    s.betas_[t] = beta;
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - beta);
    s.posterior_vars_[t] = (1.0 - s.alpha_bars_[t - 1]) / (1.0 - s.alpha_bars_[t]) * beta;
  }
  // Exhaustive invariant check.
  for (int t = 1; t <= T; ++t) {
    const double beta = s.betas_[t];
    const bool ok = beta > 0.0 && beta < 1.0 && s.alpha_bars_[t] < s.alpha_bars_[t - 1] &&
                    s.alpha_bars_[t] > 0.0 && s.posterior_vars_[t] <= beta &&
                    (t == 1 || s.posterior_vars_[t] > 0.0);
    if (!ok) throw std::logic_error("build_linear_schedule: invariant violated at t=" + std::to_string(t));
  }
  return s;
}

NoiseSchedule build_default_schedule(int T) {
  if (T < 1) throw std::invalid_argument("build_default_schedule: T must be >= 1");
  const double scale = 1000.0 / static_cast<double>(T);
  return build_linear_schedule(T, scale * 1e-4, scale * 0.02);
}

Vec forward_sample(const NoiseSchedule& s, const Vec& x0, int t, const Vec& eps) {
  require_same_size(x0, eps, "forward_sample");
  s.beta(t);  // range check, t = 0 is not a forward step
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Vec q_posterior_mean(const NoiseSchedule& s, const Vec& x0, const Vec& xt, int t) {
  require_same_size(x0, xt, "q_posterior_mean");
  const double beta = s.beta(t);
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
  return c0 * x0 + ct * xt;
}

}  // namespace dvce
