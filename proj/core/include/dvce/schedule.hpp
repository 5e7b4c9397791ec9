#pragma once

#include "dvce/numerics.hpp"

#include <string>
#include <vector>

namespace dvce {

/// Variance schedule for T diffusion steps. Timesteps are 1-based; index 0
/// exists only for alpha_bar (alpha_bar(0) == 1).
class NoiseSchedule {
 public:
  int steps() const { return static_cast<int>(betas_.size()) - 1; }

  double beta(int t) const { return betas_[check(t)]; }
  double alpha(int t) const { return 1.0 - betas_[check(t)]; }
  double alpha_bar(int t) const;
  /// beta~_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t; zero at t = 1.
  double posterior_variance(int t) const { return posterior_vars_[check(t)]; }

  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  /// "T=<T> beta_start=<b0> beta_end=<b1>" with round-trip precision.
  std::string fingerprint() const;

 private:
  friend NoiseSchedule build_linear_schedule(int, double, double);
  std::size_t check(int t) const;

  double beta_start_ = 0.0, beta_end_ = 0.0;
  std::vector<double> betas_;       // [0] unused
  std::vector<double> alpha_bars_;  // [0] == 1
  std::vector<double> posterior_vars_;
};

/// Linearly interpolated betas from beta_start (t=1) to beta_end (t=T).
NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);

/// The 1000-step reference range [1e-4, 0.02] rescaled by 1000/T, the
/// usual way a linear schedule is shortened. T=200 gives [5e-4, 0.1] and
/// alpha_bar_T ~ 3.0e-5.
NoiseSchedule build_default_schedule(int T = 200);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Vec forward_sample(const NoiseSchedule& s, const Vec& x0, int t, const Vec& eps);

/// Mean of q(x_{t-1} | x_t, x_0).
Vec q_posterior_mean(const NoiseSchedule& s, const Vec& x0, const Vec& xt, int t);

}  // namespace dvce
