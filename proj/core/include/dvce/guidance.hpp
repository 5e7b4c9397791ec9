#pragma once

#include "dvce/denoiser.hpp"
#include "dvce/numerics.hpp"

#include <string>

namespace dvce {

enum class DistanceKind { L1, L2, L15 };

std::string to_string(DistanceKind k);
DistanceKind parse_distance_kind(const std::string& name);

/// Which gradient fills the classifier slot of the update.
///  Auto        cone projection when a robust guide is supplied, else the target gradient
///  Cone        cone projection; a robust guide is required
///  Target      target gradient only
///  RobustTarget the target is itself robust: its gradient, no cone
enum class GuideMode { Auto, Cone, Target, RobustTarget };

std::string to_string(GuideMode m);
GuideMode parse_guide_mode(const std::string& name);

struct GuidanceConfig {
  double classifier_coef = 0.1;   // C_c
  double distance_coef = 0.15;    // C_d
  double cone_angle_deg = 30.0;   // alpha
  double eta = 0.5;               // late start T_start / T
  DistanceKind distance = DistanceKind::L1;
  VarianceMode variance = VarianceMode::FixedSmall;
  double norm_floor = 1e-12;
  GuideMode guide = GuideMode::Auto;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Angle in radians between two nonzero vectors.
double angle_between(const Vec& a, const Vec& b);

/// Euclidean projection of w onto {z : angle(z, v) <= alpha}.
/// Inside the cone w is returned unchanged. Outside, with
/// u = sin(alpha) P_perp(w)/|P_perp(w)| + cos(alpha) v/|v|, the result is
/// max(<u, w>, 0) u. The clamp at zero covers angle(w, v) > 90 + alpha,
/// where the projection is the apex; an exactly antiparallel w also maps to 0.
/// Throws std::invalid_argument for |v| or |w| <= norm_floor or alpha outside (0, 90).
Vec cone_project(const Vec& w, const Vec& v, double alpha_deg, double norm_floor = 1e-12);

double distance_value(DistanceKind kind, const Vec& x, const Vec& xhat);

/// Gradient of d(x, xhat) in x. Minimum-norm subgradient (0) at kinks:
/// l1 ties, l2 and l1.5 coincidence.
Vec distance_subgradient(DistanceKind kind, const Vec& x, const Vec& xhat);

/// C_c g_cls/|g_cls| - C_d g_dist/|g_dist|; terms with norm below
/// cfg.norm_floor contribute nothing.
Vec guidance_update(const GuidanceConfig& cfg, const Vec& grad_cls, const Vec& grad_dist);

/// mu + (sigma .* g) |mu|_2
Vec adaptive_mean(const Vec& mu_theta, const Vec& sigma_diag, const Vec& g_update);

/// mu + sigma .* grad, no normalization.
Vec raw_guided_mean(const Vec& mu_theta, const Vec& sigma_diag, const Vec& grad_combined);

}  // namespace dvce
