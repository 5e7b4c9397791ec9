#include "dvce/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dvce {

std::string to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::L1: return "l1";
    case DistanceKind::L2: return "l2";
    case DistanceKind::L15: return "l1.5";
  }
  return "?";
}

DistanceKind parse_distance_kind(const std::string& name) {
  if (name == "l1") return DistanceKind::L1;
  if (name == "l2") return DistanceKind::L2;
  if (name == "l1.5" || name == "l15") return DistanceKind::L15;
  throw FormatError("unknown distance kind '" + name + "'");
}

std::string to_string(GuideMode m) {
  switch (m) {
    case GuideMode::Auto: return "auto";
    case GuideMode::Cone: return "cone";
    case GuideMode::Target: return "target";
    case GuideMode::RobustTarget: return "robust-target";
  }
  return "?";
}

GuideMode parse_guide_mode(const std::string& name) {
  if (name == "auto") return GuideMode::Auto;
  if (name == "cone") return GuideMode::Cone;
  if (name == "target") return GuideMode::Target;
  if (name == "robust-target") return GuideMode::RobustTarget;
  throw FormatError("unknown guide mode '" + name + "'");
}

void GuidanceConfig::validate() const {
  if (!(classifier_coef >= 0.0) || !(distance_coef >= 0.0)) {
    throw std::invalid_argument("GuidanceConfig: C_c and C_d must be >= 0");
  }
  if (!(cone_angle_deg > 0.0 && cone_angle_deg < 90.0)) {
    throw std::invalid_argument("GuidanceConfig: cone angle must lie in (0, 90) degrees");
  }
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("GuidanceConfig: eta must lie in (0, 1]");
  if (!(norm_floor > 0.0)) throw std::invalid_argument("GuidanceConfig: norm_floor must be > 0");
}

double angle_between(const Vec& a, const Vec& b) {
  require_same_size(a, b, "angle_between");
  const double nb = b.norm();
  const double along = a.dot(b) / nb;
  const double perp = (a - (along / nb) * b).norm();
  return std::atan2(perp, along);
}

Vec cone_project(const Vec& w, const Vec& v, double alpha_deg, double norm_floor) {
  require_same_size(w, v, "cone_project");
  if (!(alpha_deg > 0.0 && alpha_deg < 90.0)) {
    throw std::invalid_argument("cone_project: alpha must lie in (0, 90) degrees");
  }
  const double nv = v.norm();
  const double nw = w.norm();
  if (!(nv > norm_floor)) throw std::invalid_argument("cone_project: |v| is below the norm floor");
  if (!(nw > norm_floor)) throw std::invalid_argument("cone_project: |w| is below the norm floor");

  const double alpha = alpha_deg * std::numbers::pi / 180.0;
  const Vec v_unit = v / nv;
  const double along = w.dot(v_unit);
  const Vec perp = w - along * v_unit;
  const double n_perp = perp.norm();
  const double theta = std::atan2(n_perp, along);
  if (theta <= alpha + 1e-12) return w;
  if (n_perp < norm_floor) return Vec::Zero(w.size());  // antiparallel

  const Vec u = std::sin(alpha) * (perp / n_perp) + std::cos(alpha) * v_unit;
  return std::max(u.dot(w), 0.0) * u;
}

double distance_value(DistanceKind kind, const Vec& x, const Vec& xhat) {
  require_same_size(x, xhat, "distance_value");
  const Vec delta = x - xhat;
  switch (kind) {
    case DistanceKind::L1: return delta.lpNorm<1>();
    case DistanceKind::L2: return delta.norm();
    case DistanceKind::L15: return std::pow(delta.array().abs().pow(1.5).sum(), 2.0 / 3.0);
  }
  return 0.0;
}

Vec distance_subgradient(DistanceKind kind, const Vec& x, const Vec& xhat) {
  require_same_size(x, xhat, "distance_subgradient");
  const Vec delta = x - xhat;
  switch (kind) {
    case DistanceKind::L1:
      return delta.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    case DistanceKind::L2: {
      const double n = delta.norm();
      return n > 0.0 ? Vec(delta / n) : Vec::Zero(delta.size());
    }
    case DistanceKind::L15: {
      // d = S^{2/3}, S = sum |d_i|^{3/2}  =>  dd/dd_i = S^{-1/3} |d_i|^{1/2} sign(d_i)
      const double S = delta.array().abs().pow(1.5).sum();
      if (!(S > 0.0)) return Vec::Zero(delta.size());
      const double scale = std::pow(S, -1.0 / 3.0);
      return delta.unaryExpr([scale](double v) {
        return v == 0.0 ? 0.0 : scale * std::sqrt(std::abs(v)) * (v > 0.0 ? 1.0 : -1.0);
      });
    }
  }
  return Vec::Zero(delta.size());
}

Vec guidance_update(const GuidanceConfig& cfg, const Vec& grad_cls, const Vec& grad_dist) {
  require_same_size(grad_cls, grad_dist, "guidance_update");
  Vec g = Vec::Zero(grad_cls.size());
  const double nc = grad_cls.norm();
  const double nd = grad_dist.norm();
  if (nc >= cfg.norm_floor) g += (cfg.classifier_coef / nc) * grad_cls;
  if (nd >= cfg.norm_floor) g -= (cfg.distance_coef / nd) * grad_dist;
  return g;
}

Vec adaptive_mean(const Vec& mu_theta, const Vec& sigma_diag, const Vec& g_update) {
  require_same_size(mu_theta, sigma_diag, "adaptive_mean");
  require_same_size(mu_theta, g_update, "adaptive_mean");
  return mu_theta + mu_theta.norm() * sigma_diag.cwiseProduct(g_update);
}

Vec raw_guided_mean(const Vec& mu_theta, const Vec& sigma_diag, const Vec& grad_combined) {
  require_same_size(mu_theta, sigma_diag, "raw_guided_mean");
  require_same_size(mu_theta, grad_combined, "raw_guided_mean");
  return mu_theta + sigma_diag.cwiseProduct(grad_combined);
}

}  // namespace dvce
