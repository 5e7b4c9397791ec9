#include "dvce/baselines.hpp"

#include "dvce/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dvce {

namespace {

constexpr int kMaxBisection = 200;

double lp_norm(const Vec& v, double p) {
  if (p == 2.0) return v.norm();
  return std::pow(v.array().abs().pow(p).sum(), 1.0 / p);
}

void check_p(double p, const char* what) {
  if (p != 1.5 && p != 2.0) throw std::invalid_argument(std::string(what) + ": only p = 1.5 and p = 2 are supported");
}

// sqrt|z_i| for multiplier lam: positive root of s^2 + 1.5 lam s - |d| = 0,
// written without cancellation.
double root_s(double abs_d, double lam) {
  if (abs_d == 0.0) return 0.0;
  const double b = 1.5 * lam;
  return 2.0 * abs_d / (b + std::sqrt(b * b + 4.0 * abs_d));
}

Vec l15_candidate(const Vec& delta, double lam) {
  return delta.unaryExpr([lam](double d) {
    const double s = root_s(std::abs(d), lam);
    return std::copysign(s * s, d);
  });
}

// sum |z_i|^{3/2} - r^{3/2}, decreasing in lam
double l15_excess(const Vec& delta, double lam, double target) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    const double s = root_s(std::abs(delta[i]), lam);
    acc += s * s * s;
  }
  return acc - target;
}

}  // namespace

Vec project_lp_ball(const Vec& delta, double p, double r) {
  check_p(p, "project_lp_ball");
  if (!(r > 0.0)) throw std::invalid_argument("project_lp_ball: radius must be > 0");
  if (!delta.allFinite()) throw NonFiniteError("project_lp_ball: non-finite input");
  const double n = lp_norm(delta, p);
  if (n <= r) return delta;
  if (p == 2.0) return delta * (r / n);

  const double target = std::pow(r, 1.5);
  double lo = 0.0, hi = 1.0;
  int it = 0;
  while (l15_excess(delta, hi, target) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (++it > kMaxBisection) throw ProjectionError("project_lp_ball: could not bracket the multiplier");
  }
  for (;; ++it) {
    if (it > kMaxBisection) throw ProjectionError("project_lp_ball: bisection did not converge in 200 iterations");
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double excess = l15_excess(delta, mid, target);
    if (std::abs(excess) <= 1e-15 * target) return l15_candidate(delta, mid);
    if (excess > 0.0) lo = mid;
    else hi = mid;
  }
  // hi is feasible by construction
  return l15_candidate(delta, hi);
}

double lp_projection_kkt_residual(const Vec& delta, const Vec& z, double p, double r) {
  check_p(p, "lp_projection_kkt_residual");
  require_same_size(delta, z, "lp_projection_kkt_residual");
  const double scale = std::max(1.0, delta.lpNorm<Eigen::Infinity>());
  if (lp_norm(delta, p) <= r) return (z - delta).lpNorm<Eigen::Infinity>() / scale;

  // gradient of sum |z_i|^p
  const Vec g = p == 2.0 ? Vec(2.0 * z) : Vec(z.unaryExpr([](double v) {
    return 1.5 * std::sqrt(std::abs(v)) * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
  }));
  const Vec resid_dir = delta - z;
  const double gg = g.squaredNorm();
  const double lam = gg > 0.0 ? resid_dir.dot(g) / gg : 0.0;
  const double stationarity = (resid_dir - lam * g).lpNorm<Eigen::Infinity>() / scale;
  const double feasibility = std::abs(lp_norm(z, p) - r) / std::max(1.0, r);
  return std::max({stationarity, feasibility, std::max(0.0, -lam)});
}

VceResult svce(const Vec& xhat, int y, const ClassifierModel& robust, const SvceConfig& cfg) {
  if (!(cfg.radius > 0.0) || cfg.steps <= 0) throw std::invalid_argument("svce: radius and steps must be > 0");
  if (xhat.size() != robust.dim()) throw DimensionError("svce: input and classifier dimensions differ");
  if (y < 0 || y >= robust.classes()) throw std::out_of_range("svce: target class out of range");
  const double step = cfg.step_size > 0.0 ? cfg.step_size : 0.05 * cfg.radius;

  VceResult result;
  result.target = y;
  result.method = "svce";
  Vec x = xhat.cwiseMax(cfg.lower).cwiseMin(cfg.upper);
  const Vec center = x;
  double best = std::exp(class_log_probs(robust, x)[y]);
  result.x = x;
  result.trace.reserve(static_cast<std::size_t>(cfg.steps));
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (int k = 1; k <= cfg.steps; ++k) {
    const Vec g = grad_log_prob(robust, x, y);
    const double gn = g.norm();
    if (!(gn > 1e-300)) break;
    const Vec delta = project_lp_ball(x + (step / gn) * g - center, 1.5, cfg.radius);
    x = (center + delta).cwiseMax(cfg.lower).cwiseMin(cfg.upper);
    const double conf = std::exp(class_log_probs(robust, x)[y]);
    result.trace.push_back({k, conf, distance_value(DistanceKind::L15, x, center), nan});
    if (conf > best) {
      best = conf;
      result.x = x;
    }
  }
  result.confidence = best;
  return result;
}

std::vector<double> svce_radius_grid(Eigen::Index d) {
  if (d <= 0) throw std::invalid_argument("svce_radius_grid: dimension must be > 0");
  const double scale = std::pow(static_cast<double>(d) / 150528.0, 2.0 / 3.0);
  return {50.0 * scale, 75.0 * scale, 100.0 * scale, 150.0 * scale};
}

VceResult blended_vce(const Vec& xhat, int y, const ClassifierModel& target, const EpsilonModel& m,
                      const NoiseSchedule& s, const BlendedConfig& cfg, Rng& rng) {
  if (!(cfg.classifier_coef >= 0.0) || !(cfg.distance_coef >= 0.0) || !(cfg.aux_weight >= 0.0)) {
    throw std::invalid_argument("blended_vce: coefficients must be >= 0");
  }
  if (xhat.size() != m.dim() || target.dim() != m.dim()) {
    throw DimensionError("blended_vce: input, classifier and denoiser dimensions differ");
  }
  if (y < 0 || y >= target.classes()) throw std::out_of_range("blended_vce: target class out of range");

  VceResult result;
  result.target = y;
  result.seed = rng.seed();
  result.stream = rng.stream_index();
  result.method = "blended";

  const Eigen::Index d = xhat.size();
  LateStart init = late_start_init(s, xhat, cfg.eta, rng);
  Vec x = std::move(init.state);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (int t = init.start_step; t >= 1; --t) {
    const DenoisedEstimate est(m, s, x, t);
    const Vec mu = reverse_mean_from_eps(s, x, t, est.output().eps_hat);
    Vec upstream = Vec::Zero(d);
    if (cfg.classifier_coef > 0.0) upstream += cfg.classifier_coef * grad_log_prob(target, est.x0(), y);
    if (cfg.distance_coef > 0.0) {
      upstream -= cfg.distance_coef * (distance_subgradient(DistanceKind::L2, est.x0(), xhat) +
                                       cfg.aux_weight * distance_subgradient(DistanceKind::L1, est.x0(), xhat));
    }
    const Vec sigma = reverse_variance(s, t, cfg.variance, d);
    const Vec mu_t = upstream.isZero(0.0) ? mu : raw_guided_mean(mu, sigma, est.pullback(upstream));

    result.trace.push_back({t, std::exp(class_log_probs(target, est.x0())[y]),
                            distance_value(DistanceKind::L2, est.x0(), xhat), nan});
    x = t > 1 ? Vec(mu_t + sigma.cwiseSqrt().cwiseProduct(sample_standard_normal(rng, d))) : mu_t;
    if (!x.allFinite()) {
      throw NonFiniteError("blended_vce: non-finite state at step t=" + std::to_string(t));
    }
  }
  result.x = std::move(x);
  result.confidence = std::exp(class_log_probs(target, result.x)[y]);
  return result;
}

std::vector<std::pair<double, double>> blended_coefficient_grid() {
  return {{10.0, 100.0}, {10.0, 500.0}, {10.0, 1000.0}, {25.0, 100.0}, {25.0, 500.0}, {25.0, 1000.0}};
}

BlendedSelection select_blended_setting(const std::vector<std::pair<Vec, int>>& calibration,
                                        const ClassifierModel& target, const EpsilonModel& m,
                                        const NoiseSchedule& s, const BlendedConfig& base,
                                        const std::vector<std::pair<double, double>>& grid,
                                        double min_confidence, std::uint64_t seed, int jobs) {
  if (calibration.empty() || grid.empty()) throw std::invalid_argument("select_blended_setting: empty input");
  const std::size_t n = calibration.size();
  std::vector<double> conf(n * grid.size()), l2(n * grid.size());
  parallel_for(conf.size(), jobs, [&](std::size_t job) {
    const std::size_t g = job / n, i = job % n;
    BlendedConfig cfg = base;
    cfg.classifier_coef = grid[g].first;
    cfg.distance_coef = grid[g].second;
    Rng rng(seed, i);
    const auto& [xhat, y] = calibration[i];
    const VceResult r = blended_vce(xhat, y, target, m, s, cfg, rng);
    conf[job] = r.confidence;
    l2[job] = (r.x - xhat).norm();
  });

  BlendedSelection sel;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += conf[g * n + i];
    sel.candidates.push_back({grid[g].first, grid[g].second, c / static_cast<double>(n),
                              median(std::vector<double>(l2.begin() + static_cast<std::ptrdiff_t>(g * n),
                                                         l2.begin() + static_cast<std::ptrdiff_t>((g + 1) * n)))});
  }
  const BlendedCandidate* best = nullptr;
  for (const auto& c : sel.candidates) {
    if (c.mean_confidence >= min_confidence && (!best || c.median_l2 < best->median_l2)) best = &c;
  }
  if (!best) {
    for (const auto& c : sel.candidates) {
      if (!best || c.mean_confidence > best->mean_confidence) best = &c;
    }
  }
  sel.chosen = base;
  sel.chosen.classifier_coef = best->classifier_coef;
  sel.chosen.distance_coef = best->distance_coef;
  return sel;
}

}  // namespace dvce
