// Acceptance suite: one PASS/FAIL line per criterion at its stated
// tolerance and runtime limit. Arguments select criteria by number.

#include "dvce/baselines.hpp"
#include "dvce/datasets.hpp"
#include "dvce/evaluation.hpp"
#include "dvce/guidance.hpp"
#include "dvce/sampler.hpp"
#include "dvce_cli/app.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dvce;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> check;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr double kDeg = std::numbers::pi / 180.0;

Outcome cone_suite() {
  Rng rng(101);
  int outside_angle = 0, descent = 0, moved_inside = 0, not_idempotent = 0, inside_cases = 0;
  double worst_angle = 0.0, worst_idem = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.uniform_index(63));
    const Vec v = sample_standard_normal(rng, d);
    Vec w = sample_standard_normal(rng, d);
    const double alpha = 90.0 * (0.001 + 0.998 * rng.uniform());
    if (trial % 4 == 0) {
      // force an inside-the-cone input: rotate v toward w by less than alpha
      const Vec vn = v.normalized();
      const Vec perp = (w - w.dot(vn) * vn).normalized();
      const double phi = alpha * kDeg * rng.uniform() * 0.999;
      w = (std::cos(phi) * vn + std::sin(phi) * perp) * (0.1 + 3.0 * rng.uniform());
    }
    const Vec out = cone_project(w, v, alpha);
    if (angle_between(w, v) <= alpha * kDeg) {
      ++inside_cases;
      moved_inside += out != w;
    }
    if (out.dot(v) < -1e-9) ++descent;
    if (out.norm() > 0.0) {
      const double excess = angle_between(out, v) - alpha * kDeg;
      worst_angle = std::max(worst_angle, excess);
      outside_angle += excess > 1e-6;
      const double idem = (cone_project(out, v, alpha) - out).cwiseAbs().maxCoeff();
      worst_idem = std::max(worst_idem, idem);
      not_idempotent += idem > 1e-9;
    }
  }
  const bool pass = outside_angle == 0 && descent == 0 && moved_inside == 0 && not_idempotent == 0 && inside_cases > 0;
  return {pass, fmt("(a) angle excess max %.2e rad, %d over; (b) %d descent; (c) %d/%d inside moved; (d) idem max %.2e",
                    worst_angle, outside_angle, descent, moved_inside, inside_cases, worst_idem)};
}

Outcome algebraic_identities() {
  Rng rng(202);
  double worst_fdn = 0.0, worst_mu = 0.0, worst_mu_model = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int T = 1 + static_cast<int>(rng.uniform_index(300));
    const double b0 = 1e-5 + 0.02 * rng.uniform();
    const NoiseSchedule s = build_linear_schedule(T, b0, b0 + (0.05 - b0) * rng.uniform());
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(T)));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(16));
    const Vec x0 = sample_standard_normal(rng, d), eps = sample_standard_normal(rng, d);
    const Vec xt = forward_sample(s, x0, t, eps);
    // A point-mass prior at x0 makes the analytic model's eps_hat the true eps.
    const EpsilonModel exact = EpsilonModel::analytic(GaussianMixture({1.0}, Mat(x0), 1e-300, {0}));
    worst_fdn = std::max(worst_fdn, (f_dn(exact, s, xt, t) - x0).norm() / x0.norm());
    const Vec post = q_posterior_mean(s, x0, xt, t);
    worst_mu = std::max(worst_mu, (reverse_mean_from_eps(s, xt, t, eps) - post).norm() / post.norm());
    worst_mu_model = std::max(worst_mu_model, (reverse_mean_mu_theta(exact, s, xt, t) - post).norm() / post.norm());
  }
  const bool pass = worst_fdn <= 1e-9 && worst_mu <= 1e-9 && worst_mu_model <= 1e-9;
  return {pass, fmt("f_dn max rel %.2e; mu_theta vs q-posterior max rel %.2e (model path %.2e)", worst_fdn, worst_mu,
                    worst_mu_model)};
}

Outcome gradient_oracle() {
  Rng rng(303);
  const NoiseSchedule s = build_default_schedule();
  std::vector<std::pair<std::string, double>> worst;
  auto track = [&](const std::string& name, double err) {
    for (auto& [n, e] : worst)
      if (n == name) {
        e = std::max(e, err);
        return;
      }
    worst.emplace_back(name, err);
  };

  Mat means(4, 3);
  means.setRandom();
  const ClassifierModel bayes = ClassifierModel::bayes(GaussianMixture({0.2, 0.3, 0.5}, 2.0 * means, 0.7, {0, 1, 2}));
  const ClassifierModel net = ClassifierModel::trained(SmallNet::random({4, 16, 16, 3}, Activation::Tanh, rng));
  const SmallNet raw = SmallNet::random({5, 12, 12, 4}, Activation::Tanh, rng);
  Mat blob_means(4, 2);
  blob_means.setRandom();
  const EpsilonModel analytic =
      EpsilonModel::analytic(GaussianMixture({0.4, 0.6}, 2.0 * blob_means, 0.3, {0, 1}));
  const EpsilonModel trained =
      EpsilonModel::trained(SmallNet::random({4 + kTimeEmbeddingWidth, 24, 4}, Activation::Tanh, rng));

  for (int probe = 0; probe < 100; ++probe) {
    const Vec x = sample_standard_normal(rng, 4);
    const int y = probe % 3;
    for (const auto* m : {&bayes, &net}) {
      const ScalarFn f = [&](const Vec& z) { return class_log_probs(*m, z)[y]; };
      track("classifier", max_relative_error(grad_log_prob(*m, x, y), finite_difference_gradient(f, x, 1e-5), 1e-8));
    }

    Vec xhat = sample_standard_normal(rng, 4);
    Vec delta = sample_standard_normal(rng, 4);
    for (Eigen::Index i = 0; i < 4; ++i) delta[i] = std::copysign(0.05 + std::abs(delta[i]), delta[i]);
    for (DistanceKind k : {DistanceKind::L1, DistanceKind::L2, DistanceKind::L15}) {
      const ScalarFn f = [&](const Vec& z) { return distance_value(k, z, xhat); };
      track("distance", max_relative_error(distance_subgradient(k, xhat + delta, xhat),
                                           finite_difference_gradient(f, xhat + delta, 1e-5), 1e-8));
    }

    const int t = 1 + static_cast<int>(rng.uniform_index(200));
    const Vec xt = 1.5 * sample_standard_normal(rng, 4);
    for (const auto* m : {&analytic, &trained}) {
      const ScalarFn f = [&](const Vec& z) { return class_log_probs(net, f_dn(*m, s, z, t))[y]; };
      const Vec g = guided_classifier_gradient(DenoisedEstimate(*m, s, xt, t), net, y);
      track("f_dn chain", max_relative_error(g, finite_difference_gradient(f, xt, 1e-4), 1e-8));
    }

    const Vec in = sample_standard_normal(rng, 5), up = sample_standard_normal(rng, 4);
    const ScalarFn f = [&](const Vec& z) { return up.dot(raw.forward(z)); };
    track("backprop", max_relative_error(raw.backward(in, up).input.col(0), finite_difference_gradient(f, in, 1e-5), 1e-8));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    const double tol = name == "f_dn chain" ? 1e-3 : 1e-4;
    pass = pass && err < tol;
    detail += fmt("%s%s %.2e (<%g)", detail.empty() ? "" : "; ", name.c_str(), err, tol);
  }
  return {pass, detail};
}

Outcome generative_correctness() {
  const NoiseSchedule s = build_default_schedule(200);
  Vec mean(2);
  mean << 2.0, -1.0;
  const double var = 0.25;
  const EpsilonModel m = EpsilonModel::analytic(GaussianMixture({1.0}, Mat(mean), var, {0}));
  const int n = 100000;
  Mat samples(2, n);
  parallel_for(static_cast<std::size_t>(n), 1, [&](std::size_t i) {
    Rng rng(404, i);
    samples.col(static_cast<Eigen::Index>(i)) = sample_unconditional(m, s, rng);
  });
  const testing::Moments mom = testing::sample_moments(samples);
  const double mean_err = (mom.mean - mean).norm() / mean.norm();
  const double cov_err = testing::relative_frobenius(mom.cov, var * Mat::Identity(2, 2));
  return {mean_err <= 0.02 && cov_err <= 0.05,
          fmt("mean rel err %.4f (<=0.02), covariance rel Frobenius %.4f (<=0.05)", mean_err, cov_err)};
}

cli::Workspace workspace_from(const std::string& cfg_name, bool robust) {
  cli::Workspace ws;
  ws.cfg = cli::load_config(slurp(testing::config_path(cfg_name)));
  ws.schedule = cli::make_schedule(ws.cfg);
  cli::load_data(ws);
  cli::build_denoiser(ws);
  cli::build_target(ws);
  if (robust) cli::build_robust(ws);
  return ws;
}

Outcome dvce_validity() {
  const cli::Workspace ws = workspace_from("default.cfg", false);
  const GuidanceConfig& g = ws.cfg.guidance;
  if (g.classifier_coef != 0.1 || g.distance_coef != 0.15 || g.cone_angle_deg != 30.0 || g.eta != 0.5 ||
      ws.schedule.steps() != 200)
    return {false, "default.cfg does not carry the method defaults"};
  const int n = 100;
  std::vector<double> conf(n);
  parallel_for(n, 1, [&](std::size_t i) {
    const Eigen::Index j = static_cast<Eigen::Index>(i);
    const int y = (ws.test.data.labels[i] + 1) % ws.test.classes;
    Rng rng(ws.cfg.seed, i);
    conf[i] = generate_dvce(ws.test.data.sample(j), y, *ws.target, nullptr, *ws.denoiser, ws.schedule, g, rng).confidence;
  });
  double mean = 0.0;
  for (double c : conf) mean += c / n;
  return {mean >= 0.90, fmt("mean target confidence %.3f over %d counterfactuals (>=0.90)", mean, n)};
}

cli::Workspace& shapes_workspace() {
  static std::optional<cli::Workspace> ws;
  if (!ws) ws = workspace_from("shapes16.cfg", true);
  return *ws;
}

Outcome table_ordering() {
  cli::Workspace& ws = shapes_workspace();
  const ToyDataset& train = ws.train;

  // Blended weights chosen on training images, never on the evaluated test set.
  std::vector<std::pair<Vec, int>> calibration;
  const ClassPartition part = ws.cfg.eval.partition;
  for (Eigen::Index j = 0; j < 12; ++j) {
    const int src = train.data.labels[static_cast<std::size_t>(j)];
    const bool in_a = std::find(part.side_a.begin(), part.side_a.end(), src) != part.side_a.end();
    const auto& other = in_a ? part.side_b : part.side_a;
    calibration.emplace_back(train.data.sample(j), other[static_cast<std::size_t>(j) % other.size()]);
  }
  const BlendedSelection sel = select_blended_setting(calibration, *ws.target, *ws.denoiser, ws.schedule,
                                                      ws.cfg.blended, blended_coefficient_grid(), 0.9, ws.cfg.seed + 1);
  ws.cfg.blended = sel.chosen;

  std::vector<NamedGenerator> gens;
  for (const char* m : {"dvce", "svce", "blended"}) gens.push_back(cli::make_generator(m, ws, ws.cfg.guidance));
  CrossoverConfig cc;
  cc.partition = part;
  cc.per_side = 25;
  cc.seed = ws.cfg.seed;
  const EvalReport rep = crossover_evaluation(ws.test.data, train.data, gens, *ws.target, cc);
  auto get = [&](const char* name) -> const MethodSummary& {
    for (const auto& m : rep.methods)
      if (m.method == name) return m;
    throw std::logic_error("missing method");
  };
  const MethodSummary &dv = get("dvce"), &sv = get("svce"), &bl = get("blended");
  const bool closeness_ok = sv.median_l2 < dv.median_l2 && dv.median_l2 < bl.median_l2;
  const bool realism_ok = dv.frechet_avg <= std::min(sv.frechet_avg, bl.frechet_avg);
  std::string detail = fmt("n=%zu/method; blended C_c=%g C_d=%g; median l2 svce %.3f, dvce %.3f, blended %.3f [%s]; "
                           "frechet dvce %.3f, svce %.3f, blended %.3f [%s]; mean conf dvce %.3f svce %.3f blended %.3f",
                           dv.count, sel.chosen.classifier_coef, sel.chosen.distance_coef, sv.median_l2, dv.median_l2,
                           bl.median_l2, closeness_ok ? "ok" : "violated", dv.frechet_avg, sv.frechet_avg, bl.frechet_avg,
                           realism_ok ? "ok" : "violated", dv.mean_confidence, sv.mean_confidence, bl.mean_confidence);
  return {closeness_ok && realism_ok, detail};
}

Outcome ablations() {
  const cli::Workspace& ws = shapes_workspace();
  const int n = 30;
  const int K = ws.test.classes;
  auto sweep = [&](const GuidanceConfig& g) {
    std::vector<double> l1(n), conf(n);
    parallel_for(n, 1, [&](std::size_t i) {
      const Vec x = ws.test.data.sample(static_cast<Eigen::Index>(i));
      Rng rng(ws.cfg.seed, i);
      const VceResult r =
          generate_dvce(x, (ws.test.data.labels[i] + 1) % K, *ws.target, &*ws.robust, *ws.denoiser, ws.schedule, g, rng);
      l1[i] = closeness(r.x, x).l1;
      conf[i] = r.confidence;
    });
    double mean_conf = 0.0;
    for (double c : conf) mean_conf += c / n;
    return std::pair{median(l1), mean_conf};
  };
  std::vector<double> cd_l1, eta_l1, cone_conf;
  for (double cd : {0.05, 0.15, 0.25}) {
    GuidanceConfig g = ws.cfg.guidance;
    g.distance_coef = cd;
    cd_l1.push_back(sweep(g).first);
  }
  for (double eta : {0.25, 0.5, 0.75}) {
    GuidanceConfig g = ws.cfg.guidance;
    g.eta = eta;
    eta_l1.push_back(sweep(g).first);
  }
  for (double a : {1.0, 30.0}) {
    GuidanceConfig g = ws.cfg.guidance;
    g.cone_angle_deg = a;
    cone_conf.push_back(sweep(g).second);
  }
  const bool cd_ok = cd_l1[0] >= cd_l1[1] && cd_l1[1] >= cd_l1[2];
  const bool eta_ok = eta_l1[0] <= eta_l1[1] && eta_l1[1] <= eta_l1[2];
  const bool cone_ok = cone_conf[1] > cone_conf[0];
  return {cd_ok && eta_ok && cone_ok,
          fmt("median l1 over C_d .05/.15/.25: %.3f/%.3f/%.3f [%s]; over eta .25/.5/.75: %.3f/%.3f/%.3f [%s]; "
              "mean conf alpha 1/30: %.3f/%.3f [%s]",
              cd_l1[0], cd_l1[1], cd_l1[2], cd_ok ? "ok" : "violated", eta_l1[0], eta_l1[1], eta_l1[2],
              eta_ok ? "ok" : "violated", cone_conf[0], cone_conf[1], cone_ok ? "ok" : "violated")};
}

Outcome l15_projection() {
  Rng rng(808);
  double worst_kkt = 0.0, worst_gap = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index d = 5 + static_cast<Eigen::Index>(rng.uniform_index(46));
    Vec delta = sample_standard_normal(rng, d) * (0.5 + 3.0 * rng.uniform());
    if (trial % 10 == 0) delta.head(d / 2).setZero();
    const double r = 0.05 + 0.9 * rng.uniform() * testing::lp_norm(delta, 1.5);
    const Vec z = project_lp_ball(delta, 1.5, r);
    worst_kkt = std::max(worst_kkt, testing::l15_kkt_residual(delta, z, r));
    worst_gap = std::max(worst_gap, (z - testing::l15_projection_frank_wolfe(delta, r)).cwiseAbs().maxCoeff());
  }
  return {worst_kkt < 1e-8 && worst_gap <= 1e-5,
          fmt("max KKT residual %.2e (<1e-8); max |z - oracle| %.2e (<=1e-5)", worst_kkt, worst_gap)};
}

Outcome frechet_suite() {
  Rng rng(909);
  double self = 0.0, asym = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(10));
    Mat a(d, 200), b(d, 150);
    for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) = sample_standard_normal(rng, d);
    for (Eigen::Index j = 0; j < b.cols(); ++j) b.col(j) = 2.0 * sample_standard_normal(rng, d).array() + 0.5;
    self = std::max(self, std::abs(frechet_gaussian(a, a)));
    asym = std::max(asym, std::abs(frechet_gaussian(a, b) - frechet_gaussian(b, a)));
  }
  const int n = 20000;
  Mat a(1, n), b(1, n);
  for (int j = 0; j < n; ++j) {
    a(0, j) = rng.normal();
    b(0, j) = 1.0 + rng.normal();
  }
  const double f = frechet_gaussian(a, b);
  const testing::Moments ma = testing::sample_moments(a), mb = testing::sample_moments(b);
  const double closed = std::pow(ma.mean[0] - mb.mean[0], 2) +
                        std::pow(std::sqrt(ma.cov(0, 0) + 1e-6) - std::sqrt(mb.cov(0, 0) + 1e-6), 2);
  // sampling sd of (mean difference)^2 near 1 is about 2 sqrt(2/n)
  const double sampling = 4.0 * 2.0 * std::sqrt(2.0 / n);
  const bool pass = self <= 1e-8 && asym <= 1e-8 && std::abs(f - closed) <= 1e-10 && std::abs(f - 1.0) <= sampling;
  return {pass, fmt("A=A max %.2e; symmetry max %.2e; 1-D %.5f vs sample closed form %.5f, vs 1 within %.4f", self, asym,
                    f, closed, sampling)};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "dvce-acceptance-determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path quick = root / "quick.cfg";
  std::ofstream(quick) << "data.classes = 4\ndata.n = 600\ndata.test = 60\nclassifier.kind = bayes\n"
                          "robust.kind = bayes\ngenerate.count = 8\neval.per_side = 4\n";
  struct Case {
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::vector<Case> cases = {
      {{"generate", "--config", testing::config_path("default.cfg"), "--seed", "7"}, {"vce.csv"}},
      {{"generate", "--config", quick.string(), "--seed", "3", "--jobs", "2"}, {"vce.csv"}},
      {{"evaluate", "--config", quick.string(), "--seed", "5", "--jobs", "2"}, {"eval.csv", "vce.csv"}},
      {{"ablate", "--config", quick.string(), "--axis", "cone-angle", "--grid", "1,30"}, {"ablation.csv"}},
  };
  int compared = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    std::string first[4];
    for (int rep = 0; rep < 2; ++rep) {
      std::vector<std::string> args = cases[c].args;
      args.push_back("--out");
      args.push_back((root / fmt("case%zu-%d", c, rep)).string());
      std::ostringstream out, err;
      if (cli::run(args, out, err) != 0) return {false, "run failed: " + err.str()};
      for (std::size_t f = 0; f < cases[c].files.size(); ++f) {
        const std::string bytes = slurp(root / fmt("case%zu-%d", c, rep) / cases[c].files[f]);
        if (rep == 0) first[f] = bytes;
        else if (bytes != first[f] || bytes.empty()) return {false, "mismatch in case " + std::to_string(c) + " " + cases[c].files[f]};
        else ++compared;
      }
    }
  }
  fs::remove_all(root);
  return {true, fmt("%d CSV files byte-identical across replays (generate, evaluate, ablate)", compared)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "cone projection suite", 5, cone_suite},
      {2, "algebraic identities", 5, algebraic_identities},
      {3, "gradient oracle", 30, gradient_oracle},
      {4, "generative correctness", 180, generative_correctness},
      {5, "DVCE validity at defaults", 300, dvce_validity},
      {6, "closeness/realism ordering on shapes16", 1200, table_ordering},
      {7, "ablation monotonicities", 1800, ablations},
      {8, "l1.5-ball projection", 30, l15_projection},
      {9, "Frechet-Gaussian", 5, frechet_suite},
      {10, "CLI determinism", 600, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %2d %s  %s | %s | %.1fs (limit %.0fs%s)\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.limit_s, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
