#include "dvce/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dvce {

namespace {

struct MeanCov {
  Vec mean;
  Mat cov;
};

MeanCov fit_gaussian(const Mat& samples) {
  const Eigen::Index n = samples.cols();
  Vec mean = samples.rowwise().mean();
  const Mat centered = samples.colwise() - mean;
  Mat cov = centered * centered.transpose() / static_cast<double>(n - 1);
  return {std::move(mean), std::move(cov)};
}

Mat psd_sqrt(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.info() != Eigen::Success) throw NonFiniteError("frechet_gaussian: eigendecomposition failed");
  const Vec root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Mat columns_with_labels(const LabeledData& data, const std::vector<int>& classes) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), data.labels[static_cast<std::size_t>(i)]) != classes.end()) {
      keep.push_back(i);
    }
  }
  Mat out(data.dim(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = data.inputs.col(keep[j]);
  return out;
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

Closeness closeness(const Vec& x, const Vec& xhat) {
  require_same_size(x, xhat, "closeness");
  return {distance_value(DistanceKind::L1, x, xhat), distance_value(DistanceKind::L15, x, xhat),
          distance_value(DistanceKind::L2, x, xhat)};
}

double validity(const ClassifierModel& m, const std::vector<std::pair<Vec, int>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("validity: no pairs");
  double acc = 0.0;
  for (const auto& [x, y] : pairs) acc += std::exp(class_log_probs(m, x)[y]);
  return acc / static_cast<double>(pairs.size());
}

double frechet_gaussian(const Mat& a, const Mat& b, double ridge) {
  if (a.rows() != b.rows()) throw DimensionError("frechet_gaussian: sample dimensions differ");
  if (a.cols() < 2 || b.cols() < 2) throw std::invalid_argument("frechet_gaussian: need at least 2 samples per set");
  if (!a.allFinite() || !b.allFinite()) throw NonFiniteError("frechet_gaussian: non-finite samples");
  const Eigen::Index d = a.rows();
  MeanCov fa = fit_gaussian(a);
  MeanCov fb = fit_gaussian(b);
  fa.cov.diagonal().array() += ridge;
  fb.cov.diagonal().array() += ridge;

  const Mat root_a = psd_sqrt(fa.cov);
  Mat inner = root_a * fb.cov * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(inner, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NonFiniteError("frechet_gaussian: eigendecomposition failed");
  const Vec lam = eig.eigenvalues();
  const double tol = 1e-9 * std::max(1.0, lam.cwiseAbs().maxCoeff()) * static_cast<double>(d);
  if (lam.minCoeff() < -tol) throw NonFiniteError("frechet_gaussian: covariance product is not PSD");
  const double trace_root = lam.cwiseMax(0.0).cwiseSqrt().sum();

  const double value = (fa.mean - fb.mean).squaredNorm() + fa.cov.trace() + fb.cov.trace() - 2.0 * trace_root;
  return std::max(value, 0.0);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

ClassPartition halve_classes(int classes) {
  if (classes < 2) throw std::invalid_argument("halve_classes: need at least 2 classes");
  ClassPartition p;
  const int cut = (classes + 1) / 2;
  for (int k = 0; k < classes; ++k) (k < cut ? p.side_a : p.side_b).push_back(k);
  return p;
}

NamedGenerator identity_generator() {
  return {"identity", [](const Vec& xhat, int, int target, Rng& rng) {
            VceResult r;
            r.x = xhat;
            r.target = target;
            r.seed = rng.seed();
            r.stream = rng.stream_index();
            r.method = "identity";
            return r;
          }};
}

EvalReport crossover_evaluation(const LabeledData& test, const LabeledData& train,
                                const std::vector<NamedGenerator>& generators,
                                const ClassifierModel& judge, const CrossoverConfig& cfg) {
  const auto& part = cfg.partition;
  if (part.side_a.empty() || part.side_b.empty()) {
    throw std::invalid_argument("crossover_evaluation: both sides need at least one class");
  }
  std::set<int> seen;
  for (int k : part.side_a) seen.insert(k);
  for (int k : part.side_b) {
    if (!seen.insert(k).second) throw std::invalid_argument("crossover_evaluation: sides overlap");
  }
  if (generators.empty()) throw std::invalid_argument("crossover_evaluation: no generators");
  if (cfg.per_side < 1) throw std::invalid_argument("crossover_evaluation: per_side must be >= 1");

  // selection: side-A sources first, then side-B sources, in test order
  struct Pick {
    Eigen::Index index;
    int source;
    int target;
    bool into_a;
  };
  std::vector<Pick> picks;
  for (int side = 0; side < 2; ++side) {
    const auto& from = side == 0 ? part.side_a : part.side_b;
    const auto& to = side == 0 ? part.side_b : part.side_a;
    int taken = 0;
    for (Eigen::Index i = 0; i < test.size() && taken < cfg.per_side; ++i) {
      const int label = test.labels[static_cast<std::size_t>(i)];
      if (!contains(from, label)) continue;
      picks.push_back({i, label, to[static_cast<std::size_t>(taken) % to.size()], side == 1});
      ++taken;
    }
  }

  const std::size_t per_method = picks.size();
  std::vector<VceResult> results(per_method * generators.size());
  parallel_for(results.size(), cfg.jobs, [&](std::size_t job) {
    const std::size_t g = job / per_method;
    const std::size_t j = job % per_method;
    const Pick& p = picks[j];
    Rng rng(cfg.seed, j);
    try {
      results[job] = generators[g].generate(test.sample(p.index), p.source, p.target, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error(generators[g].name + ": " + e.what());
    }
  });

  const Mat train_a = columns_with_labels(train, part.side_a);
  const Mat train_b = columns_with_labels(train, part.side_b);

  EvalReport report;
  report.seed = cfg.seed;
  for (std::size_t g = 0; g < generators.size(); ++g) {
    MethodSummary ms;
    ms.method = generators[g].name;
    std::vector<double> l1s, l2s;
    std::vector<Vec> into_a, into_b;
    for (std::size_t j = 0; j < per_method; ++j) {
      const Pick& p = picks[j];
      const VceResult& r = results[g * per_method + j];
      CrossoverSample cs{static_cast<int>(p.index), p.source, p.target, r.x,
                         std::exp(class_log_probs(judge, r.x)[p.target]), closeness(r.x, test.sample(p.index)),
                         r.seed, r.stream};
      ms.mean_l1 += cs.dist.l1;
      ms.mean_l15 += cs.dist.l15;
      ms.mean_l2 += cs.dist.l2;
      ms.mean_confidence += cs.confidence;
      l1s.push_back(cs.dist.l1);
      l2s.push_back(cs.dist.l2);
      (p.into_a ? into_a : into_b).push_back(r.x);
      ms.samples.push_back(std::move(cs));
    }
    ms.count = per_method;
    if (per_method > 0) {
      const double n = static_cast<double>(per_method);
      ms.mean_l1 /= n;
      ms.mean_l15 /= n;
      ms.mean_l2 /= n;
      ms.mean_confidence /= n;
      ms.median_l1 = median(l1s);
      ms.median_l2 = median(l2s);
    }
    auto stack = [&](const std::vector<Vec>& cols) {
      Mat m(test.dim(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t j = 0; j < cols.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = cols[j];
      return m;
    };
    ms.frechet_into_a = frechet_gaussian(stack(into_a), train_a);
    ms.frechet_into_b = frechet_gaussian(stack(into_b), train_b);
    ms.frechet_avg = 0.5 * (ms.frechet_into_a + ms.frechet_into_b);
    report.methods.push_back(std::move(ms));
  }
  return report;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << "method,count,mean_l1,mean_l1.5,mean_l2,median_l1,median_l2,mean_confidence,"
         "frechet_into_a,frechet_into_b,frechet_avg\n";
  for (const auto& m : report.methods) {
    out << m.method << ',' << m.count << ',' << format_double(m.mean_l1) << ',' << format_double(m.mean_l15) << ','
        << format_double(m.mean_l2) << ',' << format_double(m.median_l1) << ',' << format_double(m.median_l2) << ','
        << format_double(m.mean_confidence) << ',' << format_double(m.frechet_into_a) << ','
        << format_double(m.frechet_into_b) << ',' << format_double(m.frechet_avg) << '\n';
  }
}

std::string format_eval_summary(const EvalReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %6s | %10s %10s %10s %10s | %10s | %12s\n", "method", "n", "l1", "l1.5",
                "l2", "med l2", "mean conf", "frechet avg");
  out << line;
  out << std::string(std::char_traits<char>::length(line) - 1, '-') << '\n';
  for (const auto& m : report.methods) {
    std::snprintf(line, sizeof line, "%-12s %6zu | %10.4f %10.4f %10.4f %10.4f | %10.4f | %12.4f\n", m.method.c_str(),
                  m.count, m.mean_l1, m.mean_l15, m.mean_l2, m.median_l2, m.mean_confidence, m.frechet_avg);
    out << line;
  }
  out << "seed " << report.seed;
  if (!report.config_hash.empty()) out << ", config " << report.config_hash;
  out << '\n';
  return out.str();
}

VceRow make_vce_row(std::size_t index, int source, const Vec& xhat, const VceResult& r) {
  return {index, r.seed, r.stream, source, r.target, r.confidence, closeness(r.x, xhat), r.method};
}

void write_vce_csv(std::ostream& out, const std::vector<VceRow>& rows) {
  out << "index,seed,stream,source,y,confidence,l1,l1.5,l2,method\n";
  for (const auto& r : rows) {
    out << r.index << ',' << r.seed << ',' << r.stream << ',' << r.source << ',' << r.target << ','
        << format_double(r.confidence) << ',' << format_double(r.dist.l1) << ',' << format_double(r.dist.l15) << ','
        << format_double(r.dist.l2) << ',' << r.method << '\n';
  }
}

}  // namespace dvce
