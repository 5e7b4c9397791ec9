#pragma once

#include "dvce/classifier.hpp"
#include "dvce/sampler.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace dvce {

struct Closeness {
  double l1;
  double l15;
  double l2;
};

Closeness closeness(const Vec& x, const Vec& xhat);

/// Mean p(y | x) over (x, y) pairs. Throws std::invalid_argument when empty.
double validity(const ClassifierModel& m, const std::vector<std::pair<Vec, int>>& pairs);

/// Frechet distance between Gaussian fits of two sample sets (one sample per
/// column): |mu_A - mu_B|^2 + Tr(S_A + S_B - 2 (S_A^{1/2} S_B S_A^{1/2})^{1/2}).
/// Both covariances get ridge * I before the square roots. Throws
/// NonFiniteError when the regularized product has a clearly negative
/// eigenvalue, std::invalid_argument for fewer than 2 samples.
double frechet_gaussian(const Mat& a, const Mat& b, double ridge = 1e-6);

double median(std::vector<double> values);

/// Classes split into the two sides of a crossover evaluation.
struct ClassPartition {
  std::vector<int> side_a;
  std::vector<int> side_b;
};

/// First ceil(K/2) classes on side A, the rest on side B.
ClassPartition halve_classes(int classes);

/// (xhat, source label, target class, rng) -> counterfactual
using VceGenerator = std::function<VceResult(const Vec&, int, int, Rng&)>;

struct NamedGenerator {
  std::string name;
  VceGenerator generate;
};

/// Returns xhat untouched; the degenerate reference row.
NamedGenerator identity_generator();

struct CrossoverConfig {
  ClassPartition partition;
  int per_side = 25;  // source images taken from each side (fewer if the test set runs out)
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct CrossoverSample {
  int index;   // position in the test set
  int source;  // label of xhat
  int target;
  Vec x;
  double confidence;  // judged by the evaluation classifier
  Closeness dist;
  std::uint64_t seed;
  std::uint64_t stream;
};

struct MethodSummary {
  std::string method;
  std::size_t count = 0;
  double mean_l1 = 0.0, mean_l15 = 0.0, mean_l2 = 0.0;
  double median_l1 = 0.0, median_l2 = 0.0;
  double mean_confidence = 0.0;
  double frechet_into_a = 0.0, frechet_into_b = 0.0, frechet_avg = 0.0;
  std::vector<CrossoverSample> samples;  // sorted by (side, index)
};

struct EvalReport {
  std::vector<MethodSummary> methods;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Crossover protocol: every selected test image on one side gets a
/// counterfactual into a class on the other side (targets cycle through the
/// opposite side's classes). VCEs landing in side A are compared with the
/// side-A training samples by frechet_gaussian, likewise for B, and the two
/// scores are averaged. Image i of the selection uses Rng(cfg.seed, i), so
/// every method sees the same streams. Generator exceptions propagate with
/// the method name prefixed.
EvalReport crossover_evaluation(const LabeledData& test, const LabeledData& train,
                                const std::vector<NamedGenerator>& generators,
                                const ClassifierModel& judge, const CrossoverConfig& cfg);

/// One row per method.
void write_eval_csv(std::ostream& out, const EvalReport& report);

/// Fixed-width table: closeness, validity, realism.
std::string format_eval_summary(const EvalReport& report);

struct VceRow {
  std::size_t index;
  std::uint64_t seed;
  std::uint64_t stream;
  int source;
  int target;
  double confidence;
  Closeness dist;
  std::string method;
};

VceRow make_vce_row(std::size_t index, int source, const Vec& xhat, const VceResult& r);

/// index,seed,stream,source,y,confidence,l1,l1.5,l2,method
void write_vce_csv(std::ostream& out, const std::vector<VceRow>& rows);

}  // namespace dvce
