#include "dvce/baselines.hpp"
#include "dvce/datasets.hpp"
#include "dvce/guidance.hpp"
#include "dvce/sampler.hpp"

#include <benchmark/benchmark.h>

namespace dvce {
namespace {

void BM_ConeProject(benchmark::State& state) {
  Rng rng(1);
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const Vec v = sample_standard_normal(rng, d), w = sample_standard_normal(rng, d);
  for (auto _ : state) benchmark::DoNotOptimize(cone_project(w, v, 30.0));
}
BENCHMARK(BM_ConeProject)->Arg(2)->Arg(256);

void BM_L15Projection(benchmark::State& state) {
  Rng rng(2);
  const Vec d = 3.0 * sample_standard_normal(rng, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(project_lp_ball(d, 1.5, 1.0));
}
BENCHMARK(BM_L15Projection)->Arg(5)->Arg(256);

// Denoised estimate plus pullback: the per-step cost of guidance.
void BM_DenoisedPullback(benchmark::State& state) {
  Rng rng(3);
  const NoiseSchedule s = build_default_schedule();
  const ToyDataset ds = make_shapes16(static_cast<int>(state.range(0)), 0.05, rng);
  const EpsilonModel m = EpsilonModel::analytic(GaussianMixture::from_samples(ds.data, 0.05));
  const Vec xt = forward_sample(s, ds.data.sample(0), 100, sample_standard_normal(rng, 256));
  const Vec u = sample_standard_normal(rng, 256);
  for (auto _ : state) {
    const DenoisedEstimate est(m, s, xt, 100);
    benchmark::DoNotOptimize(est.pullback(u));
  }
}
BENCHMARK(BM_DenoisedPullback)->Arg(300)->Arg(3000)->Unit(benchmark::kMicrosecond);

void BM_DvceGmm2d(benchmark::State& state) {
  const NoiseSchedule s = build_default_schedule();
  const GaussianMixture g = gmm2d_mixture(2, 4.0, 0.5);
  const EpsilonModel m = EpsilonModel::analytic(g);
  const ClassifierModel cls = ClassifierModel::bayes(g);
  const Vec xhat = g.means().col(0);
  std::uint64_t stream = 0;
  for (auto _ : state) {
    Rng rng(4, stream++);
    benchmark::DoNotOptimize(generate_dvce(xhat, 1, cls, nullptr, m, s, GuidanceConfig{}, rng));
  }
}
BENCHMARK(BM_DvceGmm2d)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace dvce

BENCHMARK_MAIN();
