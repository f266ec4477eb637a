#include <benchmark/benchmark.h>

#include "drakes/finetune.hpp"
#include "drakes/guidance.hpp"
#include "drakes/sampling.hpp"

using namespace drakes;

namespace {

ad::Array filled(ad::Shape shape, std::uint64_t seed) {
  ad::Array a(std::move(shape));
  Rng rng(seed);
  for (double& v : a.values) v = rng.normal();
  return a;
}

MlpDenoiser desk_model() { return MlpDenoiser(Vocabulary(4), SequenceSpec(20), MlpDenoiserConfig{64, 3, 0, 1.0}, 1); }

std::vector<TokenSeq> half_masked(std::size_t b) {
  Rng rng(2);
  std::vector<TokenSeq> out(b, TokenSeq(20));
  for (auto& s : out)
    for (int& t : s) t = rng.uniform() < 0.5 ? 4 : int(rng.below(4));
  return out;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const ad::Var a = ad::constant(filled({n, n}, 1)), b = ad::constant(filled({n, n}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b).value().values.data());
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

static void BM_MatmulBackward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const ad::Array a = filled({n, n}, 1), b = filled({n, n}, 2);
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var x = tape.variable(a), y = tape.variable(b);
    benchmark::DoNotOptimize(tape.backward(ad::sum(ad::matmul(x, y))).of(x).values.data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

static void BM_DenoiserForward(benchmark::State& state) {
  const MlpDenoiser m = desk_model();
  const auto states = half_masked(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(states, 0.5).values.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64);

static void BM_RelaxedRollout(benchmark::State& state) {
  const MlpDenoiser m = desk_model();
  const Reward r = Reward::linear_pwm(filled({6, 4}, 3), 20);
  FinetuneConfig c;
  c.alpha = 0.0;
  c.steps = int(state.range(0));
  c.truncation = c.steps / 2;
  const NoiseSchedule s(1.0, c.steps);
  for (auto _ : state) {
    std::vector<Rng> rngs{Rng::stream(4, 0), Rng::stream(4, 1), Rng::stream(4, 2), Rng::stream(4, 3)};
    ad::Tape tape;
    const auto bound = m.bind(&tape);
    const RolloutOutput out = rollout_relaxed(m, bound, nullptr, nullptr, c, s, r, rngs, &tape);
    benchmark::DoNotOptimize(tape.backward(ad::sum(out.reward)).of(bound[0]).values.data());
  }
}
BENCHMARK(BM_RelaxedRollout)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_AncestralSample(benchmark::State& state) {
  const MlpDenoiser m = desk_model();
  const NoiseSchedule s(1.0, int(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ancestral_sample(m, s, 64, 5).sequences.data());
}
BENCHMARK(BM_AncestralSample)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_ExactValueBackward(benchmark::State& state) {
  const auto pre = TabularDenoiser::constant(Vocabulary(3), std::vector<double>{0.5, 0.3, 0.2}, int(state.range(0)));
  const NoiseSchedule s(1.0, int(state.range(0)));
  const Reward r = Reward::tabular({0.0, 0.5, 1.0});
  for (auto _ : state) benchmark::DoNotOptimize(exact_value_backward(pre, r, 0.5, s).v.data());
}
BENCHMARK(BM_ExactValueBackward)->Arg(128)->Arg(1024);

BENCHMARK_MAIN();
