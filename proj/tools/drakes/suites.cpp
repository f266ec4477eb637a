#include "suites.hpp"

#include <cmath>

#include "drakes/finetune.hpp"
#include "drakes/guidance.hpp"
#include "drakes/oracle.hpp"

namespace drakes::cli {

namespace {

std::vector<double> doubles_or(const Config& cfg, const std::string& key, std::vector<double> fallback) {
  return cfg.get_doubles(key, fallback);
}

// Pretrained rows p_k scattered around `base` by a seeded multiplicative jitter.
TabularDenoiser jittered(const std::vector<double>& base, int steps, std::uint64_t seed, double jitter) {
  const std::size_t n = base.size();
  Rng rng(seed);
  ad::Array rows({std::size_t(steps), n});
  for (int k = 0; k < steps; ++k) {
    double total = 0.0;
    for (std::size_t y = 0; y < n; ++y) total += (rows[k * n + y] = base[y] * (1.0 - jitter + 2 * jitter * rng.uniform()));
    for (std::size_t y = 0; y < n; ++y) rows[k * n + y] /= total;
  }
  return TabularDenoiser(Vocabulary(int(n)), rows);
}

struct Instance {
  std::vector<double> pre;
  std::vector<double> reward;
  int steps;
  double alpha;
  std::uint64_t seed;
};

Instance instance(const Config& cfg) {
  Instance in{doubles_or(cfg, "pre", {0.5, 0.3, 0.2}), doubles_or(cfg, "reward", {0.0, 0.5, 1.0}),
              cfg.get_int("steps", 64), cfg.get_double("alpha", 0.5), cfg.get_u64("seed", 0)};
  if (in.pre.size() != in.reward.size()) throw Error("oracle-check: 'pre' and 'reward' need the same length");
  return in;
}

SuiteResult tilted_target(const Config& cfg) {
  const Instance in = instance(cfg);
  const double tol = cfg.get_double("tv_tolerance", 0.05);
  const NoiseSchedule schedule(1.0, in.steps);
  const Vocabulary vocab(int(in.pre.size()));
  const auto pre = TabularDenoiser::constant(vocab, in.pre, in.steps);
  FinetuneConfig fc;
  fc.steps = in.steps;
  fc.truncation = 0;
  fc.batch = 128;
  fc.micro_batch = 128;
  fc.iterations = 500;
  fc.tau0 = 0.1;
  fc.learning_rate = 0.05;
  fc.seed = in.seed;
  fc = FinetuneConfig::from_config(cfg, fc);
  fc.alpha = in.alpha;
  const FinetuneResult res = finetune(pre, Reward::tabular(in.reward), fc);
  const auto generated = exact_marginal(model_step_rates(*res.model, schedule), schedule, vocab.states())
                             .tokens(in.steps, vocab.n_tokens);
  const auto target = target_distribution(in.pre, in.reward, in.alpha);
  const double tv = tv_distance(generated, target);
  return {tv <= tol,
          {{"tv", tv}, {"tolerance", tol}, {"generated", generated}, {"target", target}, {"alpha", in.alpha}}};
}

SuiteResult doob(const Config& cfg) {
  const Instance in = instance(cfg);
  const double tol = cfg.get_double("tv_tolerance", 0.02);
  const NoiseSchedule schedule(1.0, in.steps);
  const auto pre = jittered(in.pre, in.steps, in.seed + 1, 0.4);
  const int s = pre.vocab().states();
  const ValueTable table = exact_value_backward(pre, Reward::tabular(in.reward), in.alpha, schedule);
  const StepRates rates = model_step_rates(pre, schedule);
  const ExactMarginal guided = exact_marginal(doob_step_rates(rates, table), schedule, s);
  const ExactMarginal base = exact_marginal(rates, schedule, s);
  nlohmann::json times = nlohmann::json::array();
  double worst = 0.0;
  for (int k : {in.steps / 4, in.steps / 2, in.steps}) {
    std::vector<double> tilted(s);
    double z = 0.0;
    for (int x = 0; x < s; ++x) z += (tilted[x] = base.at(k)[x] * table.h(k, x));
    for (double& v : tilted) v /= z;
    const double tv = tv_distance(guided.at(k), tilted);
    worst = std::max(worst, tv);
    times.push_back({{"step", k}, {"tv", tv}});
  }
  return {worst <= tol, {{"times", times}, {"worst_tv", worst}, {"tolerance", tol}}};
}

SuiteResult kolmogorov(const Config& cfg) {
  const Instance in = instance(cfg);
  const int s = int(in.pre.size()) + 1;
  Rng rng(in.seed + 2);
  ResidualProblem problem;
  problem.generator = ad::Array({std::size_t(s), std::size_t(s)});
  for (int x = 0; x < s; ++x) {
    double row = 0.0;
    for (int y = 0; y < s; ++y)
      if (y != x) row += (problem.generator[x * s + y] = 0.5 + 2.0 * rng.uniform());
    problem.generator[x * s + x] = -row;
  }
  problem.x0_probs = [pre = in.pre](double) { return pre; };
  problem.reward = std::vector<double>(in.pre.size(), 0.0);
  problem.alpha = in.alpha;
  const auto reports = kolmogorov_residuals(problem, {32, 64, 128});
  nlohmann::json rows = nlohmann::json::array();
  bool ok = true;
  double hjb = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    rows.push_back({{"steps", reports[i].steps},
                    {"dt", reports[i].dt},
                    {"forward", reports[i].forward},
                    {"backward", reports[i].backward.value_or(NAN)},
                    {"hjb", reports[i].hjb.value_or(NAN)}});
    hjb = std::max(hjb, reports[i].hjb.value_or(INFINITY));
    if (i > 0) {
      const double ratio = reports[i].forward / reports[i - 1].forward;
      ok = ok && ratio >= 0.4 && ratio <= 0.6;
    }
  }
  ok = ok && hjb <= 1e-10;
  return {ok, {{"residuals", rows}, {"halving_ratio_band", {0.4, 0.6}}, {"hjb_tolerance", 1e-10}}};
}

SuiteResult feynman_kac(const Config& cfg) {
  const Instance in = instance(cfg);
  const int rollouts = cfg.get_int("rollouts", 100000);
  const NoiseSchedule schedule(1.0, in.steps);
  const auto pre = jittered(in.pre, in.steps, in.seed + 3, 0.4);
  const int n = pre.vocab().n_tokens;
  const ValueTable table = exact_value_backward(pre, Reward::tabular(in.reward), in.alpha, schedule);
  const auto draws = sample_single_token(model_step_rates(pre, schedule), schedule, n + 1, rollouts, in.seed + 4);
  double s = 0.0, s2 = 0.0;
  for (int y : draws) {
    if (y >= n) throw Error("oracle-check: a rollout ended on Mask");
    const double w = std::exp(in.reward[y] / in.alpha);
    s += w;
    s2 += w * w;
  }
  const double mc = s / rollouts;
  const double se = std::sqrt((s2 / rollouts - mc * mc) / (rollouts - 1));
  const double exact = table.h(0, n);
  const double z = std::abs(mc - exact) / se;
  return {z <= 3.0, {{"exact", exact}, {"monte_carlo", mc}, {"standard_error", se}, {"z", z}, {"rollouts", rollouts}}};
}

}  // namespace

SuiteResult run_suite(const std::string& name, const Config& cfg) {
  if (name == "tilted-target") return tilted_target(cfg);
  if (name == "doob") return doob(cfg);
  if (name == "kolmogorov") return kolmogorov(cfg);
  if (name == "feynman-kac") return feynman_kac(cfg);
  throw Error("oracle-check: unknown suite '" + name + "' (tilted-target, doob, kolmogorov, feynman-kac)");
}

}  // namespace drakes::cli
