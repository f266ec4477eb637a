#include "drakes/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

#include "drakes/optim.hpp"

namespace drakes {

FinetuneConfig FinetuneConfig::dna() { return FinetuneConfig{}; }

FinetuneConfig FinetuneConfig::protein() {
  FinetuneConfig c;
  c.steps = 50;
  c.truncation = 25;
  c.tau0 = 0.5;
  c.alpha = 0.0003;
  return c;
}

FinetuneConfig FinetuneConfig::from_config(const Config& cfg) { return from_config(cfg, FinetuneConfig{}); }

FinetuneConfig FinetuneConfig::from_config(const Config& cfg, FinetuneConfig base) {
  FinetuneConfig c = base;
  c.alpha = cfg.get_double("alpha", c.alpha);
  c.batch = cfg.get_int("batch", c.batch);
  c.iterations = cfg.get_int("iterations", c.iterations);
  c.steps = cfg.get_int("steps", c.steps);
  c.horizon = cfg.get_double("horizon", c.horizon);
  c.tau0 = cfg.get_double("tau0", c.tau0);
  const std::string sched = cfg.get_string("temperature", c.temperature == TemperatureSchedule::Linear ? "linear" : "constant");
  if (sched == "linear") {
    c.temperature = TemperatureSchedule::Linear;
  } else if (sched == "constant") {
    c.temperature = TemperatureSchedule::Constant;
  } else {
    throw Error("config: temperature must be 'linear' or 'constant', got '" + sched + "'");
  }
  const std::string relax = cfg.get_string("relaxation", c.relaxation == Relaxation::Full ? "full" : "factorized");
  if (relax == "full") {
    c.relaxation = Relaxation::Full;
  } else if (relax == "factorized") {
    c.relaxation = Relaxation::Factorized;
  } else {
    throw Error("config: relaxation must be 'full' or 'factorized', got '" + relax + "'");
  }
  c.truncation = cfg.get_int("truncation", c.truncation);
  c.learning_rate = cfg.get_double("learning_rate", c.learning_rate);
  c.straight_through = cfg.get_bool("straight_through", c.straight_through);
  c.gumbel_on_probs = cfg.get_bool("gumbel-on-probs", cfg.get_bool("gumbel_on_probs", c.gumbel_on_probs));
  c.flat_kl_weight = cfg.get_bool("flat-kl-weight", cfg.get_bool("flat_kl_weight", c.flat_kl_weight));
  c.micro_batch = cfg.get_int("micro_batch", c.micro_batch);
  c.seed = cfg.get_u64("seed", c.seed);
  c.validate();
  return c;
}

void FinetuneConfig::validate() const {
  if (!(alpha >= 0.0)) throw Error("finetune: alpha must be >= 0");
  if (steps < 1) throw Error("finetune: steps must be >= 1");
  if (truncation < 0 || truncation > steps) throw Error("finetune: truncation must lie in [0, steps]");
  if (!(tau0 > 0.0)) throw Error("finetune: tau0 must be > 0");
  if (batch < 1 || micro_batch < 1) throw Error("finetune: batch sizes must be >= 1");
  if (iterations < 0) throw Error("finetune: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw Error("finetune: learning rate must be > 0");
  if (!(horizon > 0.0)) throw Error("finetune: horizon must be > 0");
}

double temperature(const FinetuneConfig& config, const NoiseSchedule& schedule, int k) {
  if (config.temperature == TemperatureSchedule::Constant) return config.tau0;
  const double t = schedule.time(k);
  return std::min(config.tau0 * schedule.horizon() / (t + schedule.dt()), 10.0 * config.tau0);
}

ad::Array gumbel_noise(const ad::Shape& shape, Rng& rng) {
  ad::Array g(shape);
  for (double& v : g.values) v = rng.gumbel();
  return g;
}

ad::Var gumbel_softmax(const ad::Var& pi, double tau, const ad::Array& noise, bool on_probs) {
  if (!(tau > 0.0)) throw Error("gumbel_softmax: temperature must be > 0");
  if (noise.shape != pi.shape()) {
    throw Error("gumbel_softmax: noise shape " + ad::to_string(noise.shape) + " does not match " +
                ad::to_string(pi.shape()));
  }
  const std::size_t s = pi.shape().back();
  const auto& v = pi.value().values;
  for (std::size_t r = 0; r < v.size() / s; ++r) {
    double total = 0.0;
    for (std::size_t y = 0; y < s; ++y) total += v[r * s + y];
    if (!(total > 0.0)) throw Error("gumbel_softmax: categorical row " + std::to_string(r) + " has no mass");
  }
  const ad::Var logits = on_probs ? pi : ad::log(pi);
  return ad::softmax(ad::scale(ad::add(logits, ad::constant(noise)), 1.0 / tau));
}

ad::Var straight_through(const ad::Var& relaxed) {
  const std::size_t s = relaxed.shape().back();
  const auto& v = relaxed.value().values;
  ad::Array out(relaxed.shape(), 0.0);
  for (std::size_t r = 0; r < v.size() / s; ++r) {
    std::size_t best = 0;
    for (std::size_t y = 1; y < s; ++y)
      if (v[r * s + y] > v[r * s + best]) best = y;
    out[r * s + best] = 1.0;
  }
  return ad::make_op(std::move(out), {relaxed}, [](ad::Node& n) { n.inputs[0]->accumulate(n.grad.values); });
}

ad::Var kl_rate(const ad::Var& relaxed, const ad::Var& p_theta, const ad::Var& p_pre, std::size_t* clamped) {
  const std::size_t n = p_theta.shape().back();
  const std::size_t b = relaxed.dim(0), m = relaxed.dim(1);
  if (clamped) {
    const auto& a = p_theta.value().values;
    const auto& q = p_pre.value().values;
    for (std::size_t i = 0; i < q.size(); ++i)
      if (q[i] < 1e-12 && a[i] > q[i]) ++*clamped;
  }
  // floor at min(p_theta, 1e-12): identical inputs stay exactly zero
  ad::Array fl = p_theta.value();
  for (double& v : fl.values) v = std::min(v, 1e-12);
  const ad::Var q = ad::maximum(p_pre, ad::constant(std::move(fl)));
  const ad::Var term = ad::add(ad::sub(q, p_theta), ad::mul(p_theta, ad::sub(ad::log(p_theta), ad::log(q))));
  const ad::Var per_pos = ad::mul(ad::sum_last(term), ad::slice_last(relaxed, n, n + 1));
  return ad::reshape(ad::sum_last(ad::reshape(per_pos, {b, m})), {b});
}

namespace {

double kl_weight(const FinetuneConfig& config, const NoiseSchedule& schedule, int k) {
  const double g = schedule.gamma(schedule.time(k));
  return config.flat_kl_weight ? g / schedule.steps() : g * schedule.dt();
}

}  // namespace

RolloutOutput rollout_relaxed(const Denoiser& model, const BoundParams& params, const Denoiser* pre,
                              const BoundParams* pre_params, const FinetuneConfig& config,
                              const NoiseSchedule& schedule, const Reward& reward, std::span<Rng> rngs,
                              ad::Tape* tape, bool record) {
  const Vocabulary& vocab = model.vocab();
  const std::size_t b = rngs.size(), m = model.sequence().length, s = vocab.states(), n = vocab.n_tokens;
  if (config.alpha > 0.0 && (!pre || !pre_params)) throw Error("rollout_relaxed: alpha > 0 needs the pretrained model");

  RolloutOutput out;
  if (record) {
    out.trajectories.resize(b);
    for (auto& tr : out.trajectories) tr.steps.push_back({0.0, ad::Array(), one_hot(TokenSeq(m, vocab.mask()), s)});
  }
  ad::Var x = ad::constant(one_hot_batch(std::vector<TokenSeq>(b, TokenSeq(m, vocab.mask())), s));
  ad::Var kl = ad::constant(ad::Array({b}, 0.0));
  for (int k = 1; k <= schedule.steps(); ++k) {
    std::optional<ad::Tape::Pause> pause;
    if (tape && k <= config.truncation) pause.emplace(*tape);
    const std::vector<double> times(b, schedule.time(k - 1));
    const ad::Var p_theta = model.predict_x0(params, x, times);
    if (pre) {
      const ad::Var p_pre = pre->predict_x0(*pre_params, x, times);
      kl = ad::add(kl, ad::scale(kl_rate(x, p_theta, p_pre, &out.clamped), kl_weight(config, schedule, k)));
    }
    const ad::Var pi = step_distribution(x, p_theta, schedule.unmask_probability(k));
    ad::Array noise(pi.shape());
    ad::Array unmask_draw({b, m, 1});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < m * s; ++j) noise[i * m * s + j] = rngs[i].gumbel();
      for (std::size_t j = 0; j < m; ++j) unmask_draw[i * m + j] = rngs[i].uniform();
    }
    const double tau = temperature(config, schedule, k);
    // positions whose hard state is already a token are carried over
    ad::Array keep({b, m, 1}, 0.0);
    for (std::size_t r = 0; r < b * m; ++r) {
      const double* row = x.value().values.data() + r * s;
      keep[r] = std::max_element(row, row + s) - row != std::ptrdiff_t(s - 1) ? 1.0 : 0.0;
    }
    ad::Array redraw = keep;
    for (double& v : redraw.values) v = 1.0 - v;
    const ad::Var kept = ad::mul(x, ad::constant(keep));
    if (config.relaxation == Relaxation::Full) {
      x = ad::add(kept, ad::mul(gumbel_softmax(pi, tau, noise, config.gumbel_on_probs), ad::constant(std::move(redraw))));
    } else {
      // a masked position leaves Mask with the model-free probability u and
      // only the token choice is relaxed
      const double u = schedule.unmask_probability(k);
      ad::Array token_noise({b, m, n});
      ad::Array stay({b, m, s}, 0.0);
      for (std::size_t r = 0; r < b * m; ++r) {
        for (std::size_t y = 0; y < n; ++y) token_noise[r * n + y] = noise[r * s + y];
        if (redraw[r] > 0.0 && unmask_draw[r] >= u) {
          stay[r * s + n] = 1.0;
          redraw[r] = 0.0;
        }
      }
      const ad::Var token = ad::concat_last(
          {gumbel_softmax(p_theta, tau, token_noise, config.gumbel_on_probs), ad::constant(ad::Array({b, m, 1}, 0.0))});
      x = ad::add(ad::add(kept, ad::constant(std::move(stay))), ad::mul(token, ad::constant(std::move(redraw))));
    }
    if (record) {
      for (std::size_t i = 0; i < b; ++i) {
        ad::Array pi_i({m, s}), x_i({m, s});
        std::copy_n(pi.value().values.data() + i * m * s, m * s, pi_i.values.data());
        std::copy_n(x.value().values.data() + i * m * s, m * s, x_i.values.data());
        out.trajectories[i].steps.push_back({schedule.time(k), std::move(pi_i), std::move(x_i)});
      }
    }
  }
  const ad::Var terminal = config.straight_through ? straight_through(x) : x;
  out.terminal = terminal.value();
  out.reward = reward.evaluate_states(terminal);
  out.kl = kl;
  return out;
}

double kl_simplified(const Trajectory& trajectory, const Denoiser& model, const Denoiser& pre,
                     const NoiseSchedule& schedule, bool flat_weight) {
  if (trajectory.steps.size() != std::size_t(schedule.steps()) + 1) {
    throw Error("kl_simplified: trajectory has " + std::to_string(trajectory.steps.size()) + " states, expected " +
                std::to_string(schedule.steps() + 1));
  }
  FinetuneConfig cfg;
  cfg.flat_kl_weight = flat_weight;
  const auto params = model.bind(nullptr);
  const auto pre_params = pre.bind(nullptr);
  double total = 0.0;
  for (int k = 1; k <= schedule.steps(); ++k) {
    ad::Array state = trajectory.steps[k - 1].state;
    state.shape.insert(state.shape.begin(), 1);
    const ad::Var x = ad::constant(std::move(state));
    const std::vector<double> times{schedule.time(k - 1)};
    const ad::Var a = model.predict_x0(params, x, times);
    const ad::Var q = pre.predict_x0(pre_params, x, times);
    total += kl_weight(cfg, schedule, k) * kl_rate(x, a, q).item();
  }
  return total;
}

FinetuneResult finetune(const Denoiser& pretrained, const Reward& reward, const FinetuneConfig& config,
                        const std::function<void(const IterationMetrics&)>& on_iteration) {
  config.validate();
  if (pretrained.frozen()) throw Error("finetune: the starting model is frozen");
  const NoiseSchedule schedule(config.horizon, config.steps);
  FinetuneResult result;
  result.model = pretrained.clone();
  const auto pre = pretrained.clone_frozen();
  const auto pre_params = pre->bind(nullptr);
  const bool with_kl = config.alpha > 0.0;
  Adam adam(result.model->params(), AdamConfig{config.learning_rate});
  std::shared_ptr<Denoiser> last_good = result.model->clone();
  const auto start = std::chrono::steady_clock::now();

  for (int it = 1; it <= config.iterations; ++it) {
    std::vector<ad::Array> grads;
    double reward_sum = 0.0, kl_sum = 0.0;
    for (int begin = 0; begin < config.batch; begin += config.micro_batch) {
      const int b = std::min(config.micro_batch, config.batch - begin);
      std::vector<Rng> rngs;
      for (int i = 0; i < b; ++i)
        rngs.push_back(Rng::stream(config.seed, std::uint64_t(it - 1) * config.batch + begin + i));
      ad::Tape tape;
      const auto params = result.model->bind(&tape);
      const RolloutOutput out = rollout_relaxed(*result.model, params, with_kl ? pre.get() : nullptr,
                                                with_kl ? &pre_params : nullptr, config, schedule, reward, rngs, &tape);
      result.clamped += out.clamped;
      const ad::Var objective = ad::sub(ad::sum(out.reward), ad::scale(ad::sum(out.kl), config.alpha));
      const ad::Var loss = ad::scale(objective, -1.0 / config.batch);
      if (!std::isfinite(loss.item())) {
        throw DivergenceError("finetune: non-finite loss at iteration " + std::to_string(it), last_good, it);
      }
      reward_sum += ad::sum(out.reward).item();
      kl_sum += ad::sum(out.kl).item();
      accumulate_gradients(grads, collect_gradients(tape.backward(loss), params));
    }
    const double norm = gradient_norm(grads);
    if (!std::isfinite(norm)) {
      throw DivergenceError("finetune: non-finite gradient at iteration " + std::to_string(it), last_good, it);
    }
    adam.step(result.model->params(), grads);
    last_good = result.model->clone();

    IterationMetrics row;
    row.iteration = it;
    row.mean_reward = reward_sum / config.batch;
    row.kl = with_kl ? kl_sum / config.batch : std::numeric_limits<double>::quiet_NaN();
    row.loss = -(row.mean_reward - (with_kl ? config.alpha * row.kl : 0.0));
    row.grad_norm = norm;
    row.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(row);
    if (on_iteration) on_iteration(row);
  }
  return result;
}

}  // namespace drakes
