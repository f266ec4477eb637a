#include "drakes/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drakes/optim.hpp"
#include "drakes/sampling.hpp"

namespace drakes {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp(std::span<const double> v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

int draw_row(Rng& rng, const double* row, int s) { return int(rng.categorical(std::span<const double>(row, s))); }

}  // namespace

double ValueTable::h(int k, int x) const { return std::exp(log_h(k, x)); }

ValueTable exact_value_backward(const StepRates& rates, const NoiseSchedule& schedule, int n_states,
                                std::span<const double> reward, double alpha) {
  if (!(alpha > 0.0)) throw Error("exact_value_backward: alpha must be > 0");
  const int n = n_states - 1, steps = schedule.steps();
  if (reward.size() != std::size_t(n)) throw Error("exact_value_backward: need one reward per token");
  ValueTable table;
  table.alpha = alpha;
  table.n_states = n_states;
  table.v.assign(steps + 1, std::vector<double>(n_states, 0.0));

  auto& last = table.v[steps];
  for (int y = 0; y < n; ++y) last[y] = reward[y];
  {
    const ad::Array q = rates(steps);
    double total = 0.0;
    for (int y = 0; y < n; ++y) total += q[std::size_t(n) * n_states + y];
    std::vector<double> terms(n);
    for (int y = 0; y < n; ++y) {
      const double w = total > 0.0 ? q[std::size_t(n) * n_states + y] / total : 1.0 / n;
      terms[y] = w > 0.0 ? std::log(w) + reward[y] / alpha : kNegInf;
    }
    last[n] = alpha * logsumexp(terms);
  }
  std::vector<double> terms(n_states);
  for (int k = steps; k >= 1; --k) {
    const ad::Array p = transition_matrix(rates(k), schedule.dt());
    for (int x = 0; x < n_states; ++x) {
      for (int y = 0; y < n_states; ++y) {
        const double pr = p[std::size_t(x) * n_states + y];
        terms[y] = pr > 0.0 ? std::log(pr) + table.v[k][y] / alpha : kNegInf;
      }
      table.v[k - 1][x] = alpha * logsumexp(terms);
    }
  }
  return table;
}

ValueTable exact_value_backward(const Denoiser& pre, const Reward& reward, double alpha, const NoiseSchedule& schedule) {
  if (pre.sequence().length != 1) {
    throw Error("exact_value_backward: the state space is only enumerable for M = 1; use mc_value_regression");
  }
  const int n = pre.vocab().n_tokens;
  if (reward.length() != 1 || reward.n_tokens() != n) throw Error("exact_value_backward: reward does not match model");
  std::vector<double> r(n);
  for (int y = 0; y < n; ++y) r[y] = reward.score(TokenSeq{y});
  return exact_value_backward(model_step_rates(pre, schedule), schedule, pre.vocab().states(), r, alpha);
}

ad::Array doob_guided_rates(const ad::Array& q_pre, std::span<const double> log_h_next,
                            std::span<const double> log_h_prev) {
  const std::size_t s = q_pre.dim(0);
  if (log_h_next.size() != s || log_h_prev.size() != s) throw Error("doob_guided_rates: value vectors have the wrong size");
  ad::Array q({s, s}, 0.0);
  for (std::size_t x = 0; x < s; ++x) {
    double out = 0.0;
    bool any = false;
    for (std::size_t y = 0; y < s; ++y)
      if (y != x && q_pre[x * s + y] != 0.0) any = true;
    if (!any) continue;
    if (log_h_prev[x] == kNegInf) {
      throw Error("doob_guided_rates: value is zero at state " + std::to_string(x) + "; the ratio is undefined");
    }
    for (std::size_t y = 0; y < s; ++y) {
      if (y == x || q_pre[x * s + y] == 0.0) continue;
      const double rate = q_pre[x * s + y] * std::exp(log_h_next[y] - log_h_prev[x]);
      q[x * s + y] = rate;
      out += rate;
    }
    q[x * s + x] = -out;
  }
  return q;
}

StepRates doob_step_rates(const StepRates& pre, const ValueTable& table) {
  return [pre, table](int k) {
    std::vector<double> next(table.n_states), prev(table.n_states);
    for (int x = 0; x < table.n_states; ++x) {
      next[x] = table.log_h(k, x);
      prev[x] = table.log_h(k - 1, x);
    }
    return doob_guided_rates(pre(k), next, prev);
  };
}

Twist table_twist(const ValueTable& table) {
  return [table](const std::vector<TokenSeq>& states, int k) {
    std::vector<double> out(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i].size() != 1) throw Error("table_twist: single-token states only");
      out[i] = table.log_h(k, states[i][0]);
    }
    return out;
  };
}

ValueNetwork::ValueNetwork(Vocabulary vocab, SequenceSpec seq, double horizon, int width, std::uint64_t seed)
    : vocab_(vocab), seq_(seq), horizon_(horizon), width_(width) {
  Rng rng(seed);
  const std::size_t s = vocab.states(), m = seq.length, d = width;
  auto init = [&](ad::Shape shape, double fan_in) {
    ad::Array a(std::move(shape));
    for (double& v : a.values) v = (2.0 * rng.uniform() - 1.0) / std::sqrt(fan_in);
    return a;
  };
  params_.add("tok_emb", init({s, d}, double(s)));
  params_.add("pos_emb", init({m, d}, double(m)));
  params_.add("time_w", init({1, d}, 1.0));
  params_.add("time_b", ad::Array({d}, 0.0));
  params_.add("w1", init({d, d}, double(d)));
  params_.add("b1", ad::Array({d}, 0.0));
  params_.add("out_w", ad::Array({d, 1}, 0.0));
  params_.add("out_b", ad::Array({1}, 0.0));
}

BoundParams ValueNetwork::bind(ad::Tape* tape) const {
  BoundParams out;
  for (const auto& p : params_) out.push_back(tape ? tape->variable(p.value) : ad::constant(p.value));
  return out;
}

ad::Var ValueNetwork::log_g(const BoundParams& p, const ad::Var& relaxed, std::span<const double> times) const {
  using namespace ad;
  const std::size_t b = relaxed.dim(0), m = seq_.length;
  Array t({b, 1, 1});
  for (std::size_t i = 0; i < b; ++i) t[i] = times[i] / horizon_;
  Var h = add(add(matmul(relaxed, p[0]), p[1]), add(matmul(constant(std::move(t)), p[2]), p[3]));
  h = tanh(h);
  h = tanh(add(matmul(h, p[4]), p[5]));
  const Var pooled = matmul(constant(Array({1, m}, 1.0 / double(m))), h);
  return reshape(add(matmul(pooled, p[6]), p[7]), {b});
}

std::vector<double> ValueNetwork::log_h(const std::vector<TokenSeq>& states, double t) const {
  const std::vector<double> times(states.size(), t);
  const ad::Array s = log_g(bind(nullptr), ad::constant(one_hot_batch(states, vocab_.states())), times).value();
  std::vector<double> out(states.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] + reference / alpha;
  return out;
}

std::shared_ptr<ValueNetwork> mc_value_regression(const Denoiser& pre, const Reward& reward, double alpha,
                                                  const NoiseSchedule& schedule, const ValueRegressionConfig& config) {
  if (!(alpha > 0.0)) throw Error("mc_value_regression: alpha must be > 0");
  const Vocabulary& vocab = pre.vocab();
  const int s = vocab.states(), steps = schedule.steps();
  const std::size_t m = pre.sequence().length;
  auto net = std::make_shared<ValueNetwork>(vocab, pre.sequence(), schedule.horizon(), config.width, config.seed);
  net->alpha = alpha;
  if (config.n_rollouts < 100) {
    net->warnings.push_back("mc_value_regression: only " + std::to_string(config.n_rollouts) +
                            " rollouts; the value estimate will have high variance");
  }

  struct Pair {
    TokenSeq state;
    int k;
    std::size_t rollout;
  };
  std::vector<Pair> pairs;
  std::vector<double> terminal(config.n_rollouts);
  const auto bound = pre.bind(nullptr);
  const std::size_t chunk = 256;
  for (std::size_t begin = 0; begin < std::size_t(config.n_rollouts); begin += chunk) {
    const std::size_t b = std::min<std::size_t>(chunk, config.n_rollouts - begin);
    std::vector<Rng> rngs;
    std::vector<std::vector<int>> picks(b);
    for (std::size_t i = 0; i < b; ++i) {
      rngs.push_back(Rng::stream(config.seed, begin + i));
      for (int j = 0; j < config.times_per_rollout; ++j) picks[i].push_back(int(rngs[i].below(steps + 1)));
    }
    std::vector<TokenSeq> states(b, TokenSeq(m, vocab.mask()));
    auto record = [&](int k) {
      for (std::size_t i = 0; i < b; ++i)
        for (int pk : picks[i])
          if (pk == k) pairs.push_back({states[i], k, begin + i});
    };
    record(0);
    for (int k = 1; k <= steps; ++k) {
      const ad::Array pi = pretrained_step(pre, bound, states, k, schedule);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) states[i][j] = draw_row(rngs[i], pi.values.data() + (i * m + j) * s, s);
      record(k);
    }
    for (std::size_t i = 0; i < b; ++i) terminal[begin + i] = reward.score(states[i]);
  }

  std::vector<double> scaled(terminal.size());
  for (std::size_t i = 0; i < terminal.size(); ++i) scaled[i] = terminal[i] / alpha;
  net->reference = alpha * (logsumexp(scaled) - std::log(double(scaled.size())));
  std::vector<double> target(terminal.size());
  for (std::size_t i = 0; i < terminal.size(); ++i) target[i] = std::exp((terminal[i] - net->reference) / alpha);

  Adam adam(net->params(), AdamConfig{config.learning_rate});
  Rng shuffle(config.seed ^ 0x7a3cULL);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
      const std::size_t b = std::min<std::size_t>(config.batch, order.size() - begin);
      std::vector<TokenSeq> x(b);
      std::vector<double> times(b);
      ad::Array y({b});
      for (std::size_t i = 0; i < b; ++i) {
        const Pair& pr = pairs[order[begin + i]];
        x[i] = pr.state;
        times[i] = schedule.time(pr.k);
        y[i] = target[pr.rollout];
      }
      ad::Tape tape;
      const auto params = net->bind(&tape);
      const ad::Var g = ad::exp(net->log_g(params, ad::constant(one_hot_batch(x, s)), times));
      const ad::Var diff = ad::sub(g, ad::constant(std::move(y)));
      const ad::Var loss = ad::mean(ad::mul(diff, diff));
      if (!std::isfinite(loss.item())) throw Error("mc_value_regression: non-finite regression loss");
      total += loss.item() * double(b);
      adam.step(net->params(), collect_gradients(tape.backward(loss), params));
    }
    net->loss_log.push_back(total / double(std::max<std::size_t>(order.size(), 1)));
  }
  return net;
}

Twist network_twist(std::shared_ptr<const ValueNetwork> net, const NoiseSchedule& schedule) {
  return [net, schedule](const std::vector<TokenSeq>& states, int k) { return net->log_h(states, schedule.time(k)); };
}

Potential posterior_mean_potential(const Denoiser& pre, const Reward& reward, double alpha,
                                   const NoiseSchedule& schedule) {
  auto bound = std::make_shared<BoundParams>(pre.bind(nullptr));
  const Denoiser* model = &pre;
  const int n = pre.vocab().n_tokens;
  return [model, bound, reward, alpha, schedule, n](const ad::Var& relaxed, int k) {
    const std::vector<double> times(relaxed.dim(0), schedule.time(k));
    const ad::Var probs = model->predict_x0(*bound, relaxed, times);
    const ad::Var tokens = ad::slice_last(relaxed, 0, n);
    const ad::Var masked = ad::slice_last(relaxed, n, n + 1);
    return ad::scale(reward.evaluate(ad::add(tokens, ad::mul(masked, probs))), 1.0 / alpha);
  };
}

Potential table_potential(const ValueTable& table) {
  return [table](const ad::Var& relaxed, int k) {
    const std::size_t b = relaxed.dim(0), s = table.n_states;
    if (relaxed.dim(1) != 1 || relaxed.dim(2) != s) throw Error("table_potential: single-token states only");
    ad::Array w({s, 1});
    for (std::size_t x = 0; x < s; ++x) w[x] = table.log_h(k, int(x));
    return ad::reshape(ad::matmul(ad::reshape(relaxed, {b, s}), ad::constant(std::move(w))), {b});
  };
}

ad::Array cg_log_ratios(const Potential& potential, const std::vector<TokenSeq>& states, int k, int n_states,
                        CgVariant variant) {
  const std::size_t b = states.size(), m = b ? states[0].size() : 0, s = n_states;
  const int mask = n_states - 1;
  ad::Array out({b, m, s}, 0.0);
  if (b == 0) return out;
  if (variant == CgVariant::Taylor) {
    ad::Tape tape;
    const ad::Var x = tape.variable(one_hot_batch(states, n_states));
    const ad::Var value = potential(x, k);
    const ad::Array g = tape.backward(ad::sum(value)).of(x);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double here = g[(i * m + j) * s + states[i][j]];
        for (std::size_t y = 0; y < s; ++y) out[(i * m + j) * s + y] = g[(i * m + j) * s + y] - here;
      }
    return out;
  }
  const ad::Array base = potential(ad::constant(one_hot_batch(states, n_states)), k).value();
  struct Candidate {
    std::size_t i, j;
    int y;
  };
  std::vector<Candidate> cands;
  std::vector<TokenSeq> variants;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (states[i][j] != mask) continue;
      for (int y = 0; y < mask; ++y) {
        cands.push_back({i, j, y});
        variants.push_back(states[i]);
        variants.back()[j] = y;
      }
    }
  const std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < variants.size(); begin += chunk) {
    const std::size_t c = std::min(chunk, variants.size() - begin);
    const std::vector<TokenSeq> part(variants.begin() + begin, variants.begin() + begin + c);
    const ad::Array vals = potential(ad::constant(one_hot_batch(part, n_states)), k).value();
    for (std::size_t r = 0; r < c; ++r) {
      const Candidate& cd = cands[begin + r];
      out[(cd.i * m + cd.j) * s + cd.y] = vals[r] - base[cd.i];
    }
  }
  return out;
}

ad::Array pretrained_step(const Denoiser& pre, const BoundParams& bound, const std::vector<TokenSeq>& states, int k,
                          const NoiseSchedule& schedule, std::span<const int> labels) {
  const std::vector<double> times(states.size(), schedule.time(k - 1));
  const ad::Var x = ad::constant(one_hot_batch(states, pre.vocab().states()));
  const ad::Var probs = pre.predict_x0(bound, x, times, labels);
  return step_distribution(x, probs, schedule.unmask_probability(k)).value();
}

ad::Array classifier_guidance_step(const Denoiser& pre, const BoundParams& bound, const Potential& potential,
                                   const std::vector<TokenSeq>& states, int k, const NoiseSchedule& schedule,
                                   CgVariant variant) {
  const int s = pre.vocab().states();
  ad::Array pi = pretrained_step(pre, bound, states, k, schedule);
  const ad::Array lr = cg_log_ratios(potential, states, k, s, variant);
  const std::size_t rows = pi.size() / s;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = kNegInf;
    for (int y = 0; y < s; ++y)
      if (pi[r * s + y] > 0.0) mx = std::max(mx, lr[r * s + y]);
    double total = 0.0;
    for (int y = 0; y < s; ++y) {
      double& v = pi[r * s + y];
      v = v > 0.0 ? v * std::exp(lr[r * s + y] - mx) : 0.0;
      total += v;
    }
    for (int y = 0; y < s; ++y) pi[r * s + y] /= total;
  }
  return pi;
}

std::vector<TokenSeq> cg_sample(const Denoiser& pre, const Potential& potential, const NoiseSchedule& schedule,
                                std::size_t n, std::uint64_t seed, CgVariant variant, std::size_t chunk) {
  const int s = pre.vocab().states();
  const std::size_t m = pre.sequence().length;
  const auto bound = pre.bind(nullptr);
  std::vector<TokenSeq> out;
  out.reserve(n);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t b = std::min(chunk, n - begin);
    std::vector<Rng> rngs;
    for (std::size_t i = 0; i < b; ++i) rngs.push_back(Rng::stream(seed, begin + i));
    std::vector<TokenSeq> states(b, TokenSeq(m, pre.vocab().mask()));
    for (int k = 1; k <= schedule.steps(); ++k) {
      const ad::Array pi = classifier_guidance_step(pre, bound, potential, states, k, schedule, variant);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) states[i][j] = draw_row(rngs[i], pi.values.data() + (i * m + j) * s, s);
    }
    for (auto& st : states) out.push_back(std::move(st));
  }
  return out;
}

std::vector<int> sample_single_token(const StepRates& rates, const NoiseSchedule& schedule, int n_states,
                                     std::size_t n, std::uint64_t seed, int record_step) {
  const int steps = schedule.steps();
  const int stop = record_step < 0 ? steps : record_step;
  std::vector<ad::Array> p;
  for (int k = 1; k <= stop; ++k) p.push_back(transition_matrix(rates(k), schedule.dt()));
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, i);
    int x = n_states - 1;
    for (int k = 1; k <= stop; ++k) x = draw_row(rng, &p[k - 1][std::size_t(x) * n_states], n_states);
    out[i] = x;
  }
  return out;
}

SmcResult smc_sample(const Denoiser& pre, const Reward& reward, const NoiseSchedule& schedule, const Twist& twist,
                     const Potential* proposal, const SmcConfig& config, std::uint64_t seed) {
  const std::size_t p = config.particles;
  if (p < 2) throw Error("smc_sample: need at least 2 particles");
  if (!(config.alpha > 0.0)) throw Error("smc_sample: alpha must be > 0");
  const int s = pre.vocab().states();
  const std::size_t m = pre.sequence().length;
  const auto bound = pre.bind(nullptr);

  std::vector<TokenSeq> states(p, TokenSeq(m, pre.vocab().mask()));
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < p; ++i) rngs.push_back(Rng::stream(seed, i));
  Rng resampler = Rng::stream(seed ^ 0xc2b2ae3d27d4eb4fULL, p);
  std::vector<double> log_w(p, 0.0), inc(p), prev_twist = twist(states, 0), next_twist(p);

  SmcResult res;
  res.log_normalizer = logsumexp(prev_twist) - std::log(double(p));
  for (int k = 1; k <= schedule.steps(); ++k) {
    const ad::Array pi_pre = pretrained_step(pre, bound, states, k, schedule);
    const ad::Array pi_q =
        proposal ? classifier_guidance_step(pre, bound, *proposal, states, k, schedule, config.variant) : pi_pre;
    for (std::size_t i = 0; i < p; ++i) {
      double lr = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t row = (i * m + j) * s;
        const int y = draw_row(rngs[i], pi_q.values.data() + row, s);
        states[i][j] = y;
        if (proposal) lr += std::log(pi_pre[row + y]) - std::log(pi_q[row + y]);
      }
      inc[i] = lr;
    }
    if (k == schedule.steps()) {
      for (std::size_t i = 0; i < p; ++i) next_twist[i] = reward.score(states[i]) / config.alpha;
    } else {
      next_twist = twist(states, k);
    }
    std::vector<double> updated(p);
    for (std::size_t i = 0; i < p; ++i) {
      inc[i] += next_twist[i] - prev_twist[i];
      updated[i] = log_w[i] + inc[i];
    }
    const double before = logsumexp(log_w), after = logsumexp(updated);
    if (after == kNegInf || std::isnan(after)) {
      throw Error("smc_sample: every particle weight vanished at step " + std::to_string(k) + " (degenerate twist)");
    }
    res.log_normalizer += after - before;
    log_w = updated;

    double sw = 0.0, sw2 = 0.0;
    for (double lw : log_w) {
      const double w = std::exp(lw - after);
      sw += w;
      sw2 += w * w;
    }
    const double ess = sw * sw / sw2;
    res.ess.push_back(ess);
    prev_twist = next_twist;

    if (k < schedule.steps() && ess < config.ess_fraction * double(p)) {
      std::vector<double> cum(p);
      double acc = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        acc += std::exp(log_w[i] - after);
        cum[i] = acc;
      }
      const double u0 = resampler.uniform() / double(p);
      std::vector<TokenSeq> new_states(p);
      std::vector<double> new_twist(p);
      std::size_t idx = 0;
      for (std::size_t i = 0; i < p; ++i) {
        const double u = (u0 + double(i) / double(p)) * acc;
        while (idx + 1 < p && cum[idx] < u) ++idx;
        new_states[i] = states[idx];
        new_twist[i] = prev_twist[idx];
      }
      states = std::move(new_states);
      prev_twist = std::move(new_twist);
      std::fill(log_w.begin(), log_w.end(), 0.0);
      ++res.resamples;
    }
  }
  const double total = logsumexp(log_w);
  res.weights.resize(p);
  for (std::size_t i = 0; i < p; ++i) res.weights[i] = std::exp(log_w[i] - total);
  res.sequences = std::move(states);
  return res;
}

CfgResult cfg_train_and_sample(const SyntheticDistribution& dist, const Reward& reward, const CfgConfig& config,
                               const NoiseSchedule& schedule, std::size_t n_samples, std::uint64_t seed) {
  const std::vector<TokenSeq> data = sample_data(dist, config.n_train, seed);
  const std::vector<double> r = reward.score(data);
  std::vector<double> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t qi = std::min(sorted.size() - 1, std::size_t(config.quantile * double(sorted.size())));
  CfgResult res;
  res.threshold = sorted[qi];
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    labels[i] = r[i] >= res.threshold ? 1 : 0;
    res.n_high += labels[i];
  }
  if (res.n_high < 10) {
    throw Error("cfg_train_and_sample: only " + std::to_string(res.n_high) +
                " high-label examples; conditional training needs at least 10");
  }
  MlpDenoiserConfig arch = config.architecture;
  arch.n_labels = config.n_labels;
  arch.horizon = schedule.horizon();
  res.model = std::make_unique<MlpDenoiser>(Vocabulary(dist.n_tokens), SequenceSpec(dist.length), arch, seed + 1);
  PretrainConfig training = config.training;
  training.seed = seed + 2;
  train_pretrained(*res.model, data, {}, schedule, training, labels);
  SampleOptions opts;
  opts.label = 1;
  res.sequences = ancestral_sample(*res.model, schedule, n_samples, seed + 3, opts).sequences;
  return res;
}

}  // namespace drakes
