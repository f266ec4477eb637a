#include "drakes/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace drakes {

SampleBatch ancestral_sample(const Denoiser& model, const NoiseSchedule& schedule, std::size_t n, std::uint64_t seed,
                             const SampleOptions& options) {
  const Vocabulary& vocab = model.vocab();
  const int s = vocab.states();
  const std::size_t m = model.sequence().length;
  const int steps = schedule.steps();
  const auto bound = model.bind(nullptr);
  const std::size_t chunk = std::max<std::size_t>(options.chunk, 1);

  SampleBatch out;
  out.sequences.assign(n, TokenSeq(m, vocab.mask()));
  if (options.record_trajectory) out.trajectories.resize(n);

  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t b = std::min(chunk, n - begin);
    std::vector<Rng> rngs;
    rngs.reserve(b);
    for (std::size_t i = 0; i < b; ++i) rngs.push_back(Rng::stream(seed, begin + i));
    std::vector<TokenSeq> states(b, TokenSeq(m, vocab.mask()));
    std::vector<int> labels;
    if (options.label) labels.assign(b, *options.label);

    if (options.record_trajectory) {
      for (std::size_t i = 0; i < b; ++i) {
        out.trajectories[begin + i].steps.push_back({0.0, ad::Array(), one_hot(states[i], s)});
      }
    }
    for (int k = 1; k <= steps; ++k) {
      const std::vector<double> times(b, schedule.time(k - 1));
      const ad::Var x = ad::constant(one_hot_batch(states, s));
      const ad::Var probs = model.predict_x0(bound, x, times, labels);
      const ad::Array pi = step_distribution(x, probs, schedule.unmask_probability(k)).value();
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const std::span<const double> row(pi.values.data() + (i * m + j) * s, s);
          states[i][j] = static_cast<int>(rngs[i].categorical(row));
        }
        if (options.record_trajectory) {
          ad::Array pi_i({m, std::size_t(s)});
          std::copy_n(pi.values.data() + i * m * s, m * s, pi_i.values.data());
          out.trajectories[begin + i].steps.push_back({schedule.time(k), std::move(pi_i), one_hot(states[i], s)});
        }
      }
    }
    for (std::size_t i = 0; i < b; ++i) {
      if (std::find(states[i].begin(), states[i].end(), vocab.mask()) != states[i].end()) {
        throw Error("ancestral_sample: Mask remains at t = T; schedule '" + schedule.name() +
                    "' does not unmask every position");
      }
      out.sequences[begin + i] = std::move(states[i]);
    }
  }
  return out;
}

std::vector<double> approx_log_likelihood(const Denoiser& model, const NoiseSchedule& schedule,
                                          const std::vector<TokenSeq>& sequences, int n_mc, std::uint64_t seed,
                                          std::size_t chunk) {
  if (n_mc < 1) throw Error("approx_log_likelihood: n_mc must be >= 1");
  const Vocabulary& vocab = model.vocab();
  const int n = vocab.n_tokens, s = vocab.states();
  const std::size_t m = model.sequence().length;
  for (const auto& x : sequences) {
    if (x.size() != m) throw Error("approx_log_likelihood: sequence length mismatch");
    for (int tok : x)
      if (tok < 0 || tok >= n) throw Error("approx_log_likelihood: sequence contains Mask or an invalid token");
  }
  struct Draw {
    std::size_t seq;
    double time;
    TokenSeq masked;
  };
  std::vector<Draw> draws;
  draws.reserve(sequences.size() * n_mc);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    Rng rng = Rng::stream(seed, i);
    for (int d = 0; d < n_mc; ++d) {
      const int k = static_cast<int>(rng.below(schedule.steps()));
      const double t = schedule.time(k);
      draws.push_back({i, t, forward_mask(sequences[i], t, schedule, vocab, rng)});
    }
  }
  std::vector<double> total(sequences.size(), 0.0);
  const auto bound = model.bind(nullptr);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < draws.size(); begin += chunk) {
    const std::size_t b = std::min(chunk, draws.size() - begin);
    std::vector<TokenSeq> states(b);
    std::vector<double> times(b);
    for (std::size_t r = 0; r < b; ++r) {
      states[r] = draws[begin + r].masked;
      times[r] = draws[begin + r].time;
    }
    const ad::Array probs = model.predict_x0(bound, ad::constant(one_hot_batch(states, s)), times).value();
    for (std::size_t r = 0; r < b; ++r) {
      const Draw& d = draws[begin + r];
      const double weight = 1.0 / schedule.mask_probability(d.time);
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (d.masked[j] != vocab.mask()) continue;
        acc += std::log(probs[(r * m + j) * n + sequences[d.seq][j]]);
      }
      total[d.seq] += weight * acc;
    }
  }
  for (double& v : total) v /= n_mc;
  return total;
}

}  // namespace drakes
