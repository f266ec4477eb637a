#pragma once

// Masked discrete diffusion: state spaces, the unmasking schedule, reverse
// rates of the masked chain and its Euler discretization.
//
// Time runs from t = 0 (every position is Mask) to t = T (data). Step k,
// k = 1..K, moves the chain from t_{k-1} to t_k = k * dt using the rates
// evaluated at t_k and the denoiser evaluated on the state at t_{k-1}.

#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "drakes/autodiff.hpp"
#include "drakes/rng.hpp"

namespace drakes {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenSeq = std::vector<int>;

struct Vocabulary {
  int n_tokens = 0;

  Vocabulary() = default;
  explicit Vocabulary(int n);

  int mask() const { return n_tokens; }
  int states() const { return n_tokens + 1; }
};

struct SequenceSpec {
  int length = 0;

  SequenceSpec() = default;
  explicit SequenceSpec(int m);
};

class NoiseSchedule {
 public:
  using RateFn = std::function<double(double)>;

  // Linear masking m(t) = 1 - t/T with gamma(t) = 1 / (T - t + dt), so every
  // masked position unmasks at step k with probability 1 / (K - k + 1).
  NoiseSchedule(double horizon, int steps);
  NoiseSchedule(double horizon, int steps, RateFn gamma, std::string name);

  // gamma = 0 before the final grid time, 1/dt at t = T.
  static NoiseSchedule unmask_at_end(double horizon, int steps);
  static NoiseSchedule constant_rate(double horizon, int steps, double gamma);

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return horizon_ / steps_; }
  double time(int k) const { return k * dt(); }
  const std::string& name() const { return name_; }

  double gamma(double t) const;
  // gamma(t_k) * dt for step k in 1..K.
  double unmask_probability(int k) const;
  // Probability that a position is still masked at time t under the forward
  // coupling.
  double mask_probability(double t) const;
  // Product of per-step survival probabilities is zero.
  bool fully_unmasks() const;

 private:
  double horizon_;
  int steps_;
  RateFn gamma_;
  std::string name_;
};

// Replaces each position by Mask with probability m(t).
TokenSeq forward_mask(const TokenSeq& x0, double t, const NoiseSchedule& schedule, const Vocabulary& vocab, Rng& rng);

// Per-position rate tables over (N+1) x (N+1) source -> target entries.
struct GeneratorSlice {
  int n_states = 0;
  ad::Array table;  // (M, S, S)
  ad::Array mixed;  // (M, S): sum_x relaxed[x] * table[x][.]

  double rate(int position, int from, int to) const {
    return table[(static_cast<std::size_t>(position) * n_states + from) * n_states + to];
  }
};

// Masked-diffusion reverse rates: from Mask to token y at gamma * x0_probs[y],
// diagonal -gamma; rows of unmasked sources are zero.
// x0_probs: (M, N); relaxed: (M, N+1).
GeneratorSlice reverse_rates(const ad::Array& x0_probs, double gamma, const ad::Array& relaxed, const Vocabulary& vocab);

// pi_y = relaxed_y + dt * sum_x relaxed_x * Q[x][y] for a general slice.
ad::Array step_distribution(const ad::Array& relaxed, const GeneratorSlice& rates, double dt);

// Differentiable masked-diffusion form of the same map.
// relaxed: (..., M, N+1), x0_probs: (..., M, N), unmask_prob = gamma * dt.
ad::Var step_distribution(const ad::Var& relaxed, const ad::Var& x0_probs, double unmask_prob);

// Rejects gamma * dt > 1 instead of clamping negative retention mass.
void check_step_size(double unmask_prob, const char* where);

ad::Array one_hot(const TokenSeq& seq, int n_states);
ad::Array one_hot_batch(const std::vector<TokenSeq>& seqs, int n_states);

struct TrajectoryStep {
  double time = 0.0;
  ad::Array pi;     // (M, S) categorical parameters used to draw the state
  ad::Array state;  // (M, S) one-hot or relaxed state at `time`
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
};

// One JSON object per step: {"step", "time", "pi", "state"}.
void write_trajectory_jsonl(std::ostream& os, const Trajectory& trajectory);
Trajectory read_trajectory_jsonl(std::istream& is);

std::string format_sequence(const TokenSeq& seq, const Vocabulary& vocab);
TokenSeq parse_sequence(const std::string& text, const Vocabulary& vocab);

}  // namespace drakes
