#pragma once

// Reward fine-tuning by backpropagation through Gumbel-Softmax relaxed
// trajectories with a KL penalty towards the pretrained model.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "drakes/config.hpp"
#include "drakes/denoiser.hpp"
#include "drakes/diffusion.hpp"
#include "drakes/reward.hpp"

namespace drakes {

enum class TemperatureSchedule { Linear, Constant };

// Full: Gumbel-Softmax over all N+1 states of the step categorical.
// Factorized: a uniform draw decides whether a masked position unmasks (its
// probability does not depend on the model) and Gumbel-Softmax relaxes the
// token choice over the N real tokens.
enum class Relaxation { Full, Factorized };

struct FinetuneConfig {
  double alpha = 0.001;
  int batch = 128;
  int iterations = 1000;
  int steps = 128;
  double horizon = 1.0;
  double tau0 = 1.0;
  TemperatureSchedule temperature = TemperatureSchedule::Linear;
  int truncation = 50;  // steps k <= truncation carry no gradient
  double learning_rate = 1e-3;
  bool straight_through = true;
  bool gumbel_on_probs = false;
  Relaxation relaxation = Relaxation::Factorized;
  bool flat_kl_weight = false;
  int micro_batch = 8;  // rollouts per tape
  std::uint64_t seed = 0;

  static FinetuneConfig dna();
  static FinetuneConfig protein();
  // Reads the keys of this struct from `cfg`, starting from `base`.
  static FinetuneConfig from_config(const Config& cfg, FinetuneConfig base);
  static FinetuneConfig from_config(const Config& cfg);
  void validate() const;
};

// tau0 * T / (t_k + dt) capped at 10 tau0, or tau0 for the constant schedule.
double temperature(const FinetuneConfig& config, const NoiseSchedule& schedule, int k);

// Standard Gumbel(0, 1) noise of the given shape.
ad::Array gumbel_noise(const ad::Shape& shape, Rng& rng);

// softmax((log pi + G) / tau) over the last axis; with `on_probs`,
// softmax((pi + G) / tau). Zero entries of pi get -inf logits.
ad::Var gumbel_softmax(const ad::Var& pi, double tau, const ad::Array& noise, bool on_probs = false);

// Forward: one-hot of the argmax (ties to the lowest index). Backward: identity.
ad::Var straight_through(const ad::Var& relaxed);

// Per-sample KL weight sum_i [x]_{i,Mask} * sum_y (-a + b + a log(a / b)) with
// a = p_theta, b = max(p_pre, min(a, 1e-12)). relaxed (B, M, N+1), probs
// (B, M, N). Returns (B). `clamped` counts entries raised by the floor.
ad::Var kl_rate(const ad::Var& relaxed, const ad::Var& p_theta, const ad::Var& p_pre, std::size_t* clamped = nullptr);

struct RolloutOutput {
  ad::Var reward;  // (B)
  ad::Var kl;      // (B)
  ad::Array terminal;
  std::vector<Trajectory> trajectories;  // when requested
  std::size_t clamped = 0;
};

// One relaxed rollout per RNG. `tape` may be null (no gradients). `pre` may
// be null when alpha = 0 (the KL term is then zero).
RolloutOutput rollout_relaxed(const Denoiser& model, const BoundParams& params, const Denoiser* pre,
                              const BoundParams* pre_params, const FinetuneConfig& config,
                              const NoiseSchedule& schedule, const Reward& reward, std::span<Rng> rngs,
                              ad::Tape* tape, bool record = false);

// Simplified KL of a recorded relaxed trajectory: sum_k w_k * kl_rate at the
// state before step k, w_k = gamma(t_k) dt, or gamma(t_k) / K when flat.
double kl_simplified(const Trajectory& trajectory, const Denoiser& model, const Denoiser& pre,
                     const NoiseSchedule& schedule, bool flat_weight = false);

struct IterationMetrics {
  int iteration = 0;
  double mean_reward = 0.0;
  double kl = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wallclock = 0.0;
};

struct FinetuneResult {
  std::unique_ptr<Denoiser> model;
  std::vector<IterationMetrics> metrics;
  std::size_t clamped = 0;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::shared_ptr<Denoiser> last_good, int iteration)
      : Error(what), last_good(std::move(last_good)), iteration(iteration) {}
  std::shared_ptr<Denoiser> last_good;
  int iteration;
};

// S iterations of B relaxed rollouts, ascending mean reward - alpha * mean KL
// with Adam. Throws DivergenceError on a non-finite loss or gradient.
FinetuneResult finetune(const Denoiser& pretrained, const Reward& reward, const FinetuneConfig& config,
                        const std::function<void(const IterationMetrics&)>& on_iteration = {});

}  // namespace drakes
