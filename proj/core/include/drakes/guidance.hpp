#pragma once

// Inference-time guidance: exact value tables and Doob-transformed rates,
// a regression value estimator, classifier guidance, twisted SMC and
// classifier-free guidance.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "drakes/denoiser.hpp"
#include "drakes/diffusion.hpp"
#include "drakes/oracle.hpp"
#include "drakes/pretrain.hpp"
#include "drakes/reward.hpp"

namespace drakes {

// V_{t_k}(x) for every single-token state on the grid k = 0..K.
struct ValueTable {
  double alpha = 1.0;
  int n_states = 0;
  std::vector<std::vector<double>> v;

  int steps() const { return int(v.size()) - 1; }
  double value(int k, int x) const { return v.at(k).at(x); }
  double log_h(int k, int x) const { return v.at(k).at(x) / alpha; }  // log exp(V / alpha)
  double h(int k, int x) const;
};

// exp(V_{k-1}(x) / alpha) = sum_y P_k(y | x) exp(V_k(y) / alpha) with
// V_K(token) = r(token); V_K(Mask) uses the final step's unmasking row.
ValueTable exact_value_backward(const StepRates& rates, const NoiseSchedule& schedule, int n_states,
                                std::span<const double> reward, double alpha);
ValueTable exact_value_backward(const Denoiser& pre, const Reward& reward, double alpha, const NoiseSchedule& schedule);

// Q*_{x,y} = Q_{x,y} h_next(y) / h_prev(x) off the diagonal, rows closed to
// sum to zero. Inputs are log h; log_h_prev = -inf on a row is an error.
ad::Array doob_guided_rates(const ad::Array& q_pre, std::span<const double> log_h_next,
                            std::span<const double> log_h_prev);

// Step k uses h_k for targets and h_{k-1} for sources.
StepRates doob_step_rates(const StepRates& pre, const ValueTable& table);

// Log twist log h_k(x) for a batch of hard states at grid step k.
using Twist = std::function<std::vector<double>(const std::vector<TokenSeq>& states, int k)>;

Twist table_twist(const ValueTable& table);

struct ValueRegressionConfig {
  int n_rollouts = 2000;
  int times_per_rollout = 4;
  int width = 32;
  int epochs = 30;
  int batch = 128;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
};

// Least-squares fit of g(x_t, t) = exp(s(x_t, t)) to exp((r(x_T) - r_ref) / alpha)
// on pretrained rollouts. log h = s + r_ref / alpha.
class ValueNetwork {
 public:
  ValueNetwork(Vocabulary vocab, SequenceSpec seq, double horizon, int width, std::uint64_t seed);

  ad::Var log_g(const BoundParams& params, const ad::Var& relaxed, std::span<const double> times) const;
  std::vector<double> log_h(const std::vector<TokenSeq>& states, double t) const;
  BoundParams bind(ad::Tape* tape) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  double alpha = 1.0;
  double reference = 0.0;  // r_ref
  std::vector<std::string> warnings;
  std::vector<double> loss_log;

 private:
  Vocabulary vocab_;
  SequenceSpec seq_;
  double horizon_;
  int width_;
  ParameterSet params_;
};

std::shared_ptr<ValueNetwork> mc_value_regression(const Denoiser& pre, const Reward& reward, double alpha,
                                                  const NoiseSchedule& schedule, const ValueRegressionConfig& config);

Twist network_twist(std::shared_ptr<const ValueNetwork> net, const NoiseSchedule& schedule);

// Log guidance potential of (B, M, N+1) relaxed states at grid step k. Returns (B).
using Potential = std::function<ad::Var(const ad::Var& relaxed, int k)>;

// r(x_tok + x_mask * p_pre(x, t_k)) / alpha: the reward of the predicted clean
// distribution.
Potential posterior_mean_potential(const Denoiser& pre, const Reward& reward, double alpha,
                                   const NoiseSchedule& schedule);

// sum_x relaxed_x * V_k(x) / alpha (single token).
Potential table_potential(const ValueTable& table);

enum class CgVariant { ExactRatio, Taylor };

// Per-position log-ratios (B, M, N+1): potential(x with position i set to y)
// minus potential(x), both at t_k, for the exact variant, or the first-order
// expansion grad[i, y] - grad[i, x_i] for the Taylor variant.
ad::Array cg_log_ratios(const Potential& potential, const std::vector<TokenSeq>& states, int k, int n_states,
                        CgVariant variant);

// pi_cg proportional to pi_pre * exp(log-ratio), normalized per position.
ad::Array classifier_guidance_step(const Denoiser& pre, const BoundParams& bound, const Potential& potential,
                                   const std::vector<TokenSeq>& states, int k, const NoiseSchedule& schedule,
                                   CgVariant variant);

// pi under the pretrained chain for step k on hard states (B, M, N+1).
ad::Array pretrained_step(const Denoiser& pre, const BoundParams& bound, const std::vector<TokenSeq>& states, int k,
                          const NoiseSchedule& schedule, std::span<const int> labels = {});

// Hard sampling with classifier guidance at every step.
std::vector<TokenSeq> cg_sample(const Denoiser& pre, const Potential& potential, const NoiseSchedule& schedule,
                                std::size_t n, std::uint64_t seed, CgVariant variant, std::size_t chunk = 64);

// Hard sampling from explicit single-token step rates.
std::vector<int> sample_single_token(const StepRates& rates, const NoiseSchedule& schedule, int n_states,
                                     std::size_t n, std::uint64_t seed, int record_step = -1);

struct SmcConfig {
  int particles = 64;
  double alpha = 1.0;
  double ess_fraction = 0.5;
  CgVariant variant = CgVariant::Taylor;
};

struct SmcResult {
  std::vector<TokenSeq> sequences;
  std::vector<double> weights;  // normalized
  double log_normalizer = 0.0;  // log estimate of E_pre[exp(r / alpha)]
  int resamples = 0;
  std::vector<double> ess;  // after each step
};

// Twisted SMC with the pretrained chain as proposal, or classifier guidance
// when `proposal` is set (TDS). The terminal twist is exactly r / alpha.
SmcResult smc_sample(const Denoiser& pre, const Reward& reward, const NoiseSchedule& schedule, const Twist& twist,
                     const Potential* proposal, const SmcConfig& config, std::uint64_t seed);

struct CfgConfig {
  int n_train = 10000;
  double quantile = 0.95;
  int n_labels = 2;
  MlpDenoiserConfig architecture;
  PretrainConfig training;
};

struct CfgResult {
  std::unique_ptr<MlpDenoiser> model;
  double threshold = 0.0;
  int n_high = 0;
  std::vector<TokenSeq> sequences;
};

// Trains a label-conditioned denoiser on samples of `dist` labelled by
// r >= quantile and samples with the high label.
CfgResult cfg_train_and_sample(const SyntheticDistribution& dist, const Reward& reward, const CfgConfig& config,
                               const NoiseSchedule& schedule, std::size_t n_samples, std::uint64_t seed);

}  // namespace drakes
