#pragma once

// Exact references for single-token (M = 1) chains: discretized marginals,
// tilted targets, TV distances and Kolmogorov / HJB residuals.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "drakes/autodiff.hpp"
#include "drakes/denoiser.hpp"
#include "drakes/diffusion.hpp"

namespace drakes {

// (S, S) source -> target rates used by step k in 1..K.
using StepRates = std::function<ad::Array(int k)>;

// Step k of a single-token masked chain: Mask -> y at gamma(t_k) * p(y), where
// p is the model's prediction on Mask at time t_{k-1}.
StepRates model_step_rates(const Denoiser& model, const NoiseSchedule& schedule);

// Same, with predictions supplied as a function of time.
StepRates masked_step_rates(const std::function<std::vector<double>(double)>& x0_probs, const Vocabulary& vocab,
                            const NoiseSchedule& schedule);

// I + dt * Q. Throws when any entry would be negative.
ad::Array transition_matrix(const ad::Array& rates, double dt);

struct ExactMarginal {
  int n_states = 0;
  std::vector<std::vector<double>> p;  // p[k] at grid time t_k, k = 0..K

  const std::vector<double>& at(int k) const { return p.at(k); }
  // First n entries of slice k (the real tokens).
  std::vector<double> tokens(int k, int n) const;
};

// Propagates `initial` (default: Dirac at the last state, Mask) through
// p_k = p_{k-1} (I + dt Q_k).
ExactMarginal exact_marginal(const StepRates& rates, const NoiseSchedule& schedule, int n_states,
                             std::vector<double> initial = {});

// Normalized exp(r / alpha) * p_pre.
std::vector<double> target_distribution(std::span<const double> p_pre, std::span<const double> reward, double alpha);

double tv_distance(std::span<const double> p, std::span<const double> q);

// Empirical distribution over `n_states` categories.
std::vector<double> histogram(const std::vector<int>& draws, int n_states);

// TV confidence radius sqrt(states / n) quoted next to Monte Carlo checks.
double tv_confidence_radius(int n_states, std::size_t n);

// p(t) = initial * expm(Q t) for a time-constant generator.
std::vector<double> continuous_marginal(const ad::Array& generator, std::span<const double> initial, double t);

struct ResidualReport {
  int steps = 0;
  double dt = 0.0;
  double forward = 0.0;            // max_k |(p(t_{k+1}) - p(t_k)) / dt - p(t_k) Q|
  std::optional<double> backward;  // max |h_{k-1} - P_k h_k|
  std::optional<double> hjb;       // max |dV/dt + alpha sum_y Q (exp((V_y - V_x) / alpha) - 1)|
};

struct ResidualProblem {
  ad::Array generator;          // time-constant (S, S) rates for the forward check
  std::vector<double> initial;  // default: Dirac at Mask
  double horizon = 1.0;
  // Optional value checks on the linear schedule with `steps` steps.
  std::function<std::vector<double>(double)> x0_probs;
  std::vector<double> reward;
  double alpha = 1.0;
};

std::vector<ResidualReport> kolmogorov_residuals(const ResidualProblem& problem, const std::vector<int>& step_counts);

}  // namespace drakes
