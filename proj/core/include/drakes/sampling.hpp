#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "drakes/denoiser.hpp"
#include "drakes/diffusion.hpp"

namespace drakes {

struct SampleOptions {
  std::size_t chunk = 64;  // batch elements per network call; results do not depend on it
  bool record_trajectory = false;
  std::optional<int> label;  // condition token threaded to the model
};

struct SampleBatch {
  std::vector<TokenSeq> sequences;
  std::vector<Trajectory> trajectories;  // filled when requested
};

// Hard categorical draw per position per step from the Euler-discretized
// reverse chain. Sample i uses Rng::stream(seed, i).
SampleBatch ancestral_sample(const Denoiser& model, const NoiseSchedule& schedule, std::size_t n, std::uint64_t seed,
                             const SampleOptions& options = {});

// Monte Carlo ELBO of log p(x) under `model`: average over n_mc draws of
// t uniform on {t_0, ..., t_{K-1}} and x_t ~ forward_mask(x, t) of
// (1 / m(t)) * sum over masked positions of log p(x_i | x_t).
std::vector<double> approx_log_likelihood(const Denoiser& model, const NoiseSchedule& schedule,
                                          const std::vector<TokenSeq>& sequences, int n_mc, std::uint64_t seed,
                                          std::size_t chunk = 256);

}  // namespace drakes
