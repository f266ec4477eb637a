#pragma once

// Synthetic data with exact probabilities and masked-diffusion pretraining.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drakes/denoiser.hpp"
#include "drakes/diffusion.hpp"

namespace drakes {

enum class DataKind { Uniform, MotifMixture, Categorical };

// Uniform background, or with probability lambda the motif planted at a
// uniform start over a uniform background, or i.i.d. positions from `probs`.
struct SyntheticDistribution {
  DataKind kind = DataKind::Uniform;
  int n_tokens = 4;
  int length = 1;
  TokenSeq motif;
  double lambda = 0.0;
  std::vector<double> probs;

  static SyntheticDistribution uniform(int n_tokens, int length);
  static SyntheticDistribution motif_mixture(int n_tokens, int length, TokenSeq motif, double lambda);
  static SyntheticDistribution categorical(std::vector<double> probs, int length);

  double log_prob(const TokenSeq& x) const;
  double prob(const TokenSeq& x) const { return std::exp(log_prob(x)); }
  nlohmann::json to_json() const;
};

std::vector<TokenSeq> sample_data(const SyntheticDistribution& dist, std::size_t n, std::uint64_t seed);

// Sum of prob over the whole sequence space (N^M <= 10^6).
double total_probability(const SyntheticDistribution& dist);

struct PretrainConfig {
  int epochs = 20;
  int batch = 64;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;     // mean masked cross-entropy per sequence
  double heldout_nelbo = 0.0;  // same loss on fixed held-out masks
  double seconds = 0.0;
};

struct PretrainResult {
  std::vector<EpochLog> log;
  nlohmann::json to_json() const;
};

// Masked cross-entropy sum_{masked i} -log p(x0_i | x_t) with t uniform on
// {t_0, ..., t_{K-1}}, averaged over the batch.
ad::Var masked_diffusion_loss(const Denoiser& model, const BoundParams& bound, const std::vector<TokenSeq>& x0,
                              const NoiseSchedule& schedule, std::span<Rng> rngs, std::span<const int> labels = {});

// Trains `model` in place. Aborts with Error on a non-finite loss.
PretrainResult train_pretrained(Denoiser& model, const std::vector<TokenSeq>& train,
                                const std::vector<TokenSeq>& heldout, const NoiseSchedule& schedule,
                                const PretrainConfig& config, std::span<const int> labels = {},
                                const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace drakes
