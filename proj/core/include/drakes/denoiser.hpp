#pragma once

// x0-predictors E[x0 = y | x_t] that parameterize the reverse rates.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drakes/autodiff.hpp"
#include "drakes/diffusion.hpp"
#include "drakes/rng.hpp"

namespace drakes {

struct Parameter {
  std::string name;
  ad::Array value;
};

class ParameterSet {
 public:
  void add(std::string name, ad::Array value);
  std::size_t size() const { return params_.size(); }
  std::size_t total_size() const;
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const ad::Array& get(const std::string& name) const;
  ad::Array& get(const std::string& name);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

// Parameters as graph nodes for one forward pass.
using BoundParams = std::vector<ad::Var>;

class Denoiser {
 public:
  Denoiser(Vocabulary vocab, SequenceSpec seq) : vocab_(vocab), seq_(seq) {}
  virtual ~Denoiser() = default;

  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Denoiser> clone() const = 0;
  virtual nlohmann::json architecture() const = 0;

  // relaxed: (B, M, N+1) points on the simplex; times: B state times;
  // labels: empty or B condition tokens. Returns (B, M, N) probabilities.
  ad::Var predict_x0(const BoundParams& params, const ad::Var& relaxed, std::span<const double> times,
                     std::span<const int> labels = {}) const;

  // Leaves on `tape` for trainable models, constants when `tape` is null or
  // the model is frozen.
  BoundParams bind(ad::Tape* tape) const;

  // Deep copy whose parameters never receive gradients.
  std::unique_ptr<Denoiser> clone_frozen() const;

  bool frozen() const { return frozen_; }
  const Vocabulary& vocab() const { return vocab_; }
  const SequenceSpec& sequence() const { return seq_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Convenience: no-tape forward on hard sequences at a common time.
  ad::Array predict(const std::vector<TokenSeq>& states, double t, std::span<const int> labels = {}) const;

 protected:
  virtual ad::Var forward(const BoundParams& params, const ad::Var& relaxed, std::span<const double> times,
                          std::span<const int> labels) const = 0;

  Vocabulary vocab_;
  SequenceSpec seq_;
  ParameterSet params_;
  bool frozen_ = false;
};

struct MlpDenoiserConfig {
  int width = 64;
  int blocks = 3;
  int n_labels = 0;  // size of the condition vocabulary; 0 = unconditional
  double horizon = 1.0;
};

// Summed token (via embedding-matrix mixing of the relaxed state), position,
// time and optional label embeddings followed by residual blocks. Each block
// mixes across positions with an (M, M) matrix and then applies a tanh MLP
// over channels.
class MlpDenoiser final : public Denoiser {
 public:
  MlpDenoiser(Vocabulary vocab, SequenceSpec seq, MlpDenoiserConfig config, std::uint64_t seed);

  std::string kind() const override { return "mlp"; }
  std::unique_ptr<Denoiser> clone() const override { return std::make_unique<MlpDenoiser>(*this); }
  nlohmann::json architecture() const override;
  const MlpDenoiserConfig& config() const { return config_; }

  // Zeroes the label embedding table.
  void clear_label_embedding();

 protected:
  ad::Var forward(const BoundParams& params, const ad::Var& relaxed, std::span<const double> times,
                  std::span<const int> labels) const override;

 private:
  MlpDenoiserConfig config_;
};

// Per-step probability rows for a single token (M = 1). Row k serves the
// state at grid time t_k.
class TabularDenoiser final : public Denoiser {
 public:
  TabularDenoiser(Vocabulary vocab, int steps, double horizon = 1.0);
  // `rows` is (K, N); each row a probability vector.
  TabularDenoiser(Vocabulary vocab, const ad::Array& rows, double horizon = 1.0);
  // The same row at every step.
  static TabularDenoiser constant(Vocabulary vocab, std::span<const double> probs, int steps, double horizon = 1.0);

  std::string kind() const override { return "tabular"; }
  std::unique_ptr<Denoiser> clone() const override { return std::make_unique<TabularDenoiser>(*this); }
  nlohmann::json architecture() const override;

  int steps() const { return steps_; }
  std::size_t row_index(double t) const;
  std::vector<double> row(std::size_t k) const;

 protected:
  ad::Var forward(const BoundParams& params, const ad::Var& relaxed, std::span<const double> times,
                  std::span<const int> labels) const override;

 private:
  int steps_;
  double horizon_;
};

// Checkpoint: 8-byte little-endian header length, JSON header, then every
// parameter's values as little-endian float64 in header order.
void save_checkpoint(const std::string& path, const Denoiser& model, const nlohmann::json& extra = {});
std::unique_ptr<Denoiser> load_checkpoint(const std::string& path, nlohmann::json* header = nullptr);

}  // namespace drakes
