#pragma once

// Terminal rewards r: X^M -> R. Every kind is evaluated through the
// per-position weight matrix W (M, N): raw(x) = <W, x>, which on one-hot
// inputs is the sum of window scores of a position weight matrix, and the
// saturating kind returns scale * tanh(raw / scale).

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drakes/autodiff.hpp"
#include "drakes/diffusion.hpp"

namespace drakes {

enum class RewardKind { LinearPwm, SaturatingMotif, Tabular };

std::string to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& name);

class Reward {
 public:
  // pwm: (width, N) weights applied at every window of a length-M sequence.
  static Reward linear_pwm(ad::Array pwm, int length);
  static Reward saturating_motif(ad::Array pwm, int length, double scale);
  // One value per token of a single-token state space.
  static Reward tabular(std::vector<double> table);

  RewardKind kind() const { return kind_; }
  int length() const { return length_; }
  int n_tokens() const { return n_tokens_; }
  double scale() const { return scale_; }
  const ad::Array& pwm() const { return pwm_; }
  const ad::Array& position_weights() const { return weights_; }

  // x: (B, M, N) relaxed over the real tokens. Returns (B).
  ad::Var evaluate(const ad::Var& x) const;
  // Accepts (B, M, N+1) states whose Mask coordinate is dropped.
  ad::Var evaluate_states(const ad::Var& states) const;

  double score(const TokenSeq& seq) const;
  std::vector<double> score(const std::vector<TokenSeq>& seqs) const;

  nlohmann::json to_json() const;
  static Reward from_json(const nlohmann::json& j);
  static Reward load(const std::string& path);
  void save(const std::string& path) const;

 private:
  Reward(RewardKind kind, ad::Array pwm, int length, double scale);

  RewardKind kind_ = RewardKind::LinearPwm;
  ad::Array pwm_;
  ad::Array weights_;  // (M, N)
  int length_ = 0;
  int n_tokens_ = 0;
  double scale_ = 0.0;
};

// scale * tanh(window score / scale) on a relaxed (B, M, N) input.
ad::Var soft_motif_reward(const ad::Var& x, const ad::Array& pwm, double scale);

struct TwinRewards {
  Reward finetune;
  Reward eval;
  double correlation = 0.0;  // of the two scores over random sequences
  int redraws = 0;
};

struct TwinRewardConfig {
  int n_tokens = 4;
  int length = 20;
  int width = 6;
  double sigma = 0.0004;    // std of PWM entries
  double scale = 0.01;      // saturation scale
  double rho = 0.9;         // entrywise correlation of the two PWMs
  int n_probe = 10000;      // random sequences for the score correlation
  double min_correlation = 0.8;
  double max_correlation = 0.97;
};

// Two saturating rewards with PWMs Z1 and rho * Z1 + sqrt(1 - rho^2) * Z2,
// each row centred over tokens.
// Redraws until the measured score correlation lies in the configured band.
TwinRewards twin_reward_split(const TwinRewardConfig& config, std::uint64_t seed);

}  // namespace drakes
