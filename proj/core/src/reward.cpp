#include "drakes/reward.hpp"

#include <cmath>
#include <fstream>

#include "drakes/rng.hpp"

namespace drakes {

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::LinearPwm:
      return "linear-pwm";
    case RewardKind::SaturatingMotif:
      return "saturating-motif";
    case RewardKind::Tabular:
      return "tabular";
  }
  return "?";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "linear-pwm") return RewardKind::LinearPwm;
  if (name == "saturating-motif") return RewardKind::SaturatingMotif;
  if (name == "tabular") return RewardKind::Tabular;
  throw Error("unknown reward kind '" + name + "'");
}

namespace {

ad::Array window_weights(const ad::Array& pwm, int length) {
  if (pwm.rank() != 2) throw Error("reward: pwm must be (width, N)");
  const std::size_t w = pwm.dim(0), n = pwm.dim(1);
  if (w == 0 || w > std::size_t(length)) {
    throw Error("reward: pwm width " + std::to_string(w) + " exceeds sequence length " + std::to_string(length));
  }
  ad::Array out({std::size_t(length), n}, 0.0);
  for (std::size_t start = 0; start + w <= std::size_t(length); ++start)
    for (std::size_t o = 0; o < w; ++o)
      for (std::size_t y = 0; y < n; ++y) out[(start + o) * n + y] += pwm[o * n + y];
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

Reward::Reward(RewardKind kind, ad::Array pwm, int length, double scale)
    : kind_(kind), pwm_(std::move(pwm)), length_(length), scale_(scale) {
  if (length_ < 1) throw Error("reward: sequence length must be >= 1");
  weights_ = window_weights(pwm_, length_);
  n_tokens_ = int(pwm_.dim(1));
  if (kind_ == RewardKind::SaturatingMotif && !(scale_ > 0.0)) throw Error("reward: saturation scale must be > 0");
}

Reward Reward::linear_pwm(ad::Array pwm, int length) { return Reward(RewardKind::LinearPwm, std::move(pwm), length, 0.0); }

Reward Reward::saturating_motif(ad::Array pwm, int length, double scale) {
  return Reward(RewardKind::SaturatingMotif, std::move(pwm), length, scale);
}

Reward Reward::tabular(std::vector<double> table) {
  const std::size_t n = table.size();
  return Reward(RewardKind::Tabular, ad::Array({1, n}, std::move(table)), 1, 0.0);
}

ad::Var soft_motif_reward(const ad::Var& x, const ad::Array& pwm, double scale) {
  if (x.shape().size() != 3) throw Error("soft_motif_reward: expected (B, M, N) input");
  return Reward::saturating_motif(pwm, int(x.dim(1)), scale).evaluate(x);
}

ad::Var Reward::evaluate(const ad::Var& x) const {
  const std::size_t m = length_, n = n_tokens_;
  if (x.shape().size() != 3 || x.dim(1) != m || x.dim(2) != n) {
    throw Error("reward: expected input (B, " + std::to_string(m) + ", " + std::to_string(n) + "), got " +
                ad::to_string(x.shape()));
  }
  const std::size_t b = x.dim(0);
  const ad::Var flat = ad::reshape(x, {b, m * n});
  const ad::Var w = ad::constant(ad::Array({m * n, 1}, weights_.values));
  ad::Var raw = ad::reshape(ad::matmul(flat, w), {b});
  if (kind_ == RewardKind::SaturatingMotif) raw = ad::scale(ad::tanh(ad::scale(raw, 1.0 / scale_)), scale_);
  return raw;
}

ad::Var Reward::evaluate_states(const ad::Var& states) const {
  if (states.shape().size() != 3 || states.dim(2) != std::size_t(n_tokens_ + 1)) {
    throw Error("reward: expected (B, M, N+1) states, got " + ad::to_string(states.shape()));
  }
  return evaluate(ad::slice_last(states, 0, n_tokens_));
}

double Reward::score(const TokenSeq& seq) const {
  if (seq.size() != std::size_t(length_)) throw Error("reward: sequence length mismatch");
  double raw = 0.0;
  for (std::size_t j = 0; j < seq.size(); ++j) {
    if (seq[j] < 0 || seq[j] >= n_tokens_) throw Error("reward: sequence contains Mask or an invalid token");
    raw += weights_[j * n_tokens_ + seq[j]];
  }
  return kind_ == RewardKind::SaturatingMotif ? scale_ * std::tanh(raw / scale_) : raw;
}

std::vector<double> Reward::score(const std::vector<TokenSeq>& seqs) const {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(score(s));
  return out;
}

nlohmann::json Reward::to_json() const {
  return {{"kind", to_string(kind_)},
          {"length", length_},
          {"scale", scale_},
          {"pwm_shape", pwm_.shape},
          {"pwm", pwm_.values}};
}

Reward Reward::from_json(const nlohmann::json& j) {
  const RewardKind kind = reward_kind_from_string(j.at("kind").get<std::string>());
  if (kind == RewardKind::Tabular) {
    if (j.contains("table")) return tabular(j.at("table").get<std::vector<double>>());
    return tabular(j.at("pwm").get<std::vector<double>>());
  }
  ad::Array pwm(j.at("pwm_shape").get<ad::Shape>(), j.at("pwm").get<std::vector<double>>());
  const int length = j.at("length").get<int>();
  if (kind == RewardKind::LinearPwm) return linear_pwm(std::move(pwm), length);
  return saturating_motif(std::move(pwm), length, j.at("scale").get<double>());
}

Reward Reward::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("reward: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

void Reward::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("reward: cannot write " + path);
  out << to_json().dump(2) << "\n";
}

TwinRewards twin_reward_split(const TwinRewardConfig& config, std::uint64_t seed) {
  const std::size_t w = config.width, n = config.n_tokens;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng = Rng::stream(seed, attempt);
    ad::Array z1({w, n}), z2({w, n});
    for (double& v : z1.values) v = config.sigma * rng.normal();
    for (double& v : z2.values) v = config.sigma * rng.normal();
    // zero-mean rows: a shared offset would only shift every score into saturation
    for (ad::Array* z : {&z1, &z2})
      for (std::size_t o = 0; o < w; ++o) {
        double mu = 0.0;
        for (std::size_t y = 0; y < n; ++y) mu += (*z)[o * n + y] / double(n);
        for (std::size_t y = 0; y < n; ++y) (*z)[o * n + y] -= mu;
      }
    ad::Array ev({w, n});
    const double c = std::sqrt(1.0 - config.rho * config.rho);
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = config.rho * z1[i] + c * z2[i];

    TwinRewards out{Reward::saturating_motif(z1, config.length, config.scale),
                    Reward::saturating_motif(ev, config.length, config.scale), 0.0, attempt};
    std::vector<TokenSeq> probe(config.n_probe, TokenSeq(config.length));
    for (auto& s : probe)
      for (int& tok : s) tok = int(rng.below(n));
    out.correlation = pearson(out.finetune.score(probe), out.eval.score(probe));
    if (out.correlation >= config.min_correlation && out.correlation <= config.max_correlation) return out;
  }
  throw Error("twin_reward_split: no draw reached the requested correlation band");
}

}  // namespace drakes
