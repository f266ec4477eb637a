#include "drakes/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "drakes/optim.hpp"

namespace drakes {

SyntheticDistribution SyntheticDistribution::uniform(int n_tokens, int length) {
  Vocabulary v(n_tokens);
  SequenceSpec s(length);
  SyntheticDistribution d;
  d.kind = DataKind::Uniform;
  d.n_tokens = v.n_tokens;
  d.length = s.length;
  return d;
}

SyntheticDistribution SyntheticDistribution::motif_mixture(int n_tokens, int length, TokenSeq motif, double lambda) {
  SyntheticDistribution d = uniform(n_tokens, length);
  if (motif.empty() || motif.size() > std::size_t(length)) {
    throw Error("motif of length " + std::to_string(motif.size()) + " does not fit a sequence of length " +
                std::to_string(length));
  }
  for (int tok : motif)
    if (tok < 0 || tok >= n_tokens) throw Error("motif contains an invalid token");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("motif plant probability must lie in [0, 1]");
  d.kind = DataKind::MotifMixture;
  d.motif = std::move(motif);
  d.lambda = lambda;
  return d;
}

SyntheticDistribution SyntheticDistribution::categorical(std::vector<double> probs, int length) {
  SyntheticDistribution d = uniform(int(probs.size()), length);
  double total = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw Error("categorical distribution has a negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("categorical distribution does not sum to 1");
  d.kind = DataKind::Categorical;
  d.probs = std::move(probs);
  return d;
}

double SyntheticDistribution::log_prob(const TokenSeq& x) const {
  if (x.size() != std::size_t(length)) throw Error("log_prob: sequence length mismatch");
  for (int tok : x)
    if (tok < 0 || tok >= n_tokens) return -INFINITY;
  const double log_uniform = -double(length) * std::log(double(n_tokens));
  switch (kind) {
    case DataKind::Uniform:
      return log_uniform;
    case DataKind::Categorical: {
      double s = 0.0;
      for (int tok : x) s += std::log(probs[tok]);
      return s;
    }
    case DataKind::MotifMixture: {
      const std::size_t w = motif.size();
      const std::size_t starts = std::size_t(length) - w + 1;
      std::size_t hits = 0;
      for (std::size_t p = 0; p < starts; ++p)
        if (std::equal(motif.begin(), motif.end(), x.begin() + p)) ++hits;
      const double background = std::pow(double(n_tokens), -double(std::size_t(length) - w));
      return std::log((1.0 - lambda) * std::exp(log_uniform) + lambda * double(hits) / double(starts) * background);
    }
  }
  return -INFINITY;
}

nlohmann::json SyntheticDistribution::to_json() const {
  static const char* names[] = {"uniform", "motif-mixture", "categorical"};
  return {{"kind", names[int(kind)]}, {"n_tokens", n_tokens}, {"length", length},
          {"motif", motif},           {"lambda", lambda},     {"probs", probs}};
}

std::vector<TokenSeq> sample_data(const SyntheticDistribution& dist, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error("sample_data: n must be >= 1");
  std::vector<TokenSeq> out(n, TokenSeq(dist.length));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, i);
    auto& x = out[i];
    if (dist.kind == DataKind::Categorical) {
      for (int& tok : x) tok = int(rng.categorical(dist.probs));
      continue;
    }
    for (int& tok : x) tok = int(rng.below(dist.n_tokens));
    if (dist.kind == DataKind::MotifMixture && rng.uniform() < dist.lambda) {
      const std::size_t start = rng.below(dist.length - dist.motif.size() + 1);
      std::copy(dist.motif.begin(), dist.motif.end(), x.begin() + start);
    }
  }
  return out;
}

double total_probability(const SyntheticDistribution& dist) {
  const double count = std::pow(double(dist.n_tokens), double(dist.length));
  if (count > 1e6) throw Error("total_probability: sequence space too large to enumerate");
  TokenSeq x(dist.length, 0);
  double total = 0.0;
  for (;;) {
    total += dist.prob(x);
    int j = dist.length - 1;
    while (j >= 0 && ++x[j] == dist.n_tokens) x[j--] = 0;
    if (j < 0) break;
  }
  return total;
}

nlohmann::json PretrainResult::to_json() const {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"heldout_nelbo", e.heldout_nelbo},
                      {"seconds", e.seconds}});
  }
  return {{"epochs", epochs}};
}

ad::Var masked_diffusion_loss(const Denoiser& model, const BoundParams& bound, const std::vector<TokenSeq>& x0,
                              const NoiseSchedule& schedule, std::span<Rng> rngs, std::span<const int> labels) {
  const Vocabulary& vocab = model.vocab();
  const std::size_t b = x0.size(), m = model.sequence().length, n = vocab.n_tokens;
  std::vector<TokenSeq> masked(b);
  std::vector<double> times(b);
  ad::Array target({b, m, n}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const int k = int(rngs[i].below(schedule.steps()));
    times[i] = schedule.time(k);
    masked[i] = forward_mask(x0[i], times[i], schedule, vocab, rngs[i]);
    for (std::size_t j = 0; j < m; ++j)
      if (masked[i][j] == vocab.mask()) target[(i * m + j) * n + x0[i][j]] = 1.0;
  }
  const ad::Var probs = model.predict_x0(bound, ad::constant(one_hot_batch(masked, vocab.states())), times, labels);
  return ad::scale(ad::sum(ad::mul(ad::log(probs), ad::constant(std::move(target)))), -1.0 / double(b));
}

PretrainResult train_pretrained(Denoiser& model, const std::vector<TokenSeq>& train,
                                const std::vector<TokenSeq>& heldout, const NoiseSchedule& schedule,
                                const PretrainConfig& config, std::span<const int> labels,
                                const std::function<void(const EpochLog&)>& on_epoch) {
  if (config.epochs < 0 || config.batch < 1 || !(config.learning_rate > 0.0)) {
    throw Error("pretrain: epochs, batch and learning rate must be positive");
  }
  if (config.optimizer != "adam") throw Error("pretrain: unsupported optimizer '" + config.optimizer + "'");
  if (train.empty()) throw Error("pretrain: empty training set");
  if (!labels.empty() && labels.size() != train.size()) throw Error("pretrain: need one label per training sequence");
  Adam adam(model.params(), AdamConfig{config.learning_rate});
  PretrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  auto heldout_loss = [&]() {
    if (heldout.empty()) return 0.0;
    double total = 0.0;
    const auto bound = model.bind(nullptr);
    const std::size_t chunk = 256;
    for (std::size_t begin = 0; begin < heldout.size(); begin += chunk) {
      const std::size_t b = std::min(chunk, heldout.size() - begin);
      std::vector<TokenSeq> x(heldout.begin() + begin, heldout.begin() + begin + b);
      std::vector<Rng> rngs;
      for (std::size_t i = 0; i < b; ++i) rngs.push_back(Rng::stream(config.seed ^ 0x5eedULL, begin + i));
      total += masked_diffusion_loss(model, bound, x, schedule, rngs).item() * double(b);
    }
    return total / double(heldout.size());
  };

  Rng shuffle_rng(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
      const std::size_t b = std::min<std::size_t>(config.batch, order.size() - begin);
      std::vector<TokenSeq> x(b);
      std::vector<int> lab;
      std::vector<Rng> rngs;
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = order[begin + i];
        x[i] = train[idx];
        if (!labels.empty()) lab.push_back(labels[idx]);
        rngs.push_back(Rng::stream(config.seed + std::uint64_t(epoch) * 0x100000000ULL, begin + i));
      }
      ad::Tape tape;
      const auto bound = model.bind(&tape);
      const ad::Var loss = masked_diffusion_loss(model, bound, x, schedule, rngs, lab);
      if (!std::isfinite(loss.item())) {
        throw Error("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                    std::to_string(begin) + "; lower the learning rate");
      }
      total += loss.item() * double(b);
      seen += b;
      const auto grads = collect_gradients(tape.backward(loss), bound);
      adam.step(model.params(), grads);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = total / double(seen);
    entry.heldout_nelbo = heldout_loss();
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace drakes
