#include "doctest.h"

#include <map>

#include "drakes/oracle.hpp"
#include "drakes/pretrain.hpp"
#include "drakes/sampling.hpp"
#include "helpers.hpp"

using namespace drakes;

TEST_CASE("synthetic distributions are normalized") {
  CHECK(total_probability(SyntheticDistribution::uniform(3, 4)) == doctest::Approx(1.0));
  CHECK(total_probability(SyntheticDistribution::motif_mixture(3, 5, {0, 2}, 0.6)) == doctest::Approx(1.0));
  CHECK(total_probability(SyntheticDistribution::categorical({0.2, 0.8}, 3)) == doctest::Approx(1.0));
  CHECK_THROWS(SyntheticDistribution::categorical({0.5, 0.6}, 1));
  CHECK_THROWS(SyntheticDistribution::motif_mixture(3, 2, {0, 1, 2}, 0.5));
}

TEST_CASE("data samples follow the distribution") {
  const auto dist = SyntheticDistribution::motif_mixture(2, 3, {1, 1}, 0.5);
  const std::size_t n = 100000;
  std::map<TokenSeq, double> freq;
  for (const auto& s : sample_data(dist, n, 3)) freq[s] += 1.0 / n;
  double tv = 0.0;
  for (int a = 0; a < 8; ++a) {
    const TokenSeq x{a & 1, (a >> 1) & 1, (a >> 2) & 1};
    tv += 0.5 * std::abs(freq[x] - dist.prob(x));
  }
  CHECK(tv < 0.01);
}

TEST_CASE("masked diffusion loss is the masked cross-entropy") {
  // a uniform model costs log N per masked position
  const NoiseSchedule s(1.0, 8);
  const MlpDenoiser m(Vocabulary(4), SequenceSpec(5), MlpDenoiserConfig{8, 1, 0, 1.0}, 1);
  std::vector<TokenSeq> x0(400, TokenSeq{0, 1, 2, 3, 0});
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < x0.size(); ++i) rngs.push_back(Rng::stream(4, i));
  const double loss = masked_diffusion_loss(m, m.bind(nullptr), x0, s, rngs).item();
  double expect = 0.0;
  for (int k = 0; k < 8; ++k) expect += s.mask_probability(s.time(k)) / 8.0;
  expect *= 5 * std::log(4.0);
  CHECK(loss == doctest::Approx(expect).epsilon(0.1));
}

TEST_CASE("pretraining a tabular model recovers a categorical") {
  const std::vector<double> probs{0.6, 0.1, 0.3};
  const auto dist = SyntheticDistribution::categorical(probs, 1);
  const NoiseSchedule s(1.0, 4);
  TabularDenoiser model(Vocabulary(3), 4);
  PretrainConfig pc;
  pc.epochs = 20;
  pc.batch = 256;
  pc.learning_rate = 0.05;
  const auto res = train_pretrained(model, sample_data(dist, 20000, 1), sample_data(dist, 500, 2), s, pc);
  CHECK(res.log.back().train_loss < res.log.front().train_loss);
  // each row sees the masked positions of about a quarter of the data
  for (int k = 0; k < 4; ++k) CHECK(tv_distance(model.row(k), probs) < 0.04);
}

TEST_CASE("ancestral sampling of a tabular model matches the exact marginal") {
  const std::vector<double> probs{0.5, 0.3, 0.2};
  const NoiseSchedule s(1.0, 16);
  const auto model = TabularDenoiser::constant(Vocabulary(3), probs, 16);
  const auto batch = ancestral_sample(model, s, 20000, 7);
  std::vector<int> draws;
  for (const auto& seq : batch.sequences) draws.push_back(seq.at(0));
  const auto h = histogram(draws, 4);
  CHECK(h[3] == 0.0);
  CHECK(tv_distance(std::vector<double>(h.begin(), h.end() - 1), probs) < tv_confidence_radius(3, 20000));
}

TEST_CASE("sampling does not depend on the chunk size") {
  const MlpDenoiser m(Vocabulary(4), SequenceSpec(6), MlpDenoiserConfig{8, 1, 0, 1.0}, 2);
  const NoiseSchedule s(1.0, 8);
  SampleOptions a, b;
  a.chunk = 3;
  b.chunk = 64;
  b.record_trajectory = true;
  const auto x = ancestral_sample(m, s, 10, 5, a), y = ancestral_sample(m, s, 10, 5, b);
  CHECK(x.sequences == y.sequences);
  REQUIRE(y.trajectories.size() == 10);
  CHECK(y.trajectories[0].steps.size() == 9);
}

TEST_CASE("likelihood estimate of a categorical model") {
  // each position is an independent categorical, so the importance-weighted
  // masked log-probabilities average to log p(x)
  const std::vector<double> probs{0.7, 0.2, 0.1};
  const NoiseSchedule s(1.0, 8);
  const auto model = TabularDenoiser::constant(Vocabulary(3), probs, 8);
  const auto ll = approx_log_likelihood(model, s, {{0}, {2}}, 40000, 1);
  CHECK(ll[0] == doctest::Approx(std::log(0.7)).epsilon(0.03));
  CHECK(ll[1] == doctest::Approx(std::log(0.1)).epsilon(0.03));
}
