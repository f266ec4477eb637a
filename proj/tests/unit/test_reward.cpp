#include "doctest.h"

#include <filesystem>

#include "drakes/reward.hpp"
#include "helpers.hpp"

using namespace drakes;

TEST_CASE("linear pwm scores sum the sliding windows") {
  // width-2 pwm over 3 tokens on length 4
  ad::Array pwm({2, 3}, std::vector<double>{1, 2, 3, 10, 20, 30});
  const Reward r = Reward::linear_pwm(pwm, 4);
  const TokenSeq x{0, 1, 2, 0};
  // windows (0,1), (1,2), (2,0)
  CHECK(r.score(x) == doctest::Approx((1 + 20) + (2 + 30) + (3 + 10)));
  CHECK_THROWS(r.score(TokenSeq{0, 1, 3, 0}));
  CHECK_THROWS(r.score(TokenSeq{0, 1}));
}

TEST_CASE("differentiable evaluation agrees with scoring") {
  Rng rng(1);
  const Reward r = Reward::saturating_motif(testutil::random_array({3, 4}, rng), 7, 0.8);
  std::vector<TokenSeq> xs(5, TokenSeq(7));
  for (auto& x : xs)
    for (int& t : x) t = int(rng.below(4));
  const ad::Array v = r.evaluate_states(ad::constant(one_hot_batch(xs, 5))).value();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(v[i] == doctest::Approx(r.score(xs[i])));
    CHECK(std::abs(v[i]) <= 0.8);
  }
  const ad::Array soft = testutil::random_array({2, 7, 4}, rng, 0.3);
  CHECK(testutil::gradient_error([&](const ad::Var& x) { return ad::sum(r.evaluate(x)); }, soft) < 1e-7);
}

TEST_CASE("tabular reward and json round trip") {
  const Reward t = Reward::tabular({0.0, 0.5, 1.0});
  CHECK(t.score(TokenSeq{2}) == 1.0);
  const auto path = (std::filesystem::temp_directory_path() / "drakes_unit_reward.json").string();
  Rng rng(2);
  const Reward r = Reward::saturating_motif(testutil::random_array({2, 4}, rng), 5, 0.3);
  r.save(path);
  const Reward back = Reward::load(path);
  CHECK(back.kind() == RewardKind::SaturatingMotif);
  CHECK(back.scale() == 0.3);
  CHECK(back.score(TokenSeq{0, 1, 2, 3, 0}) == doctest::Approx(r.score(TokenSeq{0, 1, 2, 3, 0})));
  std::filesystem::remove(path);
  CHECK(reward_kind_from_string(to_string(RewardKind::LinearPwm)) == RewardKind::LinearPwm);
  CHECK_THROWS(reward_kind_from_string("nope"));
}

TEST_CASE("twin rewards are correlated but distinct") {
  const TwinRewardConfig c;
  const TwinRewards tw = twin_reward_split(c, 3);
  CHECK(tw.correlation >= c.min_correlation);
  CHECK(tw.correlation <= c.max_correlation);
  Rng rng(4);
  std::vector<double> a, b;
  for (int i = 0; i < 4000; ++i) {
    TokenSeq x(c.length);
    for (int& t : x) t = int(rng.below(4));
    a.push_back(tw.finetune.score(x));
    b.push_back(tw.eval.score(x));
  }
  double ma = 0, mb = 0;
  for (int i = 0; i < 4000; ++i) ma += a[i] / 4000, mb += b[i] / 4000;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 4000; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(sab / std::sqrt(saa * sbb) == doctest::Approx(tw.correlation).epsilon(0.05));
}
