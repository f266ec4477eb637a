#include "doctest.h"

#include <sstream>

#include "drakes/diffusion.hpp"
#include "helpers.hpp"

using namespace drakes;

TEST_CASE("default schedule unmasks everything by the horizon") {
  const NoiseSchedule s(1.0, 10);
  CHECK(s.fully_unmasks());
  for (int k = 1; k <= 10; ++k) CHECK(s.unmask_probability(k) == doctest::Approx(1.0 / (10 - k + 1)));
  // a token still masked at t_{k-1} stays masked through step k with prob 1 - u_k; the product telescopes
  double stay = 1.0;
  for (int k = 1; k <= 4; ++k) stay *= 1.0 - s.unmask_probability(k);
  CHECK(stay == doctest::Approx(s.mask_probability(s.time(4))).epsilon(1e-9));
  CHECK(s.mask_probability(0.0) == doctest::Approx(1.0));
  CHECK(s.mask_probability(1.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("forward masking hits the scheduled fraction") {
  const NoiseSchedule s(1.0, 16);
  const Vocabulary v(4);
  Rng rng(5);
  const TokenSeq x0(200, 2);
  int masked = 0;
  const double t = 0.3;
  for (int rep = 0; rep < 50; ++rep)
    for (int tok : forward_mask(x0, t, s, v, rng)) {
      masked += tok == v.mask();
      CHECK((tok == v.mask() || tok == 2));
    }
  const double frac = masked / 10000.0;
  CHECK(frac == doctest::Approx(s.mask_probability(t)).epsilon(0.05));
}

TEST_CASE("step distribution keeps unmasked tokens and splits masked mass") {
  const Vocabulary v(3);
  ad::Array state({1, 2, 4}, std::vector<double>{0, 1, 0, 0, /**/ 0, 0, 0, 1});
  ad::Array probs({1, 2, 3}, std::vector<double>{0.2, 0.3, 0.5, /**/ 0.6, 0.3, 0.1});
  const ad::Array pi = step_distribution(ad::constant(state), ad::constant(probs), 0.25).value();
  const std::vector<double> want{0, 1, 0, 0, 0.15, 0.075, 0.025, 0.75};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(pi[i] == doctest::Approx(want[i]));
  CHECK_THROWS(step_distribution(ad::constant(state), ad::constant(probs), 1.5));
}

TEST_CASE("rate tables reproduce the discrete step as dt shrinks") {
  const Vocabulary v(3);
  const NoiseSchedule s(1.0, 1000);
  ad::Array probs({1, 3}, std::vector<double>{0.6, 0.3, 0.1});
  ad::Array state({1, 4}, std::vector<double>{0, 0, 0, 1});
  const int k = 400;
  const GeneratorSlice g = reverse_rates(probs, s.gamma(s.time(k)), state, v);
  for (int x = 0; x < 4; ++x) {
    double row = 0.0;
    for (int y = 0; y < 4; ++y) row += g.rate(0, x, y);
    CHECK(row == doctest::Approx(0.0).epsilon(1e-12));
  }
  const ad::Array euler = step_distribution(state, g, s.dt());
  ad::Array st3 = state, p3 = probs;
  st3.shape = {1, 1, 4};
  p3.shape = {1, 1, 3};
  const ad::Array exact = step_distribution(ad::constant(st3), ad::constant(p3), s.unmask_probability(k)).value();
  for (int y = 0; y < 4; ++y) CHECK(euler[y] == doctest::Approx(exact[y]).epsilon(1e-2));
}

TEST_CASE("sequence text and trajectory round trips") {
  const Vocabulary dna(4);
  const TokenSeq seq{0, 1, 2, 3, 4};
  const std::string text = format_sequence(seq, dna);
  CHECK(text.size() == 5);
  CHECK(parse_sequence(text, dna) == seq);
  CHECK_THROWS(parse_sequence("AXG", dna));

  Trajectory tr;
  for (int k = 0; k < 3; ++k) tr.steps.push_back({0.1 * k, one_hot({k, 4}, 5), one_hot({4, k}, 5)});
  std::stringstream ss;
  write_trajectory_jsonl(ss, tr);
  const Trajectory back = read_trajectory_jsonl(ss);
  REQUIRE(back.steps.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(back.steps[k].time == doctest::Approx(0.1 * k));
    CHECK(back.steps[k].pi.values == tr.steps[k].pi.values);
    CHECK(back.steps[k].state.values == tr.steps[k].state.values);
  }
}

TEST_CASE("invalid sizes are rejected") {
  CHECK_THROWS(Vocabulary(0));
  CHECK_THROWS(SequenceSpec(0));
  CHECK_THROWS(NoiseSchedule(1.0, 0));
}
