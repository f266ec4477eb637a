#include "doctest.h"

#include "drakes/oracle.hpp"
#include "helpers.hpp"

using namespace drakes;

TEST_CASE("distances and targets") {
  CHECK(tv_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK(tv_distance(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75}) == doctest::Approx(0.25));
  CHECK_THROWS(tv_distance(std::vector<double>{1}, std::vector<double>{0.5, 0.5}));
  const auto t = target_distribution(std::vector<double>{0.5, 0.5}, std::vector<double>{0.0, std::log(3.0)}, 1.0);
  CHECK(t[0] == doctest::Approx(0.25));
  CHECK(t[1] == doctest::Approx(0.75));
  const auto h = histogram({0, 2, 2, 1}, 3);
  CHECK(h == std::vector<double>{0.25, 0.25, 0.5});
  CHECK(tv_confidence_radius(4, 400) > tv_confidence_radius(4, 4000));
}

TEST_CASE("continuous marginal of a two-state chain") {
  const double a = 1.3, b = 0.4, t = 0.7;
  ad::Array q({2, 2}, std::vector<double>{-a, a, b, -b});
  const auto p = continuous_marginal(q, std::vector<double>{1.0, 0.0}, t);
  const double stay = b / (a + b) + a / (a + b) * std::exp(-(a + b) * t);
  CHECK(p[0] == doctest::Approx(stay).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1 - stay).epsilon(1e-12));
}

TEST_CASE("exact marginal of the masked chain ends at the clean distribution") {
  const std::vector<double> probs{0.1, 0.6, 0.3};
  const NoiseSchedule s(1.0, 32);
  const Vocabulary v(3);
  const ExactMarginal em = exact_marginal(masked_step_rates([&](double) { return probs; }, v, s), s, 4);
  REQUIRE(em.p.size() == 33);
  CHECK(em.at(0) == std::vector<double>{0, 0, 0, 1});
  for (int k = 0; k <= 32; ++k) {
    double total = 0.0;
    for (double x : em.at(k)) total += x;
    CHECK(total == doctest::Approx(1.0));
    CHECK(em.at(k)[3] == doctest::Approx(s.mask_probability(s.time(k))).epsilon(1e-9));
  }
  CHECK(tv_distance(em.tokens(32, 3), probs) < 1e-12);
}

TEST_CASE("transition matrices are stochastic and reject oversized steps") {
  ad::Array q({2, 2}, std::vector<double>{-2, 2, 1, -1});
  const ad::Array p = transition_matrix(q, 0.25);
  CHECK(p[0] + p[1] == doctest::Approx(1.0));
  CHECK(p[2] + p[3] == doctest::Approx(1.0));
  CHECK_THROWS(transition_matrix(q, 0.9));
}

TEST_CASE("forward residual shrinks linearly with the step") {
  ResidualProblem prob;
  prob.generator = ad::Array({3, 3}, std::vector<double>{-1, 0.5, 0.5, 0.2, -0.7, 0.5, 1.0, 1.0, -2.0});
  prob.x0_probs = [](double) { return std::vector<double>{0.4, 0.6}; };
  prob.reward = {0.0, 1.0};
  prob.alpha = 0.5;
  const auto r = kolmogorov_residuals(prob, {20, 40, 80});
  REQUIRE(r.size() == 3);
  CHECK(r[1].forward / r[0].forward == doctest::Approx(0.5).epsilon(0.15));
  CHECK(r[2].forward / r[1].forward == doctest::Approx(0.5).epsilon(0.15));
  REQUIRE(r[2].hjb.has_value());
  CHECK(*r[2].hjb < 1e-10);
}
