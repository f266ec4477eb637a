#include "doctest.h"

#include <sstream>

#include "drakes/config.hpp"
#include "drakes/rng.hpp"

using namespace drakes;

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a = Rng::stream(7, 3), b = Rng::stream(7, 3), c = Rng::stream(7, 4);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    differs = differs || x != c.next();
  }
  CHECK(differs);
}

TEST_CASE("rng moments") {
  Rng rng(9);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0, sg = 0;
  for (int i = 0; i < n; ++i) {
    su += rng.uniform();
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    sg += rng.gumbel();
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(sg / n == doctest::Approx(0.5772156649).epsilon(0.02));
  const std::vector<double> w{1, 0, 3};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 40000; ++i) ++counts[rng.categorical(w)];
  CHECK(counts[1] == 0);
  CHECK(counts[2] / 40000.0 == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("config parsing and overrides") {
  std::istringstream in("# comment\nalpha = 0.5\nname = run one  \nalphas = 1e-3, 1e-2\n\nflag = yes\n");
  Config c = Config::parse(in);
  CHECK(c.get_double("alpha", 0) == 0.5);
  CHECK(c.get_string("name", "") == "run one");
  CHECK(c.get_doubles("alphas", {}) == std::vector<double>{1e-3, 1e-2});
  CHECK(c.get_bool("flag", false));
  CHECK(c.get_int("missing", 4) == 4);
  const auto rest = c.apply_overrides({"--alpha", "2", "extra", "--steps=7", "--verbose"});
  CHECK(c.get_double("alpha", 0) == 2.0);
  CHECK(c.get_int("steps", 0) == 7);
  CHECK(c.get_bool("verbose", false));
  CHECK(rest == std::vector<std::string>{"extra"});
  CHECK_THROWS(c.get_int("name", 0));
  std::istringstream bad("no equals sign\n");
  CHECK_THROWS(Config::parse(bad));
  CHECK(fnv1a64("a") != fnv1a64("b"));
  CHECK(hex64(0xabc).size() == 16);
}
