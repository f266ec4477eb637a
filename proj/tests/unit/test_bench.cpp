#include "doctest.h"

#include <sstream>

#include "drakes/bench.hpp"

using namespace drakes;

TEST_CASE("k-mer frequencies and correlation") {
  const std::vector<TokenSeq> a{{0, 0, 1}, {1, 1, 1}};
  const auto f = kmer_frequencies(a, 2, 2);
  REQUIRE(f.size() == 4);
  // 2-mers: 00, 01, 11, 11
  CHECK(f[0] == doctest::Approx(0.25));
  CHECK(f[1] == doctest::Approx(0.25));
  CHECK(f[2] == 0.0);
  CHECK(f[3] == doctest::Approx(0.5));
  CHECK(kmer_correlation(a, a, 2, 2) == doctest::Approx(1.0));
  const std::vector<TokenSeq> b{{1, 0, 0}, {0, 0, 0}};
  CHECK(kmer_correlation(a, b, 2, 2) < 0.0);
}

TEST_CASE("summary statistics") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK(mean({1, 2, 3, 6}) == 3.0);
}

TEST_CASE("benchmark config overrides and hashing") {
  const BenchConfig d = BenchConfig::desk();
  std::istringstream in("alphas = 0.1, 0.2\nmethods = Pretrained, DRAKES\nft_iterations = 3\nseeds = 4\n");
  const BenchConfig c = BenchConfig::from_config(Config::parse(in));
  CHECK(c.alphas == std::vector<double>{0.1, 0.2});
  CHECK(c.methods == std::vector<std::string>{"Pretrained", "DRAKES"});
  CHECK(c.drakes.iterations == 3);
  CHECK(c.seeds == std::vector<std::uint64_t>{4});
  CHECK(c.hash() != d.hash());
  CHECK(BenchConfig::desk().hash() == d.hash());
}

TEST_CASE("report aggregation over seeds") {
  EvalReport rep;
  for (std::uint64_t s : {0, 1}) {
    MethodResult row;
    row.method = "X";
    row.seed = s;
    row.eval_reward_mean = s == 0 ? 1.0 : 3.0;
    rep.rows.push_back(row);
  }
  MethodResult bad;
  bad.method = "X";
  bad.seed = 2;
  bad.failed = true;
  rep.rows.push_back(bad);
  CHECK(rep.seed_mean("X", "eval_reward_mean") == 2.0);
  CHECK(rep.seed_std("X", "eval_reward_mean") == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS(metric_value(rep.rows[0], "nope"));
  CHECK(rep.table().find("X") != std::string::npos);
  CHECK(rep.to_json().at("rows").size() == 3);
}

TEST_CASE("benchmark data is reproducible") {
  BenchConfig c = BenchConfig::desk();
  c.reference_samples = 500;
  const BenchData a = make_bench_data(c), b = make_bench_data(c);
  CHECK(a.reference == b.reference);
  CHECK(a.reference.size() == 50);
  CHECK(a.rewards.correlation == b.rewards.correlation);
}
