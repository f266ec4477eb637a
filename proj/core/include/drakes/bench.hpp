#pragma once

// Synthetic regulatory-sequence benchmark: data, twin rewards, metrics and
// the method comparison harness.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drakes/config.hpp"
#include "drakes/denoiser.hpp"
#include "drakes/finetune.hpp"
#include "drakes/guidance.hpp"
#include "drakes/pretrain.hpp"
#include "drakes/reward.hpp"

namespace drakes {

// Pearson correlation of k-mer frequency vectors (length N^k) of two sample
// sets, counting every window.
double kmer_correlation(const std::vector<TokenSeq>& a, const std::vector<TokenSeq>& b, int k, int n_tokens);

std::vector<double> kmer_frequencies(const std::vector<TokenSeq>& seqs, int k, int n_tokens);

double median(std::vector<double> v);
double mean(const std::vector<double>& v);

struct BenchConfig {
  int n_tokens = 4;
  int length = 20;
  int motif_width = 6;
  int steps = 128;
  double motif_lambda = 0.5;
  std::uint64_t data_seed = 11;

  TwinRewardConfig reward;

  MlpDenoiserConfig architecture;
  int pretrain_samples = 20000;
  PretrainConfig pretrain;

  FinetuneConfig drakes;  // alpha is replaced per method
  std::vector<double> alphas{1e-4, 1e-3, 1e-2};

  double guidance_alpha = 1e-3;
  ValueRegressionConfig value_regression;
  int smc_particles = 64;

  CfgConfig cfg;

  std::vector<std::uint64_t> seeds{0, 1, 2};
  int n_eval = 640;
  int n_mc = 4;
  int reference_samples = 10000;
  std::vector<std::string> methods{"Pretrained", "CG", "SMC", "TDS", "CFG", "DRAKES-no-KL", "DRAKES"};

  // Benchmark defaults scaled for a single core.
  static BenchConfig desk();
  static BenchConfig from_config(const Config& cfg, BenchConfig base);
  static BenchConfig from_config(const Config& cfg) { return from_config(cfg, desk()); }
  nlohmann::json to_json() const;
  std::string hash() const;
};

struct BenchData {
  SyntheticDistribution dist;
  TwinRewards rewards;
  std::vector<TokenSeq> reference;  // top decile of data by eval reward
};

BenchData make_bench_data(const BenchConfig& config);

// Trains the reference model, or loads it from `cache_path` when it holds a
// checkpoint with the same configuration hash.
std::unique_ptr<Denoiser> pretrained_model(const BenchConfig& config, const BenchData& data,
                                           const std::string& cache_path = {}, nlohmann::json* log = nullptr);

struct MethodResult {
  std::string method;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::size_t n = 0;
  double eval_reward_mean = 0.0;
  double eval_reward_median = 0.0;
  double ft_reward_mean = 0.0;
  double loglik_mean = 0.0;
  double loglik_median = 0.0;
  double kmer3_corr = 0.0;
  double seconds = 0.0;
};

struct EvalReport {
  std::vector<MethodResult> rows;
  double seconds = 0.0;

  // Mean over seeds of one metric of one method; NaN when every seed failed.
  double seed_mean(const std::string& method, const std::string& metric) const;
  double seed_std(const std::string& method, const std::string& metric) const;
  std::string table() const;
  nlohmann::json to_json() const;
};

double metric_value(const MethodResult& row, const std::string& metric);

// Evaluates samples of one method against the held-out reward.
MethodResult evaluate_samples(const std::string& method, std::uint64_t seed, const std::vector<TokenSeq>& samples,
                              const Denoiser& pretrained, const BenchData& data, const BenchConfig& config);

// Method names: the defaults above plus "DRAKES-alpha=<value>". Fine-tuned
// models are cached under `out_dir` when it is set.
EvalReport run_comparison(const BenchConfig& config, const Denoiser& pretrained, const BenchData& data,
                          const std::string& out_dir = {},
                          const std::function<void(const MethodResult&)>& on_row = {});

// One CSV per metric and manifest.json.
void write_report(const EvalReport& report, const BenchConfig& config, const std::string& out_dir);

}  // namespace drakes
