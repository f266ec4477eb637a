#include "drakes/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "drakes/sampling.hpp"

namespace drakes {

std::vector<double> kmer_frequencies(const std::vector<TokenSeq>& seqs, int k, int n_tokens) {
  std::size_t size = 1;
  for (int i = 0; i < k; ++i) size *= n_tokens;
  std::vector<double> f(size, 0.0);
  double total = 0.0;
  for (const auto& s : seqs) {
    if (int(s.size()) < k) throw Error("kmer_frequencies: k exceeds the sequence length");
    for (std::size_t start = 0; start + k <= s.size(); ++start) {
      std::size_t code = 0;
      for (int o = 0; o < k; ++o) {
        const int tok = s[start + o];
        if (tok < 0 || tok >= n_tokens) throw Error("kmer_frequencies: sequence contains Mask or an invalid token");
        code = code * n_tokens + tok;
      }
      f[code] += 1.0;
      total += 1.0;
    }
  }
  for (double& v : f) v /= total;
  return f;
}

double kmer_correlation(const std::vector<TokenSeq>& a, const std::vector<TokenSeq>& b, int k, int n_tokens) {
  if (a.empty() || b.empty()) throw Error("kmer_correlation: empty sample set");
  const auto fa = kmer_frequencies(a, k, n_tokens);
  const auto fb = kmer_frequencies(b, k, n_tokens);
  const double ma = mean(fa), mb = mean(fb);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    sab += (fa[i] - ma) * (fb[i] - mb);
    saa += (fa[i] - ma) * (fa[i] - ma);
    sbb += (fb[i] - mb) * (fb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error("kmer_correlation: a frequency vector has zero variance");
  return sab / std::sqrt(saa * sbb);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

BenchConfig BenchConfig::desk() {
  BenchConfig c;
  c.reward.n_tokens = c.n_tokens;
  c.reward.length = c.length;
  c.reward.width = c.motif_width;
  c.reward.sigma = 0.0004;
  c.reward.scale = 0.01;
  c.guidance_alpha = 1e-3;
  c.architecture.width = 64;
  c.architecture.blocks = 3;
  c.pretrain.epochs = 12;
  c.pretrain.batch = 64;
  c.pretrain.learning_rate = 2e-3;
  c.pretrain.seed = 5;
  c.drakes.batch = 16;
  c.drakes.iterations = 40;
  c.drakes.micro_batch = 8;
  c.drakes.learning_rate = 2e-3;
  c.value_regression.n_rollouts = 1024;
  c.value_regression.times_per_rollout = 4;
  c.value_regression.epochs = 20;
  c.cfg.training.epochs = 8;
  c.cfg.training.batch = 64;
  c.cfg.training.learning_rate = 2e-3;
  c.n_mc = 32;
  return c;
}

BenchConfig BenchConfig::from_config(const Config& cfg, BenchConfig c) {
  c.n_tokens = cfg.get_int("n_tokens", c.n_tokens);
  c.length = cfg.get_int("length", c.length);
  c.motif_width = cfg.get_int("motif_width", c.motif_width);
  c.steps = cfg.get_int("steps", c.steps);
  c.motif_lambda = cfg.get_double("motif_lambda", c.motif_lambda);
  c.data_seed = cfg.get_u64("data_seed", c.data_seed);
  c.reward.n_tokens = c.n_tokens;
  c.reward.length = c.length;
  c.reward.width = c.motif_width;
  c.reward.sigma = cfg.get_double("reward_sigma", c.reward.sigma);
  c.reward.scale = cfg.get_double("reward_scale", c.reward.scale);
  c.reward.rho = cfg.get_double("reward_rho", c.reward.rho);
  c.architecture.width = cfg.get_int("width", c.architecture.width);
  c.architecture.blocks = cfg.get_int("blocks", c.architecture.blocks);
  c.pretrain_samples = cfg.get_int("pretrain_samples", c.pretrain_samples);
  c.pretrain.epochs = cfg.get_int("pretrain_epochs", c.pretrain.epochs);
  c.pretrain.batch = cfg.get_int("pretrain_batch", c.pretrain.batch);
  c.pretrain.learning_rate = cfg.get_double("pretrain_learning_rate", c.pretrain.learning_rate);
  c.pretrain.seed = cfg.get_u64("pretrain_seed", c.pretrain.seed);
  Config ft;
  for (const auto& [k, v] : cfg.entries())
    if (k.rfind("ft_", 0) == 0) ft.set(k.substr(3), v);
  ft.set("steps", std::to_string(c.steps));
  c.drakes = FinetuneConfig::from_config(ft, c.drakes);
  c.alphas = cfg.get_doubles("alphas", c.alphas);
  c.guidance_alpha = cfg.get_double("guidance_alpha", c.guidance_alpha);
  c.value_regression.n_rollouts = cfg.get_int("value_rollouts", c.value_regression.n_rollouts);
  c.value_regression.epochs = cfg.get_int("value_epochs", c.value_regression.epochs);
  c.smc_particles = cfg.get_int("smc_particles", c.smc_particles);
  c.cfg.n_train = cfg.get_int("cfg_samples", c.cfg.n_train);
  c.cfg.quantile = cfg.get_double("cfg_quantile", c.cfg.quantile);
  c.cfg.training.epochs = cfg.get_int("cfg_epochs", c.cfg.training.epochs);
  if (cfg.has("seeds")) {
    c.seeds.clear();
    for (double s : cfg.get_doubles("seeds", {})) c.seeds.push_back(std::uint64_t(s));
  }
  c.n_eval = cfg.get_int("n_eval", c.n_eval);
  c.n_mc = cfg.get_int("n_mc", c.n_mc);
  c.reference_samples = cfg.get_int("reference_samples", c.reference_samples);
  if (cfg.has("methods")) {
    c.methods.clear();
    std::stringstream ss(cfg.get_string("methods", ""));
    std::string m;
    while (std::getline(ss, m, ',')) {
      m.erase(0, m.find_first_not_of(' '));
      m.erase(m.find_last_not_of(' ') + 1);
      if (!m.empty()) c.methods.push_back(m);
    }
  }
  return c;
}

nlohmann::json BenchConfig::to_json() const {
  const auto& d = drakes;
  return {{"n_tokens", n_tokens},
          {"length", length},
          {"motif_width", motif_width},
          {"steps", steps},
          {"motif_lambda", motif_lambda},
          {"data_seed", data_seed},
          {"reward", {{"sigma", reward.sigma}, {"scale", reward.scale}, {"rho", reward.rho}}},
          {"architecture", {{"width", architecture.width}, {"blocks", architecture.blocks}}},
          {"pretrain",
           {{"samples", pretrain_samples},
            {"epochs", pretrain.epochs},
            {"batch", pretrain.batch},
            {"learning_rate", pretrain.learning_rate},
            {"seed", pretrain.seed}}},
          {"finetune",
           {{"batch", d.batch},
            {"iterations", d.iterations},
            {"tau0", d.tau0},
            {"truncation", d.truncation},
            {"learning_rate", d.learning_rate},
            {"straight_through", d.straight_through},
            {"gumbel_on_probs", d.gumbel_on_probs},
            {"flat_kl_weight", d.flat_kl_weight},
            {"relaxation", d.relaxation == Relaxation::Full ? "full" : "factorized"},
            {"micro_batch", d.micro_batch},
            {"temperature", d.temperature == TemperatureSchedule::Linear ? "linear" : "constant"},
            {"alpha", d.alpha}}},
          {"alphas", alphas},
          {"guidance_alpha", guidance_alpha},
          {"value_regression", {{"rollouts", value_regression.n_rollouts}, {"epochs", value_regression.epochs}}},
          {"smc_particles", smc_particles},
          {"cfg", {{"samples", cfg.n_train}, {"quantile", cfg.quantile}, {"epochs", cfg.training.epochs}}},
          {"seeds", seeds},
          {"n_eval", n_eval},
          {"n_mc", n_mc},
          {"reference_samples", reference_samples},
          {"methods", methods}};
}

std::string BenchConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

BenchData make_bench_data(const BenchConfig& config) {
  Rng rng(config.data_seed);
  TokenSeq motif(config.motif_width);
  for (int& tok : motif) tok = int(rng.below(config.n_tokens));
  BenchData data{SyntheticDistribution::motif_mixture(config.n_tokens, config.length, motif, config.motif_lambda),
                 twin_reward_split(config.reward, config.data_seed + 1),
                 {}};
  auto pool = sample_data(data.dist, config.reference_samples, config.data_seed + 2);
  const auto scores = data.rewards.eval.score(pool);
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t top = std::max<std::size_t>(1, pool.size() / 10);
  for (std::size_t i = 0; i < top; ++i) data.reference.push_back(pool[idx[i]]);
  return data;
}

std::unique_ptr<Denoiser> pretrained_model(const BenchConfig& config, const BenchData& data,
                                           const std::string& cache_path, nlohmann::json* log) {
  nlohmann::json pre_cfg = config.to_json();
  pre_cfg = {{"n_tokens", config.n_tokens}, {"length", config.length}, {"steps", config.steps},
             {"data", data.dist.to_json()},  {"architecture", pre_cfg["architecture"]},
             {"pretrain", pre_cfg["pretrain"]}};
  const std::string hash = hex64(fnv1a64(pre_cfg.dump()));
  if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
    nlohmann::json header;
    auto model = load_checkpoint(cache_path, &header);
    if (header.at("extra").value("bench_hash", "") == hash) {
      if (log) *log = header.at("extra").value("log", nlohmann::json::object());
      return model;
    }
  }
  MlpDenoiserConfig arch = config.architecture;
  arch.horizon = 1.0;
  auto model = std::make_unique<MlpDenoiser>(Vocabulary(config.n_tokens), SequenceSpec(config.length), arch,
                                             config.pretrain.seed);
  const auto train = sample_data(data.dist, config.pretrain_samples, config.data_seed + 3);
  const auto heldout = sample_data(data.dist, 1000, config.data_seed + 4);
  const NoiseSchedule schedule(1.0, config.steps);
  const PretrainResult res = train_pretrained(*model, train, heldout, schedule, config.pretrain);
  if (log) *log = res.to_json();
  if (!cache_path.empty()) save_checkpoint(cache_path, *model, {{"bench_hash", hash}, {"log", res.to_json()}});
  return model;
}

double metric_value(const MethodResult& row, const std::string& metric) {
  if (metric == "eval_reward_mean") return row.eval_reward_mean;
  if (metric == "eval_reward_median") return row.eval_reward_median;
  if (metric == "ft_reward_mean") return row.ft_reward_mean;
  if (metric == "loglik_mean") return row.loglik_mean;
  if (metric == "loglik_median") return row.loglik_median;
  if (metric == "kmer3_corr") return row.kmer3_corr;
  if (metric == "seconds") return row.seconds;
  throw Error("unknown metric '" + metric + "'");
}

namespace {

const std::vector<std::string> kMetrics{"eval_reward_mean", "eval_reward_median", "ft_reward_mean",
                                        "loglik_mean",      "loglik_median",      "kmer3_corr",
                                        "seconds"};

std::vector<double> seed_values(const EvalReport& r, const std::string& method, const std::string& metric) {
  std::vector<double> v;
  for (const auto& row : r.rows)
    if (row.method == method && !row.failed) v.push_back(metric_value(row, metric));
  return v;
}

std::vector<std::string> method_order(const EvalReport& r) {
  std::vector<std::string> names;
  for (const auto& row : r.rows)
    if (std::find(names.begin(), names.end(), row.method) == names.end()) names.push_back(row.method);
  return names;
}

// Particles resampled by weight into an unweighted set of the same size.
std::vector<TokenSeq> resample(const SmcResult& res, Rng& rng) {
  const std::size_t p = res.sequences.size();
  std::vector<TokenSeq> out;
  const double u0 = rng.uniform() / double(p);
  double acc = res.weights[0];
  std::size_t idx = 0;
  for (std::size_t i = 0; i < p; ++i) {
    const double u = u0 + double(i) / double(p);
    while (idx + 1 < p && acc < u) acc += res.weights[++idx];
    out.push_back(res.sequences[idx]);
  }
  return out;
}

}  // namespace

double EvalReport::seed_mean(const std::string& method, const std::string& metric) const {
  const auto v = seed_values(*this, method, metric);
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(v);
}

double EvalReport::seed_std(const std::string& method, const std::string& metric) const {
  const auto v = seed_values(*this, method, metric);
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(22) << "method";
  const std::vector<std::string> shown{"eval_reward_median", "eval_reward_mean", "loglik_median", "kmer3_corr"};
  for (const auto& m : shown) os << std::setw(26) << m;
  os << "\n";
  for (const auto& name : method_order(*this)) {
    os << std::setw(22) << name;
    for (const auto& m : shown) {
      std::ostringstream cell;
      cell << std::setprecision(4) << seed_mean(name, m) << " (" << std::setprecision(2) << seed_std(name, m) << ")";
      os << std::setw(26) << cell.str();
    }
    os << "\n";
  }
  return os.str();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json cell = {{"method", r.method}, {"seed", r.seed}, {"n", r.n}, {"failed", r.failed}};
    if (r.failed) {
      cell["error"] = r.error;
    } else {
      for (const auto& m : kMetrics) cell[m] = metric_value(r, m);
    }
    rows_j.push_back(cell);
  }
  return {{"rows", rows_j}, {"seconds", seconds}};
}

MethodResult evaluate_samples(const std::string& method, std::uint64_t seed, const std::vector<TokenSeq>& samples,
                              const Denoiser& pretrained, const BenchData& data, const BenchConfig& config) {
  MethodResult r;
  r.method = method;
  r.seed = seed;
  r.n = samples.size();
  const auto ev = data.rewards.eval.score(samples);
  r.eval_reward_mean = mean(ev);
  r.eval_reward_median = median(ev);
  r.ft_reward_mean = mean(data.rewards.finetune.score(samples));
  const NoiseSchedule schedule(1.0, config.steps);
  const auto ll = approx_log_likelihood(pretrained, schedule, samples, config.n_mc, seed + 1000);
  r.loglik_mean = mean(ll);
  r.loglik_median = median(ll);
  r.kmer3_corr = kmer_correlation(samples, data.reference, 3, config.n_tokens);
  return r;
}

EvalReport run_comparison(const BenchConfig& config, const Denoiser& pretrained, const BenchData& data,
                          const std::string& out_dir, const std::function<void(const MethodResult&)>& on_row) {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule schedule(1.0, config.steps);
  const Reward& r_ft = data.rewards.finetune;
  EvalReport report;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  for (std::uint64_t seed : config.seeds) {
    std::shared_ptr<ValueNetwork> value_net;
    auto twist = [&]() {
      if (!value_net) {
        ValueRegressionConfig vr = config.value_regression;
        vr.seed = seed * 7919 + 17;
        value_net = mc_value_regression(pretrained, r_ft, config.guidance_alpha, schedule, vr);
      }
      return network_twist(value_net, schedule);
    };
    auto smc_batches = [&](const Potential* proposal) {
      SmcConfig sc;
      sc.particles = config.smc_particles;
      sc.alpha = config.guidance_alpha;
      const Twist tw = twist();
      std::vector<TokenSeq> out;
      Rng pick(seed ^ 0x51ecULL);
      for (int batch = 0; out.size() < std::size_t(config.n_eval); ++batch) {
        const SmcResult res = smc_sample(pretrained, r_ft, schedule, tw, proposal, sc, seed * 1000 + batch);
        for (auto& s : resample(res, pick))
          if (out.size() < std::size_t(config.n_eval)) out.push_back(std::move(s));
      }
      return out;
    };

    for (const auto& method : config.methods) {
      const auto start = std::chrono::steady_clock::now();
      MethodResult row;
      try {
        std::vector<TokenSeq> samples;
        const std::uint64_t sample_seed = seed * 1000003 + 101;
        if (method == "Pretrained") {
          samples = ancestral_sample(pretrained, schedule, config.n_eval, sample_seed).sequences;
        } else if (method == "CG") {
          const Potential pot = posterior_mean_potential(pretrained, r_ft, config.guidance_alpha, schedule);
          samples = cg_sample(pretrained, pot, schedule, config.n_eval, sample_seed, CgVariant::Taylor);
        } else if (method == "SMC") {
          samples = smc_batches(nullptr);
        } else if (method == "TDS") {
          const Potential pot = posterior_mean_potential(pretrained, r_ft, config.guidance_alpha, schedule);
          samples = smc_batches(&pot);
        } else if (method == "CFG") {
          CfgConfig cc = config.cfg;
          cc.architecture = config.architecture;
          samples = cfg_train_and_sample(data.dist, r_ft, cc, schedule, config.n_eval, seed * 31 + 7).sequences;
        } else if (method == "DRAKES" || method == "DRAKES-no-KL" || method.rfind("DRAKES-alpha=", 0) == 0) {
          FinetuneConfig fc = config.drakes;
          fc.steps = config.steps;
          fc.seed = seed * 7777 + 3;
          if (method == "DRAKES-no-KL") {
            fc.alpha = 0.0;
          } else if (method != "DRAKES") {
            fc.alpha = std::stod(method.substr(std::string("DRAKES-alpha=").size()));
          }
          const nlohmann::json full = config.to_json();
          nlohmann::json key;
          for (const char* k : {"n_tokens", "length", "motif_width", "steps", "motif_lambda", "data_seed", "reward",
                                "architecture", "pretrain", "finetune"})
            key[k] = full.at(k);
          key["alpha_used"] = fc.alpha;
          key["seed_used"] = fc.seed;
          const std::string hash = hex64(fnv1a64(key.dump()));
          std::unique_ptr<Denoiser> tuned;
          std::string path;
          if (!out_dir.empty()) {
            std::ostringstream name;
            name << "finetuned_a" << fc.alpha << "_s" << seed << ".ckpt";
            path = (std::filesystem::path(out_dir) / name.str()).string();
            if (std::filesystem::exists(path)) {
              nlohmann::json header;
              auto cached = load_checkpoint(path, &header);
              if (header.at("extra").value("hash", "") == hash) tuned = std::move(cached);
            }
          }
          if (!tuned) {
            FinetuneResult fr = finetune(pretrained, r_ft, fc);
            tuned = std::move(fr.model);
            if (!path.empty()) save_checkpoint(path, *tuned, {{"hash", hash}});
          }
          samples = ancestral_sample(*tuned, schedule, config.n_eval, sample_seed).sequences;
        } else {
          throw Error("unknown method '" + method + "'");
        }
        row = evaluate_samples(method, seed, samples, pretrained, data, config);
      } catch (const std::exception& e) {
        row = MethodResult{};
        row.method = method;
        row.seed = seed;
        row.failed = true;
        row.error = e.what();
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report.rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void write_report(const EvalReport& report, const BenchConfig& config, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& metric : kMetrics) {
    std::ofstream csv(std::filesystem::path(out_dir) / (metric + ".csv"));
    csv << "method";
    for (auto s : config.seeds) csv << ",seed_" << s;
    csv << ",mean,std,n\n";
    for (const auto& name : method_order(report)) {
      csv << name;
      std::size_t n = 0;
      for (auto s : config.seeds) {
        csv << ",";
        for (const auto& row : report.rows)
          if (row.method == name && row.seed == s) {
            if (row.failed) {
              csv << "failed";
            } else {
              csv << std::setprecision(10) << metric_value(row, metric);
              n = row.n;
            }
          }
      }
      csv << "," << report.seed_mean(name, metric) << "," << report.seed_std(name, metric) << "," << n << "\n";
    }
  }
  nlohmann::json manifest = {{"config_hash", config.hash()},
                             {"revision", DRAKES_REVISION},
                             {"seeds", config.seeds},
                             {"wallclock_seconds", report.seconds},
                             {"config", config.to_json()},
                             {"results", report.to_json()}};
  std::ofstream(std::filesystem::path(out_dir) / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace drakes
