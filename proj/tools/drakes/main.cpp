// drakes: pretraining, reward fine-tuning, guided sampling, evaluation,
// oracle checks and the benchmark comparison.
//
// Every subcommand reads an optional `--config file` of `key = value` lines;
// any key can be given or overridden on the command line as `--key value`.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drakes/bench.hpp"
#include "drakes/config.hpp"
#include "drakes/denoiser.hpp"
#include "drakes/finetune.hpp"
#include "drakes/guidance.hpp"
#include "drakes/oracle.hpp"
#include "drakes/pretrain.hpp"
#include "drakes/reward.hpp"
#include "drakes/sampling.hpp"
#include "suites.hpp"

using namespace drakes;
using nlohmann::json;

namespace {

std::string require(const Config& cfg, const std::string& key) {
  if (!cfg.has(key)) throw Error("missing required option --" + key);
  return cfg.get_string(key, "");
}

// Output stream for `key`: the named file, or stdout when absent or "-".
class Output {
 public:
  Output(const Config& cfg, const std::string& key) {
    const std::string path = cfg.get_string(key, "-");
    if (path != "-") {
      file_.open(path);
      if (!file_) throw Error("cannot write " + path);
    }
  }
  std::ostream& operator*() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

void write_fasta(std::ostream& os, const std::vector<TokenSeq>& seqs, const Vocabulary& vocab, const std::string& tag) {
  for (std::size_t i = 0; i < seqs.size(); ++i) os << ">" << tag << "_" << i << "\n" << format_sequence(seqs[i], vocab) << "\n";
}

std::vector<TokenSeq> read_fasta(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<TokenSeq> out;
  std::string line, current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(parse_sequence(current, vocab));
    current.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      flush();
    } else {
      current += line;
    }
  }
  flush();
  if (out.empty()) throw Error(path + " holds no sequences");
  return out;
}

SyntheticDistribution distribution_from_json(const json& j) {
  const std::string kind = j.at("kind");
  if (kind == "uniform") return SyntheticDistribution::uniform(j.at("n_tokens"), j.at("length"));
  if (kind == "motif-mixture") {
    return SyntheticDistribution::motif_mixture(j.at("n_tokens"), j.at("length"), j.at("motif").get<TokenSeq>(),
                                                j.at("lambda"));
  }
  if (kind == "categorical") return SyntheticDistribution::categorical(j.at("probs").get<std::vector<double>>(), j.at("length"));
  throw Error("unknown data kind '" + kind + "'");
}

SyntheticDistribution distribution_from_config(const Config& cfg) {
  const int n = cfg.get_int("n_tokens", 4);
  const int m = cfg.get_int("length", 20);
  const std::string kind = cfg.get_string("data", "motif-mixture");
  if (kind == "uniform") return SyntheticDistribution::uniform(n, m);
  if (kind == "categorical") return SyntheticDistribution::categorical(cfg.get_doubles("probs", {}), m);
  if (kind != "motif-mixture") throw Error("data must be uniform, motif-mixture or categorical");
  TokenSeq motif;
  if (cfg.has("motif")) {
    motif = parse_sequence(cfg.get_string("motif", ""), Vocabulary(n));
  } else {
    Rng rng(cfg.get_u64("data_seed", 11));
    motif.resize(cfg.get_int("motif_width", 6));
    for (int& tok : motif) tok = int(rng.below(n));
  }
  return SyntheticDistribution::motif_mixture(n, m, motif, cfg.get_double("motif_lambda", 0.5));
}

struct Loaded {
  std::unique_ptr<Denoiser> model;
  json header;
};

Loaded load_model(const std::string& path) {
  Loaded l;
  l.model = load_checkpoint(path, &l.header);
  return l;
}

// Steps default to the checkpoint's training schedule.
NoiseSchedule schedule_for(const Config& cfg, const json& header) {
  const json& extra = header.at("extra");
  const int steps = cfg.get_int("steps", extra.value("steps", 128));
  return NoiseSchedule(cfg.get_double("horizon", extra.value("horizon", 1.0)), steps);
}

// ------------------------------------------------------------------ pretrain

int cmd_pretrain(const Config& cfg) {
  const std::string out = require(cfg, "out");
  const SyntheticDistribution dist = distribution_from_config(cfg);
  const int steps = cfg.get_int("steps", 128);
  const double horizon = cfg.get_double("horizon", 1.0);
  const NoiseSchedule schedule(horizon, steps);
  const std::uint64_t data_seed = cfg.get_u64("data_seed", 11);
  const auto train = sample_data(dist, cfg.get_int("n_train", 20000), data_seed + 3);
  const auto heldout = sample_data(dist, cfg.get_int("n_heldout", 1000), data_seed + 4);

  PretrainConfig pc;
  pc.epochs = cfg.get_int("epochs", pc.epochs);
  pc.batch = cfg.get_int("batch", pc.batch);
  pc.learning_rate = cfg.get_double("learning_rate", pc.learning_rate);
  pc.optimizer = cfg.get_string("optimizer", pc.optimizer);
  pc.seed = cfg.get_u64("seed", pc.seed);

  std::unique_ptr<Denoiser> model;
  const std::string arch = cfg.get_string("model", "mlp");
  if (arch == "mlp") {
    MlpDenoiserConfig mc;
    mc.width = cfg.get_int("width", mc.width);
    mc.blocks = cfg.get_int("blocks", mc.blocks);
    mc.horizon = horizon;
    model = std::make_unique<MlpDenoiser>(Vocabulary(dist.n_tokens), SequenceSpec(dist.length), mc, pc.seed);
  } else if (arch == "tabular") {
    if (dist.length != 1) throw Error("the tabular model needs length = 1");
    model = std::make_unique<TabularDenoiser>(Vocabulary(dist.n_tokens), steps, horizon);
  } else {
    throw Error("model must be mlp or tabular");
  }
  Output log(cfg, "log");
  const PretrainResult res = train_pretrained(*model, train, heldout, schedule, pc, {}, [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << ": train " << e.train_loss << ", held-out " << e.heldout_nelbo << " ("
              << e.seconds << " s)\n";
  });
  save_checkpoint(out, *model,
                  {{"steps", steps}, {"horizon", horizon}, {"data", dist.to_json()}, {"config", cfg.canonical()}});
  *log << res.to_json().dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ reward

int cmd_reward(const Config& cfg) {
  const std::string prefix = require(cfg, "out");
  TwinRewardConfig rc = BenchConfig::desk().reward;
  rc.n_tokens = cfg.get_int("n_tokens", rc.n_tokens);
  rc.length = cfg.get_int("length", rc.length);
  rc.width = cfg.get_int("width", rc.width);
  rc.sigma = cfg.get_double("sigma", rc.sigma);
  rc.scale = cfg.get_double("scale", rc.scale);
  rc.rho = cfg.get_double("rho", rc.rho);
  const TwinRewards tw = twin_reward_split(rc, cfg.get_u64("seed", 0));
  tw.finetune.save(prefix + ".finetune.json");
  tw.eval.save(prefix + ".eval.json");
  std::cout << json{{"finetune", prefix + ".finetune.json"},
                    {"eval", prefix + ".eval.json"},
                    {"correlation", tw.correlation},
                    {"redraws", tw.redraws}}
                   .dump(2)
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ finetune

int cmd_finetune(const Config& cfg) {
  const Loaded pre = load_model(require(cfg, "pretrained"));
  const Reward reward = Reward::load(require(cfg, "reward"));
  const std::string out = require(cfg, "out");
  FinetuneConfig base;
  base.steps = pre.header.at("extra").value("steps", base.steps);
  base.horizon = pre.header.at("extra").value("horizon", base.horizon);
  base.truncation = std::min(base.truncation, base.steps / 2);
  const FinetuneConfig fc = FinetuneConfig::from_config(cfg, base);
  Output metrics(cfg, "metrics");
  *metrics << "iteration,mean_reward,kl,loss,grad_norm,wallclock\n";
  try {
    const FinetuneResult res = finetune(*pre.model, reward, fc, [&](const IterationMetrics& m) {
      *metrics << m.iteration << "," << m.mean_reward << "," << m.kl << "," << m.loss << "," << m.grad_norm << ","
               << m.wallclock << std::endl;
    });
    save_checkpoint(out, *res.model,
                    {{"steps", fc.steps}, {"horizon", fc.horizon}, {"data", pre.header.at("extra").value("data", json())},
                     {"finetune", cfg.canonical()}, {"kl_clamped", res.clamped}});
    if (res.clamped) std::cerr << "warning: p_pre was floored at 1e-12 in " << res.clamped << " KL entries\n";
  } catch (const DivergenceError& e) {
    save_checkpoint(out + ".last_good", *e.last_good, {{"steps", fc.steps}, {"horizon", fc.horizon}, {"iteration", e.iteration}});
    std::cerr << e.what() << "; last finite model written to " << out << ".last_good\n";
    return 3;
  }
  return 0;
}

// ------------------------------------------------------------------ sample

int cmd_sample(const Config& cfg) {
  const Loaded m = load_model(require(cfg, "model"));
  const NoiseSchedule schedule = schedule_for(cfg, m.header);
  SampleOptions opts;
  if (cfg.has("label")) opts.label = cfg.get_int("label", 0);
  opts.record_trajectory = cfg.has("trajectory");
  const std::size_t n = cfg.get_int("n", 64);
  const SampleBatch batch = ancestral_sample(*m.model, schedule, n, cfg.get_u64("seed", 0), opts);
  Output out(cfg, "out");
  write_fasta(*out, batch.sequences, m.model->vocab(), "sample");
  if (opts.record_trajectory) {
    std::ofstream tr(cfg.get_string("trajectory", ""));
    write_trajectory_jsonl(tr, batch.trajectories.at(0));
  }
  return 0;
}

// ------------------------------------------------------------------ guide

int cmd_guide(const Config& cfg) {
  const std::string method = require(cfg, "method");
  const Loaded pre = load_model(require(cfg, "pretrained"));
  const Reward reward = Reward::load(require(cfg, "reward"));
  const NoiseSchedule schedule = schedule_for(cfg, pre.header);
  const double alpha = cfg.get_double("alpha", 1e-3);
  const std::size_t n = cfg.get_int("n", 64);
  const std::uint64_t seed = cfg.get_u64("seed", 0);
  const CgVariant variant = cfg.get_string("variant", "taylor") == "exact" ? CgVariant::ExactRatio : CgVariant::Taylor;
  const Vocabulary& vocab = pre.model->vocab();
  Output out(cfg, "out");
  auto emit = [&](const std::vector<TokenSeq>& seqs, const std::vector<double>& weights, const json& extra) {
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      json row{{"method", method}, {"sequence", format_sequence(seqs[i], vocab)}, {"weight", weights.at(i)}};
      for (auto it = extra.begin(); it != extra.end(); ++it) row[it.key()] = it.value();
      *out << row.dump() << "\n";
    }
  };
  auto uniform = [](std::size_t k) { return std::vector<double>(k, 1.0 / double(k)); };

  if (method == "cg") {
    const Potential pot = posterior_mean_potential(*pre.model, reward, alpha, schedule);
    const auto seqs = cg_sample(*pre.model, pot, schedule, n, seed, variant);
    emit(seqs, uniform(seqs.size()), json::object());
  } else if (method == "smc" || method == "tds") {
    ValueRegressionConfig vr;
    vr.n_rollouts = cfg.get_int("value_rollouts", vr.n_rollouts);
    vr.epochs = cfg.get_int("value_epochs", vr.epochs);
    vr.seed = seed + 17;
    Twist twist;
    std::shared_ptr<ValueNetwork> net;
    if (pre.model->sequence().length == 1 && cfg.get_bool("exact_twist", false)) {
      twist = table_twist(exact_value_backward(*pre.model, reward, alpha, schedule));
    } else {
      net = mc_value_regression(*pre.model, reward, alpha, schedule, vr);
      for (const auto& w : net->warnings) std::cerr << "warning: " << w << "\n";
      twist = network_twist(net, schedule);
    }
    SmcConfig sc;
    sc.particles = cfg.get_int("particles", int(n));
    sc.alpha = alpha;
    sc.ess_fraction = cfg.get_double("ess_fraction", sc.ess_fraction);
    sc.variant = variant;
    const Potential pot = posterior_mean_potential(*pre.model, reward, alpha, schedule);
    const SmcResult res = smc_sample(*pre.model, reward, schedule, twist, method == "tds" ? &pot : nullptr, sc, seed);
    emit(res.sequences, res.weights, {{"log_normalizer", res.log_normalizer}});
    std::cerr << method << ": log Z estimate " << res.log_normalizer << ", " << res.resamples << " resampling steps\n";
  } else if (method == "doob") {
    if (pre.model->sequence().length != 1) throw Error("guide --method doob needs a single-token model");
    const ValueTable table = exact_value_backward(*pre.model, reward, alpha, schedule);
    const StepRates rates = doob_step_rates(model_step_rates(*pre.model, schedule), table);
    const auto draws = sample_single_token(rates, schedule, vocab.states(), n, seed);
    std::vector<TokenSeq> seqs;
    for (int y : draws) seqs.push_back({y});
    emit(seqs, uniform(seqs.size()), json::object());
  } else if (method == "cfg") {
    const json data = pre.header.at("extra").value("data", json());
    if (data.is_null()) throw Error("guide --method cfg needs a checkpoint that records its training data");
    CfgConfig cc;
    cc.n_train = cfg.get_int("cfg_samples", cc.n_train);
    cc.quantile = cfg.get_double("cfg_quantile", cc.quantile);
    cc.architecture.width = cfg.get_int("width", cc.architecture.width);
    cc.architecture.blocks = cfg.get_int("blocks", cc.architecture.blocks);
    cc.training.epochs = cfg.get_int("epochs", cc.training.epochs);
    cc.training.seed = seed;
    const CfgResult res = cfg_train_and_sample(distribution_from_json(data), reward, cc, schedule, n, seed);
    emit(res.sequences, uniform(res.sequences.size()), {{"threshold", res.threshold}});
  } else {
    throw Error("unknown method '" + method + "' (cg, smc, tds, doob, cfg)");
  }
  return 0;
}

// ------------------------------------------------------------------ evaluate

int cmd_evaluate(const Config& cfg) {
  const Loaded pre = load_model(require(cfg, "pretrained"));
  const Vocabulary& vocab = pre.model->vocab();
  const auto samples = read_fasta(require(cfg, "samples"), vocab);
  const NoiseSchedule schedule = schedule_for(cfg, pre.header);
  Output out(cfg, "out");
  *out << "metric,value\n" << "n," << samples.size() << "\n";
  *out << std::setprecision(10);
  for (const std::string key : {"reward", "eval_reward"}) {
    if (!cfg.has(key)) continue;
    const auto scores = Reward::load(cfg.get_string(key, "")).score(samples);
    *out << key << "_mean," << mean(scores) << "\n" << key << "_median," << median(scores) << "\n";
  }
  const auto ll = approx_log_likelihood(*pre.model, schedule, samples, cfg.get_int("n_mc", 4), cfg.get_u64("seed", 0));
  *out << "loglik_mean," << mean(ll) << "\nloglik_median," << median(ll) << "\n";
  if (cfg.has("reference")) {
    const auto ref = read_fasta(cfg.get_string("reference", ""), vocab);
    *out << "kmer3_corr," << kmer_correlation(samples, ref, cfg.get_int("k", 3), vocab.n_tokens) << "\n";
  }
  return 0;
}

// ------------------------------------------------------------------ oracle-check

int cmd_oracle_check(const Config& cfg) {
  std::vector<std::string> suites;
  std::stringstream ss(require(cfg, "suite"));
  for (std::string s; std::getline(ss, s, ',');) suites.push_back(s);
  json report = json::object();
  bool ok = true;
  for (const auto& name : suites) {
    const cli::SuiteResult r = cli::run_suite(name, cfg);
    report[name] = r.report;
    report[name]["pass"] = r.pass;
    ok = ok && r.pass;
  }
  report["pass"] = ok;
  Output out(cfg, "out");
  *out << report.dump(2) << "\n";
  return ok ? 0 : 1;
}

// ------------------------------------------------------------------ compare

int cmd_compare(const Config& cfg) {
  const BenchConfig bc = BenchConfig::from_config(cfg);
  const std::string out_dir = cfg.get_string("out", "compare_out");
  const BenchData data = make_bench_data(bc);
  std::cerr << "twin rewards: score correlation " << data.rewards.correlation << " after " << data.rewards.redraws
            << " redraws\n";
  json pre_log;
  std::filesystem::create_directories(out_dir);
  const auto pre = pretrained_model(bc, data, cfg.get_string("pretrained_cache", out_dir + "/pretrained.ckpt"), &pre_log);
  const EvalReport report = run_comparison(bc, *pre, data, cfg.get_bool("cache_models", true) ? out_dir : "",
                                           [](const MethodResult& r) {
                                             std::cerr << r.method << " seed " << r.seed << ": "
                                                       << (r.failed ? "failed (" + r.error + ")"
                                                                    : "eval reward " + std::to_string(r.eval_reward_mean) +
                                                                          ", log-lik " + std::to_string(r.loglik_mean) +
                                                                          ", 3-mer " + std::to_string(r.kmer3_corr))
                                                       << " [" << r.seconds << " s]\n";
                                           });
  write_report(report, bc, out_dir);
  std::cout << report.table();
  bool ok = true;
  for (const auto& row : report.rows) ok = ok && !row.failed;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward fine-tuning and guidance for masked discrete diffusion"};
  app.require_subcommand(1);
  std::string config_path;
  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const Config&);
  };
  const std::vector<Sub> subs{
      {"pretrain", "train a masked-diffusion denoiser on synthetic data (--out ckpt)", cmd_pretrain},
      {"reward", "draw a fine-tuning / evaluation reward pair (--out prefix)", cmd_reward},
      {"finetune", "reward fine-tuning (--pretrained ckpt --reward json --out ckpt)", cmd_finetune},
      {"sample", "ancestral sampling to FASTA (--model ckpt)", cmd_sample},
      {"guide", "guided sampling to JSON lines (--method cg|smc|tds|doob|cfg --pretrained ckpt --reward json)", cmd_guide},
      {"evaluate", "metrics of a FASTA sample set (--samples fasta --pretrained ckpt)", cmd_evaluate},
      {"oracle-check", "exact-oracle suites (--suite tilted-target,doob,kolmogorov,feynman-kac)", cmd_oracle_check},
      {"compare", "benchmark comparison with CSV and manifest output (--out dir)", cmd_compare},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->allow_extras();
    apps.push_back(sub);
  }
  CLI11_PARSE(app, argc, argv);
  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!apps[i]->parsed()) continue;
      Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
      const auto rest = cfg.apply_overrides(apps[i]->remaining());
      if (!rest.empty()) throw Error("unexpected argument '" + rest.front() + "'");
      return subs[i].run(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
