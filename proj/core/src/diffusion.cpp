#include "drakes/diffusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

namespace drakes {

Vocabulary::Vocabulary(int n) : n_tokens(n) {
  if (n < 2) throw Error("Vocabulary: need at least 2 real tokens, got " + std::to_string(n));
}

SequenceSpec::SequenceSpec(int m) : length(m) {
  if (m < 1) throw Error("SequenceSpec: sequence length must be >= 1, got " + std::to_string(m));
}

NoiseSchedule::NoiseSchedule(double horizon, int steps)
    : NoiseSchedule(
          horizon, steps, [horizon, steps](double t) { return 1.0 / (horizon - t + horizon / steps); }, "linear") {}

NoiseSchedule::NoiseSchedule(double horizon, int steps, RateFn gamma, std::string name)
    : horizon_(horizon), steps_(steps), gamma_(std::move(gamma)), name_(std::move(name)) {
  if (!(horizon > 0.0)) throw Error("NoiseSchedule: horizon must be positive");
  if (steps < 1) throw Error("NoiseSchedule: need at least one step");
}

NoiseSchedule NoiseSchedule::unmask_at_end(double horizon, int steps) {
  const double dt = horizon / steps;
  return NoiseSchedule(
      horizon, steps, [horizon, dt](double t) { return t >= horizon - 0.5 * dt ? 1.0 / dt : 0.0; }, "unmask-at-end");
}

NoiseSchedule NoiseSchedule::constant_rate(double horizon, int steps, double gamma) {
  return NoiseSchedule(
      horizon, steps, [gamma](double) { return gamma; }, "constant");
}

double NoiseSchedule::gamma(double t) const { return gamma_(t); }

double NoiseSchedule::unmask_probability(int k) const {
  if (k < 1 || k > steps_) throw Error("NoiseSchedule: step index " + std::to_string(k) + " outside 1.." + std::to_string(steps_));
  return gamma_(time(k)) * dt();
}

double NoiseSchedule::mask_probability(double t) const {
  if (t < -1e-12 || t > horizon_ + 1e-12) {
    throw Error("mask_probability: t = " + std::to_string(t) + " outside [0, " + std::to_string(horizon_) + "]");
  }
  return std::clamp(1.0 - t / horizon_, 0.0, 1.0);
}

bool NoiseSchedule::fully_unmasks() const {
  double survival = 1.0;
  for (int k = 1; k <= steps_; ++k) survival *= 1.0 - unmask_probability(k);
  return std::abs(survival) < 1e-12;
}

TokenSeq forward_mask(const TokenSeq& x0, double t, const NoiseSchedule& schedule, const Vocabulary& vocab, Rng& rng) {
  const double m = schedule.mask_probability(t);
  TokenSeq out = x0;
  for (int& tok : out)
    if (rng.uniform() < m) tok = vocab.mask();
  return out;
}

void check_step_size(double unmask_prob, const char* where) {
  if (unmask_prob > 1.0 + 1e-12) {
    std::ostringstream os;
    os << where << ": gamma*dt = " << unmask_prob
       << " exceeds 1 and would leave negative retention mass; use a smaller dt (more steps K)";
    throw Error(os.str());
  }
  if (unmask_prob < 0.0) throw Error(std::string(where) + ": negative unmasking rate");
}

GeneratorSlice reverse_rates(const ad::Array& x0_probs, double gamma, const ad::Array& relaxed, const Vocabulary& vocab) {
  const int n = vocab.n_tokens, s = vocab.states();
  if (x0_probs.rank() != 2 || x0_probs.dim(1) != static_cast<std::size_t>(n)) {
    throw Error("reverse_rates: x0_probs must have shape (M, " + std::to_string(n) + "), got " + ad::to_string(x0_probs.shape));
  }
  const std::size_t m = x0_probs.dim(0);
  if (relaxed.shape != ad::Shape{m, static_cast<std::size_t>(s)}) {
    throw Error("reverse_rates: relaxed state has shape " + ad::to_string(relaxed.shape));
  }
  for (double p : x0_probs.values)
    if (p < 0.0) throw Error("reverse_rates: negative probability in x0_probs");
  GeneratorSlice g;
  g.n_states = s;
  g.table = ad::Array({m, static_cast<std::size_t>(s), static_cast<std::size_t>(s)}, 0.0);
  g.mixed = ad::Array({m, static_cast<std::size_t>(s)}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &g.table.values[(i * s + vocab.mask()) * s];
    for (int y = 0; y < n; ++y) row[y] = gamma * x0_probs[i * n + y];
    row[vocab.mask()] = -gamma;
    for (int x = 0; x < s; ++x) {
      const double w = relaxed[i * s + x];
      if (w == 0.0) continue;
      for (int y = 0; y < s; ++y) g.mixed[i * s + y] += w * g.table[(i * s + x) * s + y];
    }
  }
  return g;
}

ad::Array step_distribution(const ad::Array& relaxed, const GeneratorSlice& rates, double dt) {
  const int s = rates.n_states;
  const std::size_t m = relaxed.size() / s;
  for (std::size_t i = 0; i < m; ++i)
    for (int x = 0; x < s; ++x) check_step_size(-rates.rate(static_cast<int>(i), x, x) * dt, "step_distribution");
  ad::Array pi = relaxed;
  for (std::size_t i = 0; i < m; ++i)
    for (int x = 0; x < s; ++x) {
      const double w = relaxed[i * s + x];
      if (w == 0.0) continue;
      for (int y = 0; y < s; ++y) pi[i * s + y] += dt * w * rates.rate(static_cast<int>(i), x, y);
    }
  return pi;
}

ad::Var step_distribution(const ad::Var& relaxed, const ad::Var& x0_probs, double unmask_prob) {
  check_step_size(unmask_prob, "step_distribution");
  const std::size_t s = relaxed.shape().back();
  if (x0_probs.shape().back() + 1 != s) {
    throw Error("step_distribution: x0_probs " + ad::to_string(x0_probs.shape()) + " does not match state " +
                ad::to_string(relaxed.shape()));
  }
  const ad::Var tokens = ad::slice_last(relaxed, 0, s - 1);
  const ad::Var masked = ad::slice_last(relaxed, s - 1, s);
  const ad::Var unmasked = ad::add(tokens, ad::scale(ad::mul(masked, x0_probs), unmask_prob));
  const ad::Var stay = ad::scale(masked, 1.0 - unmask_prob);
  return ad::concat_last({unmasked, stay});
}

ad::Array one_hot(const TokenSeq& seq, int n_states) {
  ad::Array out = one_hot_batch({seq}, n_states);
  out.shape = {seq.size(), static_cast<std::size_t>(n_states)};
  return out;
}

ad::Array one_hot_batch(const std::vector<TokenSeq>& seqs, int n_states) {
  const std::size_t b = seqs.size();
  const std::size_t m = b ? seqs[0].size() : 0;
  ad::Array out({b, m, static_cast<std::size_t>(n_states)}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (seqs[i].size() != m) throw Error("one_hot_batch: ragged batch");
    for (std::size_t j = 0; j < m; ++j) {
      const int tok = seqs[i][j];
      if (tok < 0 || tok >= n_states) throw Error("one_hot_batch: token " + std::to_string(tok) + " out of range");
      out[(i * m + j) * n_states + tok] = 1.0;
    }
  }
  return out;
}

void write_trajectory_jsonl(std::ostream& os, const Trajectory& trajectory) {
  for (std::size_t k = 0; k < trajectory.steps.size(); ++k) {
    const auto& st = trajectory.steps[k];
    nlohmann::json j;
    j["step"] = k;
    j["time"] = st.time;
    j["shape"] = st.state.shape;
    j["pi"] = st.pi.values;
    j["state"] = st.state.values;
    os << j.dump() << '\n';
  }
}

Trajectory read_trajectory_jsonl(std::istream& is) {
  Trajectory t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TrajectoryStep st;
    st.time = j.at("time").get<double>();
    const auto shape = j.at("shape").get<ad::Shape>();
    st.state = ad::Array(shape, j.at("state").get<std::vector<double>>());
    const auto pi = j.at("pi").get<std::vector<double>>();
    st.pi = pi.empty() ? ad::Array() : ad::Array(shape, pi);
    t.steps.push_back(std::move(st));
  }
  return t;
}

namespace {
std::string alphabet(const Vocabulary& vocab) {
  if (vocab.n_tokens == 4) return "ACGT";
  if (vocab.n_tokens > 26) throw Error("sequence text format supports at most 26 tokens");
  std::string a;
  for (int i = 0; i < vocab.n_tokens; ++i) a.push_back(static_cast<char>('A' + i));
  return a;
}
}  // namespace

std::string format_sequence(const TokenSeq& seq, const Vocabulary& vocab) {
  const std::string a = alphabet(vocab);
  std::string out;
  for (int tok : seq) out.push_back(tok == vocab.mask() ? '-' : a.at(tok));
  return out;
}

TokenSeq parse_sequence(const std::string& text, const Vocabulary& vocab) {
  const std::string a = alphabet(vocab);
  TokenSeq out;
  for (char c : text) {
    if (c == '-') {
      out.push_back(vocab.mask());
      continue;
    }
    const auto pos = a.find(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (pos == std::string::npos) throw Error(std::string("parse_sequence: unknown symbol '") + c + "'");
    out.push_back(static_cast<int>(pos));
  }
  return out;
}

}  // namespace drakes
