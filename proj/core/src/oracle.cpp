#include "drakes/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "drakes/guidance.hpp"

namespace drakes {

StepRates masked_step_rates(const std::function<std::vector<double>(double)>& x0_probs, const Vocabulary& vocab,
                            const NoiseSchedule& schedule) {
  return [x0_probs, vocab, schedule](int k) {
    const std::size_t s = vocab.states();
    const std::vector<double> p = x0_probs(schedule.time(k - 1));
    if (p.size() != std::size_t(vocab.n_tokens)) throw Error("masked_step_rates: prediction has the wrong length");
    const double gamma = schedule.gamma(schedule.time(k));
    ad::Array q({s, s}, 0.0);
    const std::size_t mask = vocab.mask();
    for (int y = 0; y < vocab.n_tokens; ++y) q[mask * s + y] = gamma * p[y];
    q[mask * s + mask] = -gamma;
    return q;
  };
}

StepRates model_step_rates(const Denoiser& model, const NoiseSchedule& schedule) {
  if (model.sequence().length != 1) throw Error("model_step_rates: exact chains need a single-token model (M = 1)");
  const Denoiser* m = &model;
  const Vocabulary vocab = model.vocab();
  return masked_step_rates(
      [m, vocab](double t) {
        const ad::Array p = m->predict({{vocab.mask()}}, t);
        return p.values;
      },
      vocab, schedule);
}

ad::Array transition_matrix(const ad::Array& rates, double dt) {
  if (rates.rank() != 2 || rates.dim(0) != rates.dim(1)) throw Error("transition_matrix: rates must be square");
  const std::size_t s = rates.dim(0);
  ad::Array p({s, s});
  for (std::size_t x = 0; x < s; ++x)
    for (std::size_t y = 0; y < s; ++y) {
      const double v = (x == y ? 1.0 : 0.0) + dt * rates[x * s + y];
      if (v < -1e-12) {
        throw Error("exact_marginal: negative transition mass " + std::to_string(v) + " from state " +
                    std::to_string(x) + "; use a smaller dt");
      }
      p[x * s + y] = std::max(v, 0.0);
    }
  return p;
}

std::vector<double> ExactMarginal::tokens(int k, int n) const {
  const auto& slice = at(k);
  return {slice.begin(), slice.begin() + n};
}

ExactMarginal exact_marginal(const StepRates& rates, const NoiseSchedule& schedule, int n_states,
                             std::vector<double> initial) {
  if (initial.empty()) {
    initial.assign(n_states, 0.0);
    initial.back() = 1.0;
  }
  if (initial.size() != std::size_t(n_states)) throw Error("exact_marginal: initial distribution has the wrong size");
  ExactMarginal out;
  out.n_states = n_states;
  out.p.push_back(initial);
  for (int k = 1; k <= schedule.steps(); ++k) {
    const ad::Array p = transition_matrix(rates(k), schedule.dt());
    const auto& prev = out.p.back();
    std::vector<double> next(n_states, 0.0);
    for (int x = 0; x < n_states; ++x)
      for (int y = 0; y < n_states; ++y) next[y] += prev[x] * p[std::size_t(x) * n_states + y];
    out.p.push_back(std::move(next));
  }
  return out;
}

std::vector<double> target_distribution(std::span<const double> p_pre, std::span<const double> reward, double alpha) {
  if (!(alpha > 0.0)) throw Error("target_distribution: alpha must be > 0");
  if (p_pre.size() != reward.size()) throw Error("target_distribution: p_pre and reward differ in length");
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p_pre.size(); ++i)
    if (p_pre[i] > 0.0) shift = std::max(shift, reward[i] / alpha);
  std::vector<double> out(p_pre.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < p_pre.size(); ++i) {
    if (p_pre[i] > 0.0) out[i] = p_pre[i] * std::exp(reward[i] / alpha - shift);
    z += out[i];
  }
  if (!(z > 0.0)) throw Error("target_distribution: exp(r / alpha) * p_pre is zero everywhere");
  for (double& v : out) v /= z;
  return out;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error("tv_distance: lengths differ (" + std::to_string(p.size()) + " vs " + std::to_string(q.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

std::vector<double> histogram(const std::vector<int>& draws, int n_states) {
  std::vector<double> h(n_states, 0.0);
  for (int d : draws) h.at(d) += 1.0;
  for (double& v : h) v /= double(draws.size());
  return h;
}

double tv_confidence_radius(int n_states, std::size_t n) { return std::sqrt(double(n_states) / double(n)); }

std::vector<double> continuous_marginal(const ad::Array& generator, std::span<const double> initial, double t) {
  const std::size_t s = generator.dim(0);
  Eigen::MatrixXd q(s, s);
  for (std::size_t x = 0; x < s; ++x)
    for (std::size_t y = 0; y < s; ++y) q(x, y) = generator[x * s + y] * t;
  const Eigen::MatrixXd e = q.exp();
  Eigen::RowVectorXd p0(s);
  for (std::size_t x = 0; x < s; ++x) p0(x) = initial[x];
  const Eigen::RowVectorXd pt = p0 * e;
  return {pt.data(), pt.data() + s};
}

namespace {

double forward_residual(const ad::Array& q, std::span<const double> initial, double horizon, int steps) {
  const std::size_t s = q.dim(0);
  const double dt = horizon / steps;
  double worst = 0.0;
  std::vector<double> p = continuous_marginal(q, initial, 0.0);
  for (int k = 0; k < steps; ++k) {
    const std::vector<double> next = continuous_marginal(q, initial, (k + 1) * dt);
    for (std::size_t y = 0; y < s; ++y) {
      double qp = 0.0;
      for (std::size_t x = 0; x < s; ++x) qp += p[x] * q[x * s + y];
      worst = std::max(worst, std::abs((next[y] - p[y]) / dt - qp));
    }
    p = next;
  }
  return worst;
}

}  // namespace

std::vector<ResidualReport> kolmogorov_residuals(const ResidualProblem& problem, const std::vector<int>& step_counts) {
  const std::size_t s = problem.generator.dim(0);
  std::vector<double> initial = problem.initial;
  if (initial.empty()) {
    initial.assign(s, 0.0);
    initial.back() = 1.0;
  }
  std::vector<ResidualReport> out;
  for (int steps : step_counts) {
    ResidualReport rep;
    rep.steps = steps;
    rep.dt = problem.horizon / steps;
    rep.forward = forward_residual(problem.generator, initial, problem.horizon, steps);
    if (problem.x0_probs) {
      const NoiseSchedule schedule(problem.horizon, steps);
      const Vocabulary vocab(int(s) - 1);
      const StepRates rates = masked_step_rates(problem.x0_probs, vocab, schedule);
      const ValueTable table = exact_value_backward(rates, schedule, int(s), problem.reward, problem.alpha);
      double back = 0.0, hjb = 0.0;
      for (int k = 1; k <= steps; ++k) {
        const ad::Array q = rates(k);
        const ad::Array p = transition_matrix(q, rep.dt);
        for (std::size_t x = 0; x < s; ++x) {
          double expect = 0.0, drift = 0.0;
          for (std::size_t y = 0; y < s; ++y) {
            expect += p[x * s + y] * table.h(k, int(y));
            if (y != x) {
              drift += q[x * s + y] * std::expm1((table.value(k, int(y)) - table.value(k, int(x))) / problem.alpha);
            }
          }
          back = std::max(back, std::abs(table.h(k - 1, int(x)) - expect));
          const double dvdt = (table.value(k, int(x)) - table.value(k - 1, int(x))) / rep.dt;
          hjb = std::max(hjb, std::abs(dvdt + problem.alpha * drift));
        }
      }
      rep.backward = back;
      rep.hjb = hjb;
    }
    out.push_back(rep);
  }
  return out;
}

}  // namespace drakes
