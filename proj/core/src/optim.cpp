#include "drakes/optim.hpp"

#include <cmath>

namespace drakes {

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape, 0.0);
    v_.emplace_back(p.value.shape, 0.0);
  }
}

void Adam::step(ParameterSet& params, const std::vector<ad::Array>& grads) {
  if (grads.size() != params.size()) throw Error("Adam::step: gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.values;
    const auto& g = grads[i].values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] -= config_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

std::vector<ad::Array> collect_gradients(const ad::Gradients& grads, const BoundParams& bound) {
  std::vector<ad::Array> out;
  out.reserve(bound.size());
  for (const auto& v : bound) out.push_back(grads.of(v));
  return out;
}

void accumulate_gradients(std::vector<ad::Array>& into, const std::vector<ad::Array>& more) {
  if (into.empty()) {
    into = more;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i)
    for (std::size_t j = 0; j < into[i].size(); ++j) into[i][j] += more[i][j];
}

double gradient_norm(const std::vector<ad::Array>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.values) s += v * v;
  return std::sqrt(s);
}

void scale_gradients(std::vector<ad::Array>& grads, double factor) {
  for (auto& g : grads)
    for (double& v : g.values) v *= factor;
}

}  // namespace drakes
