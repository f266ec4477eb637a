#pragma once

#include <vector>

#include "drakes/autodiff.hpp"
#include "drakes/denoiser.hpp"

namespace drakes {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation; `step` descends along the supplied gradients.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);
  void step(ParameterSet& params, const std::vector<ad::Array>& grads);
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<ad::Array> m_, v_;
  long t_ = 0;
};

// Gradients aligned with the parameter order of `bound`, zero where absent.
std::vector<ad::Array> collect_gradients(const ad::Gradients& grads, const BoundParams& bound);
void accumulate_gradients(std::vector<ad::Array>& into, const std::vector<ad::Array>& more);
double gradient_norm(const std::vector<ad::Array>& grads);
void scale_gradients(std::vector<ad::Array>& grads, double factor);

}  // namespace drakes
