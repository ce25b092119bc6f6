#pragma once

#include <cstdint>
#include <vector>

#include "pkml/tensor.hpp"

namespace pkml::ad {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. step() consumes the accumulated gradients and
// zeroes them, so callers simply do: forward, backward, step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  // Throws ContractError if any parameter has never received a gradient.
  void step();

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Checkpoint access; moment buffers are parallel to params().
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::int64_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  AdamConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

}  // namespace pkml::ad
