#pragma once

#include <cstdint>
#include <vector>

#include "pat/param_set.hpp"

namespace pat::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig config);

  // Applies one update from params' grads, then zeroes them. A non-finite
  // gradient raises NumericError naming the parameter, before anything moves.
  void step(ParamSet& params);

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return t_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace pat::nn
