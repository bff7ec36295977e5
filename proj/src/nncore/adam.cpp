#include "pat/adam.hpp"

#include <cmath>

#include "pat/errors.hpp"

namespace pat::nn {

AdamState::AdamState(const ParamSet& params, AdamConfig config) : config_(config) {
  for (const auto& e : params) {
    m_.emplace_back(e.value.shape());
    v_.emplace_back(e.value.shape());
  }
}

void AdamState::step(ParamSet& params) {
  if (params.size() != m_.size()) throw DimensionError("Adam state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.at(i);
    if (e.grad.shape() != m_[i].shape()) {
      throw DimensionError("Adam moment shape differs for '" + e.name + "'");
    }
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  // Bias corrections folded into two scalars; the loop is branch-free so it
  // vectorizes.
  const double step = config_.lr / c1;
  const double inv_c2 = 1.0 / c2;
  const double eps = config_.eps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params.at(i);
    double* __restrict w = e.value.data();
    double* __restrict g = e.grad.data();
    double* __restrict m = m_[i].data();
    double* __restrict v = v_[i].data();
    const std::size_t n = e.value.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g[k];
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
      g[k] = 0.0;
    }
  }
}

}  // namespace pat::nn
