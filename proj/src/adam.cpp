#include "nplab/trainer.hpp"

#include <cmath>

namespace nplab {

AdamState AdamState::zeros_like(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters, " +
                                std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                                " moment buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].numel();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ad::ShapeError("adam_step: parameter " + std::to_string(i) + " has " + std::to_string(n) +
                           " values, gradient " + std::to_string(grads[i].size()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

}  // namespace nplab
