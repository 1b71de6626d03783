#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lfa/network.hpp"

namespace lfa {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> first_moment;
  std::vector<BasicTensor<T>> second_moment;

  AdamState() = default;
  AdamState(const std::vector<BasicTensor<T>*>& params, AdamConfig cfg) : config(cfg) {
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    for (const auto* p : params) {
      first_moment.emplace_back(p->shape());
      second_moment.emplace_back(p->shape());
    }
  }
};

// One bias-corrected Adam update of every parameter in place.
template <typename T>
void adam_step(const std::vector<BasicTensor<T>*>& params, const Gradients<T>& grads,
               AdamState<T>& state) {
  if (params.size() != grads.tensors.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = grads.tensors[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (p.shape() != g.shape() || p.shape() != m.shape()) {
      throw std::invalid_argument("adam_step: shape mismatch for parameter " +
                                  std::to_string(i));
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update =
          c.learning_rate * (mk / correction1) / (std::sqrt(vk / correction2) + c.epsilon);
      p[k] = static_cast<T>(p[k] - update);
    }
  }
}

}  // namespace lfa
