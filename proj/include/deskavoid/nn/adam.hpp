#pragma once

#include <cmath>
#include <vector>

#include "deskavoid/nn/network.hpp"

namespace deskavoid::nn {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments per parameter tensor, plus the step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long t = 0;

  AdamState() = default;
  explicit AdamState(const std::vector<Tensor*>& params) {
    for (const Tensor* p : params) {
      m.emplace_back(p->shape);
      v.emplace_back(p->shape);
    }
  }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(const std::vector<Tensor*>& params, const Gradients& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ValidationError("adam_step: parameter/gradient/moment count mismatch");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (p.size() != g.size()) throw ValidationError("adam_step: gradient shape mismatch");
    float* m = state.m[i].data.data();
    float* v = state.v[i].data.data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g.data[k];
      m[k] = static_cast<float>(cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk);
      v[k] = static_cast<float>(cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.data[k] = static_cast<float>(p.data[k] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

/// Convenience: network plus its optimizer state.
struct Trainable {
  Network net;
  AdamState opt;
  AdamConfig cfg;

  Trainable() = default;
  Trainable(Network n, AdamConfig c) : net(std::move(n)), cfg(c) { opt = AdamState(net.parameters()); }

  void step(const Gradients& grads) { adam_step(net.parameters(), grads, opt, cfg); }
};

}  // namespace deskavoid::nn
