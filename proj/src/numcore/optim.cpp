#include "efuse/numcore/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace efuse::nc {

void adamw_step(ParamMap& params, const ParamMap& grads, OptimState& state, double lr) {
  if (lr < 0.0) throw std::invalid_argument("adamw_step: negative learning rate");
  const AdamWConfig& c = state.config;
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("adamw_step: gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw ShapeError("adamw_step: parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                       " but gradient has " + shape_str(g.shape()));
    }
    if (!g.all_finite()) throw NonFiniteError("adamw_step: non-finite gradient for '" + name + "'");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, g.shape(), 0.0);
    auto [v_it, v_new] = state.second_moment.try_emplace(name, g.shape(), 0.0);
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    const double wd = state.no_decay.count(name) ? 0.0 : c.weight_decay;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + wd * p[i]);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t warmup, std::int64_t total, double peak) {
  step = std::clamp<std::int64_t>(step, 0, total);
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(ParamMap& grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_l2_norm(grads);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& x : g.data()) x *= f;
    }
  }
  return norm;
}

}  // namespace efuse::nc
