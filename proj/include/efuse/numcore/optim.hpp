#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "efuse/numcore/tensor.hpp"

namespace efuse::nc {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW moments and step counter. Parameters named in `no_decay` are
/// updated without weight decay.
struct OptimState {
  AdamWConfig config;
  std::int64_t step = 0;
  ParamMap first_moment;
  ParamMap second_moment;
  std::set<std::string> no_decay;
};

/// One AdamW step with bias-corrected moments and decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adamw_step(ParamMap& params, const ParamMap& grads, OptimState& state, double lr);

/// Linear warmup to `peak`, then half-cosine decay to zero at `total`.
double cosine_lr(std::int64_t step, std::int64_t warmup, std::int64_t total, double peak);

/// Rescales all gradients jointly so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamMap& grads, double max_norm);

}  // namespace efuse::nc
