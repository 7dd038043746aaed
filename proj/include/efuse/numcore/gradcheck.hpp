#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "efuse/numcore/ops.hpp"

namespace efuse::nc {

/// Builds the op under test from its leaf inputs.
using OpBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Central finite-difference gradient of `f` at `inputs`. `f` is evaluated
/// forward only, so this is independent of every backward rule.
std::vector<Tensor> finite_difference_grads(const std::function<double(const std::vector<Tensor>&)>& f,
                                            std::vector<Tensor> inputs, double h);

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double floor = 1e-8);

/// Checks one op instance: projects its output onto fixed random weights and
/// compares reverse-mode gradients against central differences.
double check_op_gradient(const OpBuilder& build, const std::vector<Tensor>& inputs, std::uint64_t weight_seed,
                         double h = 1e-5);

struct GradCheckResult {
  std::string op;
  int instances = 0;
  double max_rel_error = 0.0;
};

/// Randomized gradient check of every differentiable numcore op.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, int instances = 20, double h = 1e-5);

}  // namespace efuse::nc
