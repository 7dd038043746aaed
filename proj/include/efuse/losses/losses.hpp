#pragma once

#include <cstddef>
#include <span>

#include "efuse/numcore/graph.hpp"

namespace efuse::loss {

/// z_rs = +1 on the diagonal, -1 elsewhere.
nc::Tensor diagonal_labels(std::size_t batch);

/// (1/|B|) sum_rs log(1 + exp(z_rs (-t e1_r . e2_s + b))) with t = exp(log_t).
/// Rows of e1 and e2 must have unit norm (within 1e-6).
nc::Var siglip_mm_loss(nc::Var e1, nc::Var e2, const nc::Tensor& labels, nc::Var log_t, nc::Var b);

/// Sum of cross-entropies of `logits` rows against `labels`, divided by
/// batch_size (not by the number of rows). No rows gives 0.
nc::Var mmm_loss(nc::Graph& g, nc::Var logits, std::span<const std::size_t> labels, std::size_t batch_size);

nc::Var total_loss(nc::Var contrastive, nc::Var mmm, double alpha);

}  // namespace efuse::loss
