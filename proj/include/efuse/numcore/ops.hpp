#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "efuse/numcore/graph.hpp"

namespace efuse::nc {

// Differentiable ops. Unless stated otherwise, inputs are read as matrices
// (see Tensor::rows/cols) and row-wise ops act along the last dimension.

Var matmul(Var a, Var b);
/// Affine map x * w + b with b a row of length w.cols().
Var linear(Var x, Var w, Var b);
Var transpose(Var a);

// Elementwise binary ops. `b` is broadcast when it is a scalar (one element),
// a row vector matching a.cols(), or a column vector [a.rows(), 1].
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
/// log(1 + exp(a)), evaluated without overflow.
Var softplus(Var a);
/// Exact GELU: x * Phi(x).
Var gelu(Var a);

Var sum(Var a);
Var mean(Var a);

Var softmax(Var a);
/// Row-wise log-sum-exp, shape [rows, 1].
Var logsumexp(Var a);

inline constexpr double kLayerNormEps = 1e-12;
/// Row-wise layer normalization with affine gamma/beta of length cols().
Var layer_norm(Var x, Var gamma, Var beta);

/// Row-wise L2 normalization. A zero row is an error.
Var l2_normalize(Var a);

/// Embedding lookup: rows of `table` selected by ids -> [ids.size(), cols].
Var gather(Var table, std::span<const std::size_t> ids);
/// One element per row: out[r] = a[r, index[r]] -> [rows, 1].
Var pick(Var a, std::span<const std::size_t> index);

/// axis 0 stacks rows, axis 1 stacks columns.
Var concat(const std::vector<Var>& parts, int axis);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);

/// Entries where mask is nonzero are replaced by `value` (no gradient flows
/// through them). mask has one entry per element.
Var masked_fill(Var a, std::span<const std::uint8_t> mask, double value);

/// Multi-head scaled dot-product attention over a padded batch.
///
/// q, k, v are [n_seq * seq_len, d] with sequences stored contiguously.
/// key_mask has n_seq * seq_len entries; keys with mask 0 get -inf logits.
/// Every sequence must have at least one unmasked key.
Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> key_mask, std::size_t n_seq,
              std::size_t seq_len, std::size_t heads);

}  // namespace efuse::nc
