#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ckd/autodiff/tape.hpp"

// Differentiable primitives. All tensors are treated as matrices (rows x cols,
// see Shape::rows/cols). There is no implicit broadcasting except add_bias,
// which adds one row vector to every row. Shape violations throw ShapeError
// naming the op and the offending dimensions.

namespace ckd::ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// Adds bias (shape [cols] or [1, cols]) to every row of a.
Var add_bias(Var a, Var bias);
Var scale(Var a, double s);
/// Exact erf-based GELU.
Var gelu(Var a);
/// Row-wise softmax.
Var softmax(Var a);
Var log(Var a);
/// Sum of all elements, as a scalar.
Var sum(Var a);
/// out[r] = a[index[r]]; rows of a may repeat. Backward scatter-adds.
Var select_rows(Var a, std::span<const std::uint32_t> index);
/// Stack a on top of b; column counts must agree.
Var concat_rows(Var a, Var b);
/// Replace entries where mask is nonzero with value; no gradient flows there.
Var mask_fill(Var a, std::span<const std::uint8_t> mask, double value);
/// Row-wise layer normalisation with affine gamma/beta of shape [cols].
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Causal multi-head self-attention over packed q|k|v rows.
/// qkv is [n_seq * seq_len, 3 * d]; result is [n_seq * seq_len, d].
Var causal_attention(Var qkv, std::size_t n_seq, std::size_t seq_len, std::size_t n_heads);

/// Scalar node whose value and input-gradient were computed analytically
/// elsewhere (used by the loss family). grad has the shape of input.
Var attach_scalar(Var input, double value, Tensor grad);

}  // namespace ckd::ad
