#pragma once

#include <vector>

#include "stylesiam/graph.hpp"
#include "stylesiam/tensor.hpp"

namespace stylesiam::ops {

enum class BnMode { train, eval };

// Layer primitives. conv2d and maxpool2 accept [C,H,W] or a batched
// [B,C,H,W]; reductions run in a fixed sequential order so repeated forward
// passes are bitwise identical.

TensorPtr conv2d(Graph& g, const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, int stride = 1, int padding = 0);

TensorPtr maxpool2(Graph& g, const TensorPtr& input);

// Normalizes channel dim 1 over batch and spatial dims. Train mode uses
// biased batch variance and folds it into the running stats with the given
// momentum; eval mode reads the running stats. Train mode needs batch >= 2.
TensorPtr batchnorm(Graph& g, const TensorPtr& input, const TensorPtr& gamma,
                    const TensorPtr& beta, const TensorPtr& running_mean,
                    const TensorPtr& running_var, BnMode mode, float eps = 1e-5f,
                    float momentum = 0.1f);

// features [C,m] -> [C,C]; entry (i,j) is the inner product of rows i and j.
// The upper triangle is computed once and mirrored, so the output is
// bitwise symmetric.
TensorPtr gram_matrix(Graph& g, const TensorPtr& features);

TensorPtr dense(Graph& g, const TensorPtr& input, const TensorPtr& weight,
                const TensorPtr& bias);

TensorPtr relu(Graph& g, const TensorPtr& input);

// Shape and arithmetic plumbing for composing losses.

TensorPtr reshape(Graph& g, const TensorPtr& input, std::vector<int> new_shape);
TensorPtr select_row(Graph& g, const TensorPtr& input, int row);  // [B,rest] -> [rest]
TensorPtr stack_rows(Graph& g, const std::vector<TensorPtr>& rows);  // B x [rest] -> [B,rest]

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Graph& g, const TensorPtr& x, float c);
TensorPtr add_const(Graph& g, const TensorPtr& x, float c);
TensorPtr sum_squares(Graph& g, const TensorPtr& x);  // -> scalar
TensorPtr sqrt_stable(Graph& g, const TensorPtr& x, float stabilizer = 1e-12f);

}  // namespace stylesiam::ops
