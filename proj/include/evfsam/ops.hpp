#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "evfsam/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active
// tape when any input requires grad. Shapes must agree exactly; the only
// broadcasting ops are the explicitly named ones (add_bias, add_mask).
namespace evfsam {

// [m,k]x[k,n] -> [m,n], or batched [b,m,k]x[b,k,n] -> [b,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);
// x[..., n] + bias[n], bias broadcast over every leading index.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[..., t, s] + mask[t, s]; the mask is a constant (never differentiated).
Tensor add_mask(const Tensor& x, const Tensor& mask);

Tensor relu(const Tensor& x);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Numerically stable softmax along `axis` (max subtraction).
Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis using the biased variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over axis 0 of a rank-2 tensor: [n,d] -> [d].
Tensor mean_rows(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// out.flat[i] = x.flat[indices[i]]; gradient is a scatter-add.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape);
// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
// Row i of a rank-2 tensor as a rank-1 tensor.
Tensor row(const Tensor& x, std::size_t i);
// Concatenation along axis 0 (rank >= 1, trailing dims equal).
Tensor concat_rows(const std::vector<Tensor>& parts);
// Concatenation of rank-1 tensors.
Tensor concat_vectors(const std::vector<Tensor>& parts);

// x[n, k] * w[k, m] + b[m]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace evfsam
