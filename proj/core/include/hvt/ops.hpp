#pragma once

#include <span>
#include <vector>

#include "hvt/tensor.hpp"

// Differentiable tensor operations.
//
// Broadcasting is limited to bias-style expansion: in add/sub/mul, one operand's
// shape may be a trailing suffix of the other's (e.g. [B,N,D] + [D] or [B,N,D] + [N,D]).
// Every other shape combination must match exactly.

namespace hvt {

/// [..., M, K] x [K, N] -> [..., M, N], or batched [..., M, K] x [..., K, N] with equal leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x W + b with W: [in, out], b: [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// x^e elementwise, for x >= 0. e == 0 yields a constant.
Tensor pow_scalar(const Tensor& x, double exponent);
/// max(x, floor); the gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& x, double floor);
/// tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);

/// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Maximum along an axis; the gradient flows to the first maximal element.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Index of the first maximum along an axis, as a constant tensor.
Tensor argmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Max-subtracted softmax along an axis.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Normalizes the last axis to zero mean / unit variance, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Scales every last-axis vector to unit L2 norm.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

} // namespace hvt
