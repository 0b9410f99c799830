#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "knnmts/tensor.hpp"

namespace knnmts {

// Elementwise binary ops broadcast when one operand's shape is a trailing
// suffix of the other's (bias-style), or when one operand has one element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);

/// Elementwise map with a caller-supplied derivative df(x, f(x)).
Tensor map_unary(const Tensor& x, const std::function<double(double)>& f,
                 const std::function<double(double, double)>& df);

/// Matrix product over the last two axes. Leading (batch) axes must match,
/// or one operand is rank 2 and is broadcast across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Reorders axes: result axis i is input axis `axes[i]`.
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Softmax along `axis`, with max subtraction.
Tensor softmax(const Tensor& x, int axis = -1);
/// Normalizes each row over the last axis (biased variance, eps inside sqrt).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums out one axis (the axis is removed from the shape).
Tensor sum_axis(const Tensor& x, int axis);

}  // namespace knnmts
