#pragma once

#include "dendseg/tensor.hpp"

#include <array>

namespace dendseg {

using Int2 = std::array<int, 2>;
using Int3 = std::array<int, 3>;

// Differentiable layer primitives. Every op records itself on the active tape
// of the calling thread when any input requires gradients; otherwise it is a
// plain forward computation. Spatial triples are ordered (depth, height, width).

/// Cross-correlation. input (N, Ci, D, H, W), weight (Co, Ci, kD, kH, kW),
/// bias (Co) or undefined.
template <typename Real>
[[nodiscard]] Tensor<Real> conv3d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias,
                                  Int3 stride = {1, 1, 1}, Int3 padding = {0, 0, 0});

/// input (N, Ci, H, W), weight (Co, Ci, kH, kW). Runs the same kernel as
/// conv3d with a unit depth axis.
template <typename Real>
[[nodiscard]] Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias,
                                  Int2 stride = {1, 1}, Int2 padding = {0, 0});

/// Window maximum; the gradient goes to the first (lowest flat index) maximum.
template <typename Real>
[[nodiscard]] Tensor<Real> max_pool3d(const Tensor<Real>& input, Int3 kernel, Int3 stride);
template <typename Real>
[[nodiscard]] Tensor<Real> max_pool2d(const Tensor<Real>& input, Int2 kernel, Int2 stride);

/// Non-overlapping transposed convolution (kernel == stride).
/// input (N, Ci, D, H, W), weight (Ci, Co, sD, sH, sW); output spatial dims
/// are input dims times the stride.
template <typename Real>
[[nodiscard]] Tensor<Real> conv_transpose3d(const Tensor<Real>& input, const Tensor<Real>& weight, Int3 stride);
template <typename Real>
[[nodiscard]] Tensor<Real> conv_transpose2d(const Tensor<Real>& input, const Tensor<Real>& weight, Int2 stride);

/// Averages a (Ci, Co, kD, kH, kW) kernel over its depth taps -> (Ci, Co, 1, kH, kW).
template <typename Real>
[[nodiscard]] Tensor<Real> mean_depth_taps(const Tensor<Real>& weight);

/// Concatenates along axis 1; a's channels come first.
template <typename Real>
[[nodiscard]] Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
[[nodiscard]] Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
[[nodiscard]] Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
[[nodiscard]] Tensor<Real> relu(const Tensor<Real>& x);
template <typename Real>
[[nodiscard]] Tensor<Real> sigmoid(const Tensor<Real>& x);
template <typename Real>
[[nodiscard]] Tensor<Real> sum(const Tensor<Real>& x);

/// Mean binary cross-entropy on logits, evaluated as
/// max(z, 0) - z t + log1p(exp(-|z|)). Targets must be 0 or 1.
template <typename Real>
[[nodiscard]] Tensor<Real> bce_with_logits(const Tensor<Real>& logits, const Tensor<Real>& targets);

} // namespace dendseg
