#pragma once

#include "dendseg/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace dendseg {

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Per-parameter first/second moments; moments[i] pairs with params[i].
template <typename Real>
struct AdamState {
    AdamHyper hyper;
    std::int64_t step = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;

    AdamState() = default;
    AdamState(AdamHyper h, std::span<const Tensor<Real>> params);
};

/// Bias-corrected Adam update; increments the step counter and zeroes grads.
/// Throws MissingGrad when a parameter has no gradient buffer.
template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state);

} // namespace dendseg
