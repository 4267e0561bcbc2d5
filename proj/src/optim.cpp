#include "dendseg/optim.hpp"

#include <cmath>

namespace dendseg {

template <typename Real>
AdamState<Real>::AdamState(AdamHyper h, std::span<const Tensor<Real>> params) : hyper(h) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
        m.emplace_back(p.numel(), Real(0));
        v.emplace_back(p.numel(), Real(0));
    }
}

template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        fail(ErrorCode::ShapeMismatch, "adam state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                                           std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) fail(ErrorCode::MissingGrad, "parameter " + std::to_string(i) + " has no gradient");
        if (state.m[i].size() != params[i].numel())
            fail(ErrorCode::ShapeMismatch, "adam moment size differs from parameter " + std::to_string(i));
    }

    state.step += 1;
    const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const auto lr = static_cast<Real>(state.hyper.learning_rate);
    const auto eps = static_cast<Real>(state.hyper.epsilon);
    const auto rb1 = static_cast<Real>(b1), rb2 = static_cast<Real>(b2);
    const auto rc1 = static_cast<Real>(c1), rc2 = static_cast<Real>(c2);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].mutable_values();
        auto g = params[i].mutable_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = rb1 * m[j] + (Real(1) - rb1) * g[j];
            v[j] = rb2 * v[j] + (Real(1) - rb2) * g[j] * g[j];
            const Real m_hat = m[j] / rc1;
            const Real v_hat = v[j] / rc2;
            theta[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        params[i].zero_grad();
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&);

} // namespace dendseg
