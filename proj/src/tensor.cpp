#include "dendseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace dendseg {

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d < 0 ? 0 : d);
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Buffer<Real> values, bool requires_grad)
    : node_(std::make_shared<TensorNode<Real>>()) {
    if (values.size() != shape_numel(shape))
        fail(ErrorCode::ShapeMismatch, "tensor of shape " + shape_string(shape) + " given " +
                                           std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<Real>(n, Real(0)), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::filled(Shape shape, Real value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<Real>(n, value));
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (numel() != 1) fail(ErrorCode::NotScalar, "item() on tensor of shape " + shape_string(shape()));
    return node_->values[0];
}

template <typename Real>
void Tensor<Real>::zero_grad() noexcept {
    std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
    Tensor t(node_->shape, node_->values, node_->requires_grad);
    t.node_->grad = node_->grad;
    return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {

std::atomic<std::uint64_t> g_next_tape_id{1};

template <typename Real>
Tape<Real>*& current_tape() noexcept {
    thread_local Tape<Real>* tape = nullptr;
    return tape;
}

} // namespace

template <typename Real>
Tape<Real>::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

template <typename Real>
void Tape<Real>::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
    output->tape_id = id_;
    output->requires_grad = true;
    records_.push_back({std::move(inputs), std::move(output), std::move(fn)});
}

template <typename Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
    if (!loss.defined()) fail(ErrorCode::DetachedTensor, "backward on an undefined tensor");
    if (loss.numel() != 1) fail(ErrorCode::NotScalar, "backward needs a scalar, got " + shape_string(loss.shape()));
    if (loss.node()->tape_id != id_) fail(ErrorCode::DetachedTensor, "loss was not produced on this tape");
    if (!std::isfinite(static_cast<double>(loss.item()))) fail(ErrorCode::NonFinite, "loss is not finite");

    auto g = detail::grad_of(*loss.node());
    g[0] = Real(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output->grad.empty()) continue; // not on a path to the loss
        it->fn();
    }
    clear();
}

template <typename Real>
void Tape<Real>::clear() {
    for (auto& r : records_) {
        r.output->grad.clear();
        r.output->grad.shrink_to_fit();
        r.output->tape_id = 0;
    }
    records_.clear();
    id_ = g_next_tape_id.fetch_add(1);
}

template <typename Real>
TapeScope<Real>::TapeScope(Tape<Real>* tape) : previous_(current_tape<Real>()) {
    current_tape<Real>() = tape;
}

template <typename Real>
TapeScope<Real>::~TapeScope() {
    current_tape<Real>() = previous_;
}

template <typename Real>
Tape<Real>* active_tape() noexcept {
    return current_tape<Real>();
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
    Tape<Real>* tape = current_tape<Real>();
    if (!tape) fail(ErrorCode::DetachedTensor, "no active tape on this thread");
    tape->backward(loss);
}

namespace detail {

template <typename Real>
std::span<Real> grad_of(TensorNode<Real>& node) {
    if (node.grad.size() != node.values.size()) node.grad.assign(node.values.size(), Real(0));
    return node.grad;
}

template <typename Real>
Tape<Real>* recording_tape(std::initializer_list<const Tensor<Real>*> inputs) noexcept {
    Tape<Real>* tape = current_tape<Real>();
    if (!tape) return nullptr;
    for (const Tensor<Real>* t : inputs)
        if (t && t->defined() && t->requires_grad()) return tape;
    return nullptr;
}

template <typename Real>
Tensor<Real> make_output(Shape shape, Buffer<Real> values, Tape<Real>*) {
    return Tensor<Real>(std::move(shape), std::move(values));
}

template <typename Real>
void check_finite([[maybe_unused]] std::span<const Real> values, [[maybe_unused]] const char* op) {
#ifdef DENDSEG_CHECK_FINITE
    for (Real v : values)
        if (!std::isfinite(static_cast<double>(v))) fail(ErrorCode::NonFinite, std::string(op) + " produced NaN/Inf");
#endif
}

} // namespace detail

#define DENDSEG_INSTANTIATE(Real)                                                                      \
    template class Tensor<Real>;                                                                       \
    template class Tape<Real>;                                                                         \
    template class TapeScope<Real>;                                                                    \
    template Tape<Real>* active_tape<Real>() noexcept;                                                 \
    template void backward<Real>(const Tensor<Real>&);                                                 \
    template std::span<Real> detail::grad_of<Real>(TensorNode<Real>&);                                 \
    template Tape<Real>* detail::recording_tape<Real>(std::initializer_list<const Tensor<Real>*>) noexcept; \
    template Tensor<Real> detail::make_output<Real>(Shape, Buffer<Real>, Tape<Real>*);            \
    template void detail::check_finite<Real>(std::span<const Real>, const char*);

DENDSEG_INSTANTIATE(float)
DENDSEG_INSTANTIATE(double)

#undef DENDSEG_INSTANTIATE

} // namespace dendseg
