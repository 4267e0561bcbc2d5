#pragma once

#include "dendseg/error.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dendseg {

/// Tensor shape. Feature maps are N x C x D x H x W (3D) or N x C x H x W (2D).
using Shape = std::vector<int>;

[[nodiscard]] std::size_t shape_numel(const Shape& shape) noexcept;
[[nodiscard]] std::string shape_string(const Shape& shape);

/// 64-byte aligned storage. Vectorized reductions peel unaligned heads, so
/// a fixed alignment keeps results bitwise reproducible across runs.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};
    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    [[nodiscard]] T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename Real>
using Buffer = std::vector<Real, AlignedAllocator<Real>>;

template <typename Real>
struct TensorNode {
    Shape shape;
    Buffer<Real> values;
    Buffer<Real> grad; // empty until a backward pass reaches the node
    bool requires_grad = false;
    std::uint64_t tape_id = 0; // id of the tape that produced the node, 0 for leaves
};

/// Shared handle to a node: copies alias the same storage, like every
/// autograd tensor type. Use clone() for an independent copy.
template <typename Real>
class Tensor {
public:
    using NodePtr = std::shared_ptr<TensorNode<Real>>;

    Tensor() = default;
    Tensor(Shape shape, Buffer<Real> values, bool requires_grad = false);
    Tensor(Shape shape, const std::vector<Real>& values, bool requires_grad = false)
        : Tensor(std::move(shape), Buffer<Real>(values.begin(), values.end()), requires_grad) {}
    Tensor(Shape shape, std::initializer_list<Real> values, bool requires_grad = false)
        : Tensor(std::move(shape), Buffer<Real>(values), requires_grad) {}
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    [[nodiscard]] static Tensor zeros(Shape shape, bool requires_grad = false);
    [[nodiscard]] static Tensor filled(Shape shape, Real value);
    [[nodiscard]] static Tensor scalar(Real value) { return filled({}, value); }

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const noexcept { return node_->shape; }
    [[nodiscard]] int rank() const noexcept { return static_cast<int>(node_->shape.size()); }
    [[nodiscard]] int dim(int i) const noexcept { return node_->shape[static_cast<std::size_t>(i)]; }
    [[nodiscard]] std::size_t numel() const noexcept { return node_->values.size(); }

    [[nodiscard]] std::span<const Real> values() const noexcept { return node_->values; }
    [[nodiscard]] std::span<Real> mutable_values() noexcept { return node_->values; }
    [[nodiscard]] Real item() const;

    [[nodiscard]] bool requires_grad() const noexcept { return node_->requires_grad; }
    void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }

    [[nodiscard]] bool has_grad() const noexcept { return !node_->grad.empty() || node_->values.empty(); }
    [[nodiscard]] std::span<const Real> grad() const noexcept { return node_->grad; }
    [[nodiscard]] std::span<Real> mutable_grad() noexcept { return node_->grad; }
    /// Keeps the buffer allocated and sets it to zero.
    void zero_grad() noexcept;
    /// Drops the buffer entirely.
    void clear_grad() noexcept { node_->grad.clear(); }

    [[nodiscard]] Tensor clone() const;
    [[nodiscard]] const NodePtr& node() const noexcept { return node_; }

private:
    NodePtr node_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Ordered record of the differentiable operations executed while the tape is
/// active on the current thread. Records are appended in execution order, so
/// every record's inputs were produced by earlier records or are leaves.
template <typename Real>
class Tape {
public:
    using NodePtr = typename Tensor<Real>::NodePtr;
    using BackwardFn = std::function<void()>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] std::uint64_t id() const noexcept { return id_; }
    [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }

    void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn);

    /// Seeds d(loss)/d(loss) = 1 and replays the records in reverse, then clears.
    void backward(const Tensor<Real>& loss);

    /// Drops all records; tensors produced so far become detached.
    void clear();

private:
    struct Record {
        std::vector<NodePtr> inputs;
        NodePtr output;
        BackwardFn fn;
    };
    std::vector<Record> records_;
    std::uint64_t id_;
};

/// Installs a tape (or nullptr, to suspend recording) as the active tape of the
/// calling thread for the lifetime of the scope.
template <typename Real>
class TapeScope {
public:
    explicit TapeScope(Tape<Real>* tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<Real>* previous_;
};

template <typename Real>
[[nodiscard]] Tape<Real>* active_tape() noexcept;

/// Suspends recording on this thread (inference).
template <typename Real>
class NoGradScope : public TapeScope<Real> {
public:
    NoGradScope() : TapeScope<Real>(nullptr) {}
};

/// Backward pass on the active tape.
template <typename Real>
void backward(const Tensor<Real>& loss);

namespace detail {

/// Gradient buffer of a node, allocated as zeros on first use.
template <typename Real>
std::span<Real> grad_of(TensorNode<Real>& node);

/// Active tape when any input requires gradients, else nullptr.
template <typename Real>
Tape<Real>* recording_tape(std::initializer_list<const Tensor<Real>*> inputs) noexcept;

template <typename Real>
Tensor<Real> make_output(Shape shape, Buffer<Real> values, Tape<Real>* tape);

/// Throws NonFinite when the build asks for per-op finiteness checks.
template <typename Real>
void check_finite(std::span<const Real> values, const char* op);

} // namespace detail

} // namespace dendseg
