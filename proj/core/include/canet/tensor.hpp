#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace canet {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

/// Propagates `out.grad` into the gradient buffers of the recorded inputs.
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<TensorImplPtr> inputs;
    BackwardFn backward;
    const char* op = "leaf";

    /// Gradient buffer, allocated (zero-filled) on first use.
    std::vector<double>& grad_buffer();
    bool is_leaf() const { return inputs.empty(); }
};

/// Dense row-major double tensor. Copies share storage (handle semantics), so
/// a parameter handed to an op and to the optimizer is the same object.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    /// Writable view; only meaningful for leaves (parameters, buffers, inputs).
    std::span<double> mutable_data() { return impl_->data; }
    double item() const;
    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient values; zeros of matching size if nothing was accumulated.
    std::vector<double> grad() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Copy of the values with no graph history.
    Tensor detach() const;
    Tensor clone(bool requires_grad = false) const;

    const TensorImplPtr& impl() const { return impl_; }
    const char* op() const { return impl_->op; }

private:
    TensorImplPtr impl_;
};

/// Topologically ordered record of the operations reachable from a root.
class Graph {
public:
    static Graph trace(const Tensor& root);

    /// Inputs precede the nodes that consume them; the root is last.
    const std::vector<TensorImplPtr>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<TensorImplPtr> nodes_;
};

/// Reverse-mode accumulation from a scalar loss into every reachable tensor
/// that requires a gradient. Repeated calls accumulate.
void backward(const Tensor& loss);
void backward(const Tensor& loss, const Graph& graph);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Builds an op result. Records `backward` only when grad mode is on and at
/// least one input requires a gradient. Throws NumericalError on NaN/Inf.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

void require_finite(std::span<const double> values, const std::string& what);

}  // namespace canet
