#include "canet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace canet {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

namespace {
void validate_shape(const Shape& shape) {
    for (std::size_t extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                             " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return impl_->shape[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
    if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return impl_->grad;
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl_->data, requires_grad); }

Graph Graph::trace(const Tensor& root) {
    Graph graph;
    if (!root.defined()) return graph;
    // Iterative post-order DFS; input order is fixed, so the ordering is deterministic.
    std::unordered_set<const TensorImpl*> visited;
    std::vector<std::pair<TensorImplPtr, std::size_t>> stack;
    stack.emplace_back(root.impl(), 0);
    visited.insert(root.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorImplPtr child = node->inputs[next++];
            if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
        } else {
            graph.nodes_.push_back(node);
            stack.pop_back();
        }
    }
    return graph;
}

void backward(const Tensor& loss) { backward(loss, Graph::trace(loss)); }

void backward(const Tensor& loss, const Graph& graph) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
    }
    if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any tensor requiring grad");
    if (graph.nodes().empty() || graph.nodes().back() != loss.impl()) {
        throw ContractError("backward: graph was not traced from this loss");
    }
    loss.impl()->grad_buffer()[0] += 1.0;
    const auto& nodes = graph.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        const TensorImpl& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

void require_finite(std::span<const double> values, const std::string& what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericalError("non-finite value produced by " + what);
    }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
    require_finite(data, op);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->op = op;
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        impl->requires_grad = true;
        impl->inputs.reserve(inputs.size());
        for (const Tensor& in : inputs) impl->inputs.push_back(in.impl());
        impl->backward = std::move(backward);
    }
    return Tensor(std::move(impl));
}

}  // namespace canet
