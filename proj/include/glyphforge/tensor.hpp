#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "glyphforge/error.hpp"

namespace glyphforge {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

enum class Mode { train, eval };

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename Scalar>
struct TensorNode {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using BackwardFn = std::function<void(const Vector&)>;

    Shape shape;
    Vector values;
    Vector grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    BackwardFn backward_fn;

    Vector& grad_buffer() {
        if (grad.size() == 0) grad = Vector::Zero(values.size());
        return grad;
    }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Suspends graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major n-d array that records the operations producing it so that
/// backward() can propagate gradients to every leaf created with requires_grad.
/// Copies share the underlying node.
template <typename Scalar_>
class Tensor {
public:
    using Scalar = Scalar_;
    using Node = detail::TensorNode<Scalar>;
    using Vector = typename Node::Vector;
    using BackwardFn = typename Node::BackwardFn;

    Tensor() = default;

    Tensor(Shape shape, Vector values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        for (Index extent : shape) {
            if (extent < 1) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                                 std::to_string(values.size()) + " elements");
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const Index n = shape_size(shape);
        return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
    }

    static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
        const Index n = shape_size(shape);
        return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
    }

    static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
        Vector v(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar x : values) v[i++] = x;
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    /// Builds the output of a differentiable op. The backward function receives the
    /// output gradient and accumulates into the inputs' grad buffers; it is dropped
    /// when no input needs gradients or recording is suspended.
    static Tensor make_result(Shape shape, Vector values, std::initializer_list<Tensor> inputs, BackwardFn fn) {
        Tensor out(std::move(shape), std::move(values));
        if (!grad_enabled()) return out;
        bool needs = false;
        for (const Tensor& in : inputs) needs = needs || (in.defined() && in.requires_grad());
        if (!needs) return out;
        out.node_->requires_grad = true;
        for (const Tensor& in : inputs) {
            if (in.defined() && in.requires_grad()) out.node_->parents.push_back(in.node_);
        }
        out.node_->backward_fn = std::move(fn);
        return out;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Index dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
    Index size() const { return node_->values.size(); }

    const Vector& values() const { return node_->values; }
    /// In-place access for optimizers and running statistics; never use on graph interiors.
    Vector& mutable_values() { return node_->values; }
    const Scalar* data() const { return node_->values.data(); }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->parents.empty(); }
    bool has_grad() const { return node_->grad.size() != 0; }

    /// Accumulated gradient; zeros when nothing has flowed here yet.
    Vector grad() const { return has_grad() ? node_->grad : Vector::Zero(size()); }
    Vector& grad_buffer() const { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.resize(0); }

    Scalar item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
        return node_->values[0];
    }

    /// Leaf copy of the values, cut off from the graph.
    Tensor detach() const { return Tensor(shape(), values()); }

    Tensor reshape(Shape shape) const {
        if (shape_size(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
        }
        return make_result(std::move(shape), values(), {*this}, [in = *this](const Vector& g) {
            in.grad_buffer() += g;
        });
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Propagates d(loss)/d(t) to every tensor reachable from `loss` that requires grad.
/// Leaf gradients accumulate across calls; interior gradients are released once used.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
    using Node = typename Tensor<Scalar>::Node;
    if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS yields a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.grad_buffer().array() += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward_fn || node->grad.size() == 0) continue;
        node->backward_fn(node->grad);
        node->grad.resize(0);
    }
}

namespace detail {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "add");
    using Vector = typename Tensor<Scalar>::Vector;
    return Tensor<Scalar>::make_result(a.shape(), a.values() + b.values(), {a, b}, [a, b](const Vector& g) {
        if (a.requires_grad()) a.grad_buffer() += g;
        if (b.requires_grad()) b.grad_buffer() += g;
    });
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "sub");
    using Vector = typename Tensor<Scalar>::Vector;
    return Tensor<Scalar>::make_result(a.shape(), a.values() - b.values(), {a, b}, [a, b](const Vector& g) {
        if (a.requires_grad()) a.grad_buffer() += g;
        if (b.requires_grad()) b.grad_buffer() -= g;
    });
}

/// Elementwise product; shapes must match exactly.
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "mul");
    using Vector = typename Tensor<Scalar>::Vector;
    Vector out = a.values().cwiseProduct(b.values());
    return Tensor<Scalar>::make_result(a.shape(), std::move(out), {a, b}, [a, b](const Vector& g) {
        if (a.requires_grad()) a.grad_buffer() += g.cwiseProduct(b.values());
        if (b.requires_grad()) b.grad_buffer() += g.cwiseProduct(a.values());
    });
}

template <typename Scalar>
Tensor<Scalar> operator*(Scalar c, const Tensor<Scalar>& a) {
    using Vector = typename Tensor<Scalar>::Vector;
    return Tensor<Scalar>::make_result(a.shape(), c * a.values(), {a}, [a, c](const Vector& g) {
        a.grad_buffer() += c * g;
    });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
    using Vector = typename Tensor<Scalar>::Vector;
    Vector out(1);
    out[0] = a.values().sum();
    return Tensor<Scalar>::make_result({1}, std::move(out), {a}, [a](const Vector& g) {
        a.grad_buffer().array() += g[0];
    });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
    return (Scalar(1) / static_cast<Scalar>(a.size())) * sum(a);
}

}  // namespace glyphforge
