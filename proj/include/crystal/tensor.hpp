#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crystal/errors.hpp"

namespace crystal {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool leaf = true;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major tensor of 64-bit reals. Copying a Tensor copies the handle,
// not the storage; two copies alias the same values and gradient.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>()) {
        for (int e : shape) {
            if (e <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str(shape));
        }
        d_->shape = std::move(shape);
        d_->value.assign(static_cast<size_t>(numel(d_->shape)), fill);
        d_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>()) {
        if (numel(shape) != static_cast<int64_t>(values.size())) {
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        d_->shape = std::move(shape);
        d_->value = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    bool defined() const { return d_ != nullptr; }

    const Shape& shape() const { return d_->shape; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(d_->value.size()); }

    // 2-D conveniences; most of the model works on [rows x cols] matrices.
    int rows() const { return d_->shape[0]; }
    int cols() const { return d_->shape[1]; }

    double* data() { return d_->value.data(); }
    const double* data() const { return d_->value.data(); }
    std::vector<double>& values() { return d_->value; }
    const std::vector<double>& values() const { return d_->value; }

    double item() const {
        if (size() != 1) throw ContractViolation("item() requires a scalar tensor, got " + shape_str(shape()));
        return d_->value[0];
    }

    double& at(int i) { return d_->value[static_cast<size_t>(i)]; }
    double at(int i) const { return d_->value[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return d_->value[static_cast<size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return d_->value[static_cast<size_t>(i) * cols() + j]; }

    bool requires_grad() const { return d_->requires_grad; }
    bool is_leaf() const { return d_->leaf; }

    void set_requires_grad(bool on) {
        if (!d_->leaf) throw ContractViolation("requires_grad can only be toggled on leaf tensors");
        d_->requires_grad = on;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<double>& grad() {
        d_->ensure_grad();
        return d_->grad;
    }
    const std::vector<double>& grad() const {
        if (d_->grad.empty()) throw ContractViolation("gradient not populated; run backward first");
        return d_->grad;
    }
    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
    }

    // Same values, cut off from the recorded graph.
    Tensor detach() const {
        Tensor out(d_->shape, d_->value);
        return out;
    }

    const std::shared_ptr<detail::TensorData>& node() const { return d_; }

private:
    friend class Graph;
    friend Tensor make_interior(Shape shape);

    std::shared_ptr<detail::TensorData> d_;
};

// Result tensor of a recorded operation.
inline Tensor make_interior(Shape shape) {
    Tensor t(std::move(shape));
    t.d_->leaf = false;
    t.d_->requires_grad = true;
    return t;
}

// Record of one forward pass: operations append themselves in execution
// order, which is topological by construction. backward() replays the list
// in reverse exactly once per call. Destroying the graph frees the closures
// and every interior tensor they keep alive.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Activates a graph for the current thread while in scope.
    class Scope {
    public:
        explicit Scope(Graph& g) : prev_(active_) { active_ = &g; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Graph* prev_;
    };

    // Suspends recording (forward-only evaluation inside a recorded pass).
    class Pause {
    public:
        Pause() : prev_(active_) { active_ = nullptr; }
        ~Pause() { active_ = prev_; }
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

    private:
        Graph* prev_;
    };

    static Graph* active() { return active_; }
    static bool recording() { return active_ != nullptr; }

    void push(std::shared_ptr<detail::TensorData> out, std::function<void()> backward_step) {
        nodes_.push_back(NodeRecord{std::move(out), std::move(backward_step)});
    }

    size_t node_count() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates through every node in reverse
    // order. Interior gradients are reset per call; leaf gradients accumulate
    // across calls until zeroed by the caller.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1) {
            throw ContractViolation("backward requires a scalar loss");
        }
        bool on_graph = false;
        for (auto& n : nodes_) {
            if (n.out) {
                n.out->ensure_grad();
                std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
                if (n.out == loss.node()) on_graph = true;
            }
        }
        if (!on_graph) throw ContractViolation("loss tensor was not recorded on this graph");
        loss.node()->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->fn) it->fn();
        }
    }

    void clear() { nodes_.clear(); }

private:
    struct NodeRecord {
        std::shared_ptr<detail::TensorData> out;
        std::function<void()> fn;
    };

    static thread_local Graph* active_;
    std::vector<NodeRecord> nodes_;
};

inline thread_local Graph* Graph::active_ = nullptr;

}  // namespace crystal
