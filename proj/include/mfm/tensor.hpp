#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/rng.hpp"

namespace mfm {

// One vertex of the reverse-mode graph. Tensors are thin handles onto nodes;
// the shape lives on the handle so reshape is a zero-copy view.
template <class T>
struct NodeT {
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> vjp;  // reads this->grad, accumulates into parents

    bool is_leaf() const { return !vjp; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Thread-local autograd switch; NoGrad scopes disable graph recording
// (teacher forward passes, evaluation).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGrad {
    bool prev;
    NoGrad() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGrad() { grad_mode() = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

template <class T>
class TensorT {
  public:
    std::shared_ptr<NodeT<T>> node;
    Shape shp;

    TensorT() = default;
    TensorT(std::shared_ptr<NodeT<T>> n, Shape s) : node(std::move(n)), shp(std::move(s)) {}

    static TensorT leaf(Shape s, std::vector<T> values, bool requires_grad = false) {
        if (static_cast<std::int64_t>(values.size()) != mfm::numel(s))
            throw ConfigError("tensor: data length " + std::to_string(values.size()) +
                              " does not match shape " + shape_str(s));
        auto n = std::make_shared<NodeT<T>>();
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n), std::move(s));
    }
    static TensorT zeros(Shape s, bool requires_grad = false) {
        return leaf(s, std::vector<T>(mfm::numel(s), T(0)), requires_grad);
    }
    static TensorT full(Shape s, T value, bool requires_grad = false) {
        return leaf(s, std::vector<T>(mfm::numel(s), value), requires_grad);
    }
    static TensorT randn(Shape s, Rng& rng, T stddev, bool requires_grad = false) {
        std::vector<T> v(mfm::numel(s));
        for (auto& x : v) x = static_cast<T>(rng.normal()) * stddev;
        return leaf(std::move(s), std::move(v), requires_grad);
    }

    const Shape& shape() const { return shp; }
    std::int64_t numel() const { return mfm::numel(shp); }
    bool defined() const { return static_cast<bool>(node); }
    bool requires_grad() const { return node->requires_grad; }
    std::vector<T>& data() { return node->data; }
    const std::vector<T>& data() const { return node->data; }
    std::vector<T>& grad() {
        node->ensure_grad();
        return node->grad;
    }
    void zero_grad() { node->grad.assign(node->data.size(), T(0)); }

    // Zero-copy view with a different shape (same node, same grad buffer).
    TensorT reshape(Shape s) const {
        if (mfm::numel(s) != numel())
            throw ConfigError("reshape: cannot view " + shape_str(shp) + " as " + shape_str(s));
        return TensorT(node, std::move(s));
    }

    // Copy of the data as a fresh constant leaf (cuts the graph).
    TensorT detach() const {
        auto n = std::make_shared<NodeT<T>>();
        n->data = node->data;
        return TensorT(std::move(n), shp);
    }

    T item() const {
        if (numel() != 1) throw ConfigError("item: tensor " + shape_str(shp) + " is not a scalar");
        return node->data[0];
    }
};

// Reverse-mode sweep. Interior grads are transient (zeroed here); leaf grads
// accumulate across calls until zero_grad, so repeated backward calls with
// cleared grads reproduce identical values.
template <class T>
void backward(const TensorT<T>& out, const std::vector<T>& seed) {
    if (!out.defined() || out.node->is_leaf())
        throw ConfigError("backward: tensor is not part of a recorded composition");
    if (static_cast<std::int64_t>(seed.size()) != out.numel())
        throw ConfigError("backward: seed length " + std::to_string(seed.size()) +
                          " does not match output shape " + shape_str(out.shape()));

    // Post-order DFS over grad-requiring ancestry; reversed it is topological.
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> seen{out.node.get()};
    struct Frame {
        NodeT<T>* n;
        size_t i;
    };
    std::vector<Frame> stack{{out.node.get(), 0}};
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.i < f.n->parents.size()) {
            NodeT<T>* p = f.n->parents[f.i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (NodeT<T>* n : order) {
        if (n->is_leaf())
            n->ensure_grad();
        else
            n->grad.assign(n->data.size(), T(0));
    }
    for (size_t i = 0; i < seed.size(); ++i) out.node->grad[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* n = *it;
        if (n->vjp) n->vjp(*n);
    }
}

template <class T>
void backward(const TensorT<T>& out) {
    backward(out, std::vector<T>(out.numel(), T(1)));
}

using Tensor = TensorT<float>;

}  // namespace mfm
