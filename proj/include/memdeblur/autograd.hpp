#ifndef MEMDEBLUR_AUTOGRAD_HPP
#define MEMDEBLUR_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "memdeblur/tensor.hpp"

namespace memdeblur {

// Minimal reverse-mode tape. Every differentiable op returns a Var whose node
// records its parents and a closure that scatters the node's gradient back to
// them. backward() runs the closures once in reverse topological order.

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor<T>& g) {
        if (!requires_grad) return;
        if (!grad_ready) {
            grad = g;
            grad_ready = true;
        } else {
            grad += g;
        }
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

struct GradMode {
    static bool& enabled() {
        static thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad && GradMode::enabled();
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->grad_ready; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }

    NodePtr<T>& node() { return node_; }
    const NodePtr<T>& node() const { return node_; }

    void zero_grad() {
        if (node_) {
            node_->grad_ready = false;
            node_->grad = Tensor<T>();
        }
    }

    // Value copy with no history.
    Var detach() const { return Var(node_->value, false); }

private:
    NodePtr<T> node_;
};

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
    bool track = GradMode::enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || (p.defined() && p.node()->requires_grad);
        track = any;
    }
    Var<T> out(std::move(value), track);
    if (track) {
        auto& n = *out.node();
        n.parents.reserve(parents.size());
        for (auto& p : parents) n.parents.push_back(p.node());
        n.backward_fn = std::move(backward_fn);
    }
    return out;
}

// Reverse-mode sweep from a scalar root. Gradients accumulate on every node
// with requires_grad reachable through the tape.
template <typename T>
void backward(const Var<T>& root) {
    if (!root.defined() || !root.node()->requires_grad)
        throw UsageError("backward: root does not require grad");
    if (root.value().numel() != 1)
        throw UsageError("backward: root must be scalar");

    // iterative post-order DFS over grad-requiring nodes
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->accumulate(Tensor<T>::full(root.value().shape(), T(1)));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

} // namespace memdeblur

#endif
