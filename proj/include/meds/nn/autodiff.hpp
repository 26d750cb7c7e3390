#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "meds/nn/tensor.hpp"

namespace meds::nn {

// Define-by-run reverse-mode autodiff. Ops compute values eagerly; when grad
// recording is on and an input needs gradients, they attach a backward closure.

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
};

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad; // allocated lazily during backward
    bool requires_grad = false; // leaf parameter flag
    bool needs_grad = false;    // requires_grad or depends on one
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.v.size() != val.numel()) {
            grad.shape = val.shape;
            grad.v.assign(val.numel(), T(0));
        }
        return grad;
    }
};

template <class T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return n;
}

template <class T>
bool any_needs_grad(const std::vector<Var<T>>& parents) {
    for (const auto& p : parents)
        if (p && p->needs_grad) return true;
    return false;
}

// Wire a freshly computed node into the graph (records parents + closure only
// when recording is active and some parent participates in gradients).
template <class T>
Var<T> attach(Tensor<T> value, std::vector<Var<T>> parents,
              std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(value);
    if (grad_enabled() && any_needs_grad(parents)) {
        n->needs_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

// Reverse-accumulate gradients from a scalar loss node.
template <class T>
void backward(const Var<T>& loss) {
    assert(loss && loss->val.numel() == 1);
    // Iterative post-order DFS over the parent DAG.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({loss.get(), 0});
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx].get();
            ++idx;
            if (p && p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad().v[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

template <class T>
void zero_grad(const std::vector<Var<T>>& params) {
    for (const auto& p : params)
        if (p && p->grad.v.size()) p->grad.zero();
}

} // namespace meds::nn
