#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

namespace detail {
inline thread_local bool grad_mode = true;
inline std::atomic<std::uint64_t> node_seq{0};
}  // namespace detail

// Global switch controlling whether ops record the tape. Forward-only passes
// (evaluation, translation) run under NoGradGuard and build no graph.
struct GradMode {
    static bool enabled() { return detail::grad_mode; }
    static void set(bool on) { detail::grad_mode = on; }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev); }
};

struct GradModeGuard {
    bool prev;
    explicit GradModeGuard(bool on) : prev(GradMode::enabled()) { GradMode::set(on); }
    ~GradModeGuard() { GradMode::set(prev); }
};

template <typename S>
class Var;

template <typename S>
struct VarNode {
    Tensor<S> value;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<Var<S>> parents;
    // Maps the gradient w.r.t. this node to gradients w.r.t. each parent.
    // Written in terms of Var ops, so running it under grad mode builds the
    // graph needed for second-order differentiation (gradient penalty).
    std::function<std::vector<Var<S>>(const Var<S>&)> backward;
};

// Value-semantic handle to a tape node. Copies share the node.
template <typename S>
class Var {
public:
    using BackwardFn = std::function<std::vector<Var<S>>(const Var<S>&)>;

    Var() = default;

    static Var leaf(Tensor<S> value, bool requires_grad = true) {
        Var v;
        v.node_ = std::make_shared<VarNode<S>>();
        v.node_->value = std::move(value);
        v.node_->requires_grad = requires_grad;
        v.node_->seq = detail::node_seq.fetch_add(1, std::memory_order_relaxed);
        return v;
    }

    static Var constant(Tensor<S> value) { return leaf(std::move(value), false); }

    // Factory used by every op. Records parents and the backward function only
    // when grad mode is on and some parent needs gradients.
    static Var op(Tensor<S> value, std::vector<Var> parents, BackwardFn backward) {
        bool record = GradMode::enabled();
        if (record) {
            record = false;
            for (const Var& p : parents)
                if (p.requires_grad()) {
                    record = true;
                    break;
                }
        }
        Var v = leaf(std::move(value), record);
        if (record) {
            v.node_->parents = std::move(parents);
            v.node_->backward = std::move(backward);
        }
        return v;
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<S>& value() const { return node_->value; }
    Tensor<S>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int rank() const { return node_->value.rank(); }
    Index numel() const { return node_->value.numel(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    Var detach() const { return constant(node_->value); }

    VarNode<S>* node() const { return node_.get(); }

    bool same_node(const Var& o) const { return node_ == o.node_; }

private:
    std::shared_ptr<VarNode<S>> node_;
};

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b);  // defined in ops.hpp

// Gradients produced by a backward pass, keyed by node identity.
template <typename S>
class GradMap {
public:
    bool contains(const Var<S>& v) const { return m_.count(v.node()) > 0; }

    const Var<S>& at(const Var<S>& v) const {
        auto it = m_.find(v.node());
        if (it == m_.end()) throw ValueError("GradMap: no gradient recorded for this variable");
        return it->second;
    }

    // Zero tensor when the variable was not reached by the backward pass.
    Tensor<S> tensor(const Var<S>& v) const {
        auto it = m_.find(v.node());
        if (it == m_.end()) return Tensor<S>::zeros(v.shape());
        return it->second.value();
    }

    void set(const VarNode<S>* key, Var<S> g) { m_[key] = std::move(g); }

    Var<S>* find(const VarNode<S>* key) {
        auto it = m_.find(key);
        return it == m_.end() ? nullptr : &it->second;
    }

private:
    std::unordered_map<const VarNode<S>*, Var<S>> m_;
};

// Reverse-mode sweep from `root` (any shape; seeded with ones unless an
// explicit seed is given). With create_graph=true the returned gradients are
// themselves differentiable variables.
template <typename S>
GradMap<S> backward(const Var<S>& root, bool create_graph = false, const Tensor<S>* seed = nullptr) {
    GradMap<S> grads;
    if (!root.defined()) throw ValueError("backward: undefined root");
    if (!root.requires_grad()) return grads;

    // Reachable nodes that require gradients, newest first. Construction
    // order guarantees parents have smaller sequence numbers than children,
    // so descending order is a valid topological order.
    std::vector<VarNode<S>*> order;
    std::unordered_set<const VarNode<S>*> seen;
    std::vector<VarNode<S>*> stack{root.node()};
    seen.insert(root.node());
    while (!stack.empty()) {
        VarNode<S>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const Var<S>& p : n->parents) {
            if (p.requires_grad() && !seen.count(p.node())) {
                seen.insert(p.node());
                stack.push_back(p.node());
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const VarNode<S>* a, const VarNode<S>* b) { return a->seq > b->seq; });

    Tensor<S> seed_value = seed ? *seed : Tensor<S>::full(root.shape(), S(1));
    if (seed_value.shape() != root.shape())
        throw ShapeError("backward: seed shape does not match root shape");
    grads.set(root.node(), Var<S>::constant(std::move(seed_value)));

    GradModeGuard guard(create_graph);
    for (VarNode<S>* n : order) {
        Var<S>* gv = grads.find(n);
        if (!gv || !n->backward) continue;
        std::vector<Var<S>> pgrads = n->backward(*gv);
        if (pgrads.size() != n->parents.size())
            throw ValueError("backward: op returned wrong number of parent gradients");
        for (size_t i = 0; i < pgrads.size(); ++i) {
            const Var<S>& parent = n->parents[i];
            if (!parent.requires_grad() || !pgrads[i].defined()) continue;
            if (Var<S>* existing = grads.find(parent.node()))
                *existing = add(*existing, pgrads[i]);
            else
                grads.set(parent.node(), std::move(pgrads[i]));
        }
    }
    return grads;
}

}  // namespace uvcgan
