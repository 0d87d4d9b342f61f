#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "actjepa/diffcore/tensor.hpp"

namespace actjepa {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// One value in a computation. Leaves have no inputs; interior nodes carry
/// the rule that pushes their gradient onto their inputs.
template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<Var<T>> inputs;
    std::function<void(Node&)> backward_rule;
    bool requires_grad = false;
    std::string name;

    /// Gradient buffer of input i, allocated lazily during backward.
    Tensor<T>& input_grad(std::size_t i) {
        auto& in = *inputs[i];
        if (in.grad.shape() != in.value.shape()) in.grad = Tensor<T>(in.value.shape());
        return in.grad;
    }
};

/// Trainable leaf.
template <class T>
Var<T> make_param(Tensor<T> value, std::string name = {}) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

/// Non-trainable leaf.
template <class T>
Var<T> make_const(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return n;
}

/// Gradients of one backward pass, keyed by leaf identity. Leaves that did
/// not participate report an all-zero tensor.
template <class T>
class Gradients {
public:
    Tensor<T> of(const Var<T>& leaf) const {
        auto it = grads_.find(leaf.get());
        if (it == grads_.end()) return Tensor<T>(leaf->value.shape());
        return it->second;
    }
    const Tensor<T>* find(const Var<T>& leaf) const {
        auto it = grads_.find(leaf.get());
        return it == grads_.end() ? nullptr : &it->second;
    }
    bool contains(const Var<T>& leaf) const { return grads_.count(leaf.get()) != 0; }
    std::size_t size() const { return grads_.size(); }

    void set(const Node<T>* leaf, Tensor<T> g) { grads_[leaf] = std::move(g); }

private:
    std::unordered_map<const Node<T>*, Tensor<T>> grads_;
};

/// Tape of interior nodes in creation (hence topological) order. When not
/// recording, ops produce plain constants and nothing is taped.
template <class T>
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    bool recording() const { return recording_; }
    std::size_t size() const { return tape_.size(); }

    /// Creates the output node of an op. The node is taped only when
    /// recording and at least one input carries a gradient path.
    Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> rule) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in->requires_grad;
        if (recording_ && needs) {
            n->inputs = std::move(inputs);
            n->backward_rule = std::move(rule);
            n->requires_grad = true;
            tape_.push_back(n);
        }
        return n;
    }

    /// Reverse-mode sweep from a scalar loss. Returns fresh gradients for
    /// every trainable leaf reachable from the loss; calling it again on the
    /// same graph yields the same result.
    Gradients<T> backward(const Var<T>& loss) {
        if (loss->value.numel() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " + to_string(loss->value.shape()));
        }
        Gradients<T> out;
        if (!loss->requires_grad) return out;

        std::vector<Node<T>*> leaves;
        for (auto& n : tape_) {
            n->grad = Tensor<T>();
            for (auto& in : n->inputs) {
                if (in->inputs.empty() && in->requires_grad) {
                    in->grad = Tensor<T>();
                    leaves.push_back(in.get());
                }
            }
        }
        if (loss->inputs.empty()) {
            out.set(loss.get(), Tensor<T>(loss->value.shape(), T{1}));
            return out;
        }
        loss->grad = Tensor<T>(loss->value.shape(), T{1});
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.grad.shape() != n.value.shape()) continue;  // not on a path to the loss
            n.backward_rule(n);
        }
        for (Node<T>* leaf : leaves) {
            if (leaf->grad.shape() == leaf->value.shape()) {
                out.set(leaf, std::move(leaf->grad));
            }
            leaf->grad = Tensor<T>();
        }
        for (auto& n : tape_) n->grad = Tensor<T>();
        return out;
    }

private:
    bool recording_;
    std::vector<Var<T>> tape_;
};

}  // namespace actjepa
