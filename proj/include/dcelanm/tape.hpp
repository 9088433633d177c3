#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dcelanm/tensor.hpp"

namespace dcelanm {

/// Reverse-mode autodiff tape. Append-only node list; parents always point to
/// earlier entries, so a single reverse sweep visits every node exactly once.
///
/// One tape per training step, single-threaded: reset() bumps the generation
/// counter so tensor handles bound to a previous step are treated as
/// constants. Non-leaf gradients live in per-node scratch buffers that are
/// freed as soon as the node has been processed; only leaf tensors
/// (requires_grad storage) accumulate gradients across backward() calls.
template <typename T>
class Tape {
public:
    /// Backward rule: reads the node's incoming gradient, accumulates into the
    /// parents' buffers. Entries in `parent_grads` are null when that input
    /// does not need a gradient.
    using BackwardFn = std::function<void(const T* grad_out, const std::vector<T*>& parent_grads)>;

    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    bool recording() const { return recording_; }
    void set_recording(bool v) { recording_ = v; }
    uint64_t generation() const { return gen_; }
    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        nodes_.shrink_to_fit();
        ++gen_;
    }

    /// True when `t` participates in gradient computation under this tape.
    bool tracked(const Tensor<T>& t) const {
        return t.requires_grad() || (t.node_gen() == gen_ && t.node() >= 0);
    }

    /// Node id for an op input: existing node, a fresh leaf node for
    /// requires_grad tensors, or -1 for plain constants.
    int64_t input_node(const Tensor<T>& t) {
        if (t.node_gen() == gen_ && t.node() >= 0) return t.node();
        if (!t.requires_grad()) return -1;
        int64_t id = static_cast<int64_t>(nodes_.size());
        nodes_.push_back(Node{{}, t.numel(), nullptr, t.storage()});
        t.bind_node(id, gen_);
        return id;
    }

    /// Record an op output. Returns the new node id and binds it to `out`.
    int64_t add_node(const Tensor<T>& out, std::vector<int64_t> parents, BackwardFn fn) {
        int64_t id = static_cast<int64_t>(nodes_.size());
        nodes_.push_back(Node{std::move(parents), out.numel(), std::move(fn), nullptr});
        out.bind_node(id, gen_);
        return id;
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate; call
    /// zero_grad on parameters between steps.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (loss.node_gen() != gen_ || loss.node() < 0)
            throw std::invalid_argument("backward: loss is not on the active tape");

        std::vector<std::vector<T>> scratch(nodes_.size());
        scratch[static_cast<size_t>(loss.node())].assign(1, T(1));

        std::vector<T*> pgrads;
        for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
            Node& node = nodes_[static_cast<size_t>(i)];
            auto& g = scratch[static_cast<size_t>(i)];
            if (g.empty()) continue;  // no gradient flowed here
            if (node.fn) {
                pgrads.clear();
                for (int64_t p : node.parents) {
                    if (p < 0) {
                        pgrads.push_back(nullptr);
                        continue;
                    }
                    auto& pg = scratch[static_cast<size_t>(p)];
                    if (pg.empty()) pg.assign(static_cast<size_t>(nodes_[static_cast<size_t>(p)].numel), T(0));
                    pgrads.push_back(pg.data());
                }
                node.fn(g.data(), pgrads);
            }
            if (node.leaf) {
                auto& lg = node.leaf->grad;
                if (lg.empty()) lg.assign(node.leaf->data.size(), T(0));
                for (size_t k = 0; k < g.size(); ++k) lg[k] += g[k];
            }
            g.clear();
            g.shrink_to_fit();
        }
    }

private:
    struct Node {
        std::vector<int64_t> parents;
        int64_t numel = 0;
        BackwardFn fn;
        std::shared_ptr<Storage<T>> leaf;
    };

    std::vector<Node> nodes_;
    uint64_t gen_ = 1;
    bool recording_ = true;
};

/// Scoped "stop recording" guard for inference / preprocessing code.
template <typename T>
class NoGradGuard {
public:
    NoGradGuard() : prev_(Tape<T>::current().recording()) { Tape<T>::current().set_recording(false); }
    ~NoGradGuard() { Tape<T>::current().set_recording(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    Tape<T>::current().backward(loss);
}

}  // namespace dcelanm
