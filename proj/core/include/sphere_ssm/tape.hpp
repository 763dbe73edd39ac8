#pragma once

#include <functional>
#include <vector>

#include "sphere_ssm/tensor.hpp"

namespace sphere_ssm {

// Reverse-mode gradient tape, one per forward pass, discarded after backward.
// Ops record nodes in topological (creation) order; backward walks the list in
// reverse, so each node is visited exactly once and fan-out grads sum
// additively. Saved intermediates live inside the backward closures; both the
// closure and the node's grad buffer are released as soon as the node has been
// processed, which bounds peak memory during backward.
class Tape {
public:
    Tape();

    std::uint64_t epoch() const { return epoch_; }

    // True iff `t` is a live node of this tape.
    bool tracks(const Tensor& t) const {
        return t.node() >= 0 && t.tape_epoch() == epoch_ && t.node() < int(nodes_.size());
    }

    // Registers a leaf (parameter/input) and stamps it. Idempotent per tape.
    int watch(Tensor& t);

    // Backward fn receives this tape and the node's output gradient.
    using BackFn = std::function<void(Tape&, const Tensor&)>;

    // Records an op node producing `out` (stamps it). `parents` may contain -1
    // entries (constant inputs); they are kept so closures can index uniformly.
    int record(Tensor& out, std::vector<int> parents, BackFn fn);

    // Adds `delta` into the node's grad (no-op if node < 0).
    void accum(int node, const Tensor& delta);
    // Zero-initialized grad buffer for in-place accumulation (e.g. beta=1 gemm).
    Tensor grad_buffer(int node, const std::vector<long>& shape);

    // Seeds d(loss)/d(loss)=1 and propagates. `loss` must be a tracked scalar.
    void backward(const Tensor& loss);

    bool has_grad(const Tensor& t) const;
    // Gradient of a watched tensor after backward() (leaf grads are retained).
    const Tensor& grad(const Tensor& t) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> parents;
        BackFn fn; // empty for leaves
        Tensor grad;
        bool leaf = false;
    };
    std::vector<Node> nodes_;
    std::uint64_t epoch_;
    bool ran_backward_ = false;
};

} // namespace sphere_ssm
