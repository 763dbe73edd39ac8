#include "sphere_ssm/tape.hpp"

#include <atomic>

#include "sphere_ssm/errors.hpp"

namespace sphere_ssm {

namespace {
std::atomic<std::uint64_t> g_tape_epoch{1};
} // namespace

Tape::Tape() : epoch_(g_tape_epoch.fetch_add(1, std::memory_order_relaxed)) {}

int Tape::watch(Tensor& t) {
    if (!t.defined()) throw UsageError("cannot watch an undefined tensor");
    if (tracks(t)) return t.node();
    int id = int(nodes_.size());
    Node n;
    n.leaf = true;
    nodes_.push_back(std::move(n));
    t.stamp(epoch_, id);
    return id;
}

int Tape::record(Tensor& out, std::vector<int> parents, BackFn fn) {
    int id = int(nodes_.size());
    Node n;
    n.parents = std::move(parents);
    n.fn = std::move(fn);
    nodes_.push_back(std::move(n));
    out.stamp(epoch_, id);
    return id;
}

void Tape::accum(int node, const Tensor& delta) {
    if (node < 0) return;
    Node& n = nodes_[std::size_t(node)];
    if (!n.grad.defined()) {
        n.grad = delta.clone();
        return;
    }
    if (!n.grad.same_shape(delta))
        throw UsageError("gradient shape mismatch: " + shape_str(n.grad.shape()) + " vs " +
                         shape_str(delta.shape()));
    double* g = n.grad.data();
    const double* d = delta.data();
    long sz = delta.size();
    for (long i = 0; i < sz; ++i) g[i] += d[i];
}

Tensor Tape::grad_buffer(int node, const std::vector<long>& shape) {
    if (node < 0) return Tensor::zeros(shape); // scratch; discarded by caller
    Node& n = nodes_[std::size_t(node)];
    if (!n.grad.defined()) n.grad = Tensor::zeros(shape);
    return n.grad;
}

void Tape::backward(const Tensor& loss) {
    if (!tracks(loss)) throw UsageError("backward() on a tensor this tape does not track");
    if (loss.size() != 1) throw UsageError("backward() requires a scalar loss");
    if (ran_backward_) throw UsageError("tape backward() already ran");
    ran_backward_ = true;

    nodes_[std::size_t(loss.node())].grad = Tensor::full(loss.shape(), 1.0);
    for (int i = loss.node(); i >= 0; --i) {
        Node& n = nodes_[std::size_t(i)];
        if (!n.grad.defined()) {
            n.fn = nullptr; // unreachable from loss; drop saved tensors
            continue;
        }
        if (n.fn) {
            n.fn(*this, n.grad);
            n.fn = nullptr;
        }
        if (!n.leaf) n.grad = Tensor(); // grads retained for leaves only
    }
}

bool Tape::has_grad(const Tensor& t) const {
    return tracks(t) && nodes_[std::size_t(t.node())].grad.defined();
}

const Tensor& Tape::grad(const Tensor& t) const {
    if (!tracks(t)) throw UsageError("grad() of a tensor this tape does not track");
    const Node& n = nodes_[std::size_t(t.node())];
    if (!n.grad.defined())
        throw UsageError("no gradient recorded for this tensor (backward not run, or "
                         "tensor not on the loss path)");
    return n.grad;
}

} // namespace sphere_ssm
