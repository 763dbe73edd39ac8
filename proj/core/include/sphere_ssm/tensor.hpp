#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <vector>

namespace sphere_ssm {

// Dense row-major f64 tensor. Storage is shared (cheap copies); all training
// math is f64 — f32 exists only as a checkpoint storage format. A tensor may
// carry a tape stamp (tape epoch + node id) when it participates in autodiff.
class Tensor {
public:
    Tensor() = default;

    static Tensor empty(std::vector<long> shape);
    static Tensor zeros(std::vector<long> shape);
    static Tensor full(std::vector<long> shape, double value);
    static Tensor from(std::vector<long> shape, const std::vector<double>& values);
    static Tensor scalar(double value);

    bool defined() const { return data_ != nullptr; }
    const std::vector<long>& shape() const { return shape_; }
    int ndim() const { return int(shape_.size()); }
    long size() const { return size_; }
    // dim(-1) = last dimension.
    long dim(int i) const;

    double* data() { return data_.get(); }
    const double* data() const { return data_.get(); }

    // Bounds-checked element access (tests and small-scale code).
    double& at(std::initializer_list<long> idx);
    const double& at(std::initializer_list<long> idx) const;
    double item() const; // requires size() == 1

    Tensor clone() const;
    // Same storage, new shape (sizes must match).
    Tensor reshaped(std::vector<long> new_shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double v);

    // Autodiff stamp. A tensor is a live node of tape `t` iff
    // tape_epoch() == t.epoch() and node() >= 0.
    int node() const { return node_; }
    std::uint64_t tape_epoch() const { return epoch_; }
    void stamp(std::uint64_t epoch, int node) {
        epoch_ = epoch;
        node_ = node;
    }

private:
    std::shared_ptr<double[]> data_;
    std::vector<long> shape_;
    long size_ = 0;
    std::uint64_t epoch_ = 0;
    int node_ = -1;
};

// Shape formatting for error messages: "[2, 3, 4]".
std::string shape_str(const std::vector<long>& shape);

} // namespace sphere_ssm
