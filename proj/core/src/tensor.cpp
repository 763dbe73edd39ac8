#include "sphere_ssm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "sphere_ssm/errors.hpp"
#include "sphere_ssm/memtrack.hpp"

namespace sphere_ssm {

namespace {
long checked_size(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
        if (d < 0) throw UsageError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::shared_ptr<double[]> make_storage(long n) {
    if (n == 0) return nullptr;
    double* p = memtrack::alloc_doubles(std::size_t(n));
    return std::shared_ptr<double[]>(p, [n](double* q) {
        memtrack::free_doubles(q, std::size_t(n));
    });
}
} // namespace

std::string shape_str(const std::vector<long>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::empty(std::vector<long> shape) {
    Tensor t;
    t.size_ = checked_size(shape);
    t.shape_ = std::move(shape);
    t.data_ = make_storage(t.size_);
    return t;
}

Tensor Tensor::zeros(std::vector<long> shape) {
    Tensor t = empty(std::move(shape));
    if (t.size_) std::memset(t.data(), 0, std::size_t(t.size_) * sizeof(double));
    return t;
}

Tensor Tensor::full(std::vector<long> shape, double value) {
    Tensor t = empty(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<long> shape, const std::vector<double>& values) {
    Tensor t = empty(std::move(shape));
    if (long(values.size()) != t.size_)
        throw UsageError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(t.shape_));
    std::memcpy(t.data(), values.data(), values.size() * sizeof(double));
    return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

long Tensor::dim(int i) const {
    int n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n)
        throw UsageError("dim index out of range for shape " + shape_str(shape_));
    return shape_[std::size_t(i)];
}

double& Tensor::at(std::initializer_list<long> idx) {
    return const_cast<double&>(static_cast<const Tensor*>(this)->at(idx));
}

const double& Tensor::at(std::initializer_list<long> idx) const {
    if (long(idx.size()) != ndim())
        throw UsageError("index rank mismatch for shape " + shape_str(shape_));
    long off = 0;
    int i = 0;
    for (long k : idx) {
        long d = shape_[std::size_t(i)];
        if (k < 0 || k >= d)
            throw UsageError("index out of bounds for shape " + shape_str(shape_));
        off = off * d + k;
        ++i;
    }
    return data_[off];
}

double Tensor::item() const {
    if (size_ != 1)
        throw UsageError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::clone() const {
    Tensor t = empty(shape_);
    if (size_) std::memcpy(t.data(), data(), std::size_t(size_) * sizeof(double));
    return t;
}

Tensor Tensor::reshaped(std::vector<long> new_shape) const {
    long n = checked_size(new_shape);
    if (n != size_)
        throw UsageError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                         " changes element count");
    Tensor t;
    t.data_ = data_;
    t.shape_ = std::move(new_shape);
    t.size_ = size_;
    return t;
}

bool Tensor::all_finite() const {
    const double* p = data();
    for (long i = 0; i < size_; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

void Tensor::fill(double v) {
    double* p = data();
    for (long i = 0; i < size_; ++i) p[i] = v;
}

} // namespace sphere_ssm
