#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "pae/error.hpp"

namespace pae {

// Dense row-major tensor of doubles with dynamic rank.
// All numerics in this project run in double precision; file containers
// may store float32 (see io.hpp).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
    }

    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
            throw ConfigError("Tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor from(std::initializer_list<double> vals) {
        return Tensor({static_cast<int64_t>(vals.size())}, std::vector<double>(vals));
    }

    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }

    int64_t dim(int64_t i) const {
        if (i < 0) i += rank();
        if (i < 0 || i >= rank()) throw ConfigError("Tensor::dim: axis out of range");
        return shape_[static_cast<size_t>(i)];
    }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-D accessors (row-major).
    double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * dim(1) + c)]; }
    double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * dim(1) + c)]; }

    // 3-D accessors, shape [C,H,W].
    double& at(int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>((c * dim(1) + h) * dim(2) + w)];
    }
    double at(int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>((c * dim(1) + h) * dim(2) + w)];
    }

    Tensor reshaped(std::vector<int64_t> new_shape) const {
        if (numel_of(new_shape) != numel())
            throw ConfigError("Tensor::reshaped: element count mismatch");
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const;

    // In-place scalar ops used by optimizers and plain math paths.
    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw ConfigError("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// Deterministic pairwise tree sum; result does not depend on any worker
// partitioning and is more accurate than naive accumulation.
double pairwise_sum(const double* x, int64_t n);
double pairwise_sum(const std::vector<double>& x);

}  // namespace pae
