// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "aukit/common/error.hpp"

namespace aukit::num {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// Dense tensor of 64-bit reals, row-major flat storage. Value type:
/// copyable, movable, no aliasing games.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.assign(element_count(shape_), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    /// 2-D convenience constructor from nested initializer lists.
    Tensor(std::initializer_list<std::initializer_list<double>> rows);

    static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    /// Leading extent of a 2-D tensor.
    std::size_t rows() const { return require_2d().first; }
    /// Trailing extent of a 2-D tensor.
    std::size_t cols() const { return require_2d().second; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return {data_.data(), data_.size()}; }
    std::span<const double> flat() const { return {data_.data(), data_.size()}; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols_fast() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_fast() + c]; }

    double item() const {
        if (data_.size() != 1) {
            throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape_));
        }
        return data_[0];
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::size_t element_count(const Shape& s) {
        std::size_t n = 1;
        for (std::size_t d : s) {
            if (d == 0) throw ShapeError("zero extent in shape " + shape_str(s));
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

private:
    std::pair<std::size_t, std::size_t> require_2d() const {
        if (shape_.size() == 2) return {shape_[0], shape_[1]};
        if (shape_.size() == 1) return {1, shape_[0]};
        throw ShapeError("expected a matrix, got shape " + shape_str(shape_));
    }
    std::size_t cols_fast() const { return shape_.back(); }

    Shape shape_;
    std::vector<double> data_;
};

/// Debug-build guard: documented operations must not emit NaN/Inf on
/// finite inputs. Compiled out under NDEBUG.
inline void debug_check_finite(const Tensor& t, const char* where) {
#ifndef NDEBUG
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + where);
    }
#else
    (void)t;
    (void)where;
#endif
}

inline void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite value in ") + what);
    }
}

}  // namespace aukit::num
