#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcs/error.hpp"

namespace rcs {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

/// Dense row-major array of doubles. A plain value: copying copies the data.
class Tensor {
public:
    Tensor() : shape_{}, values_(1, 0.0) {}

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (shape_size(shape_) != values_.size()) {
            throw ShapeError("tensor: shape " + shape_string(shape_) + " does not hold " +
                             std::to_string(values_.size()) + " values");
        }
    }

    static Tensor zeros(Shape shape) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(Shape shape, double value) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor(Shape{n}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor(Shape{rows, cols}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.values_[i * n + i] = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }

    /// Leading extent when viewed as (rows, last-axis).
    std::size_t rows() const { return shape_.empty() ? 1 : size() / shape_.back(); }
    std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    const std::vector<double>& data() const { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

    double item() const {
        if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape_) + " is not a scalar");
        return values_[0];
    }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Row-slice [begin, end) of a tensor viewed as (rows, cols).
    Tensor rows_slice(std::size_t begin, std::size_t end) const {
        const std::size_t c = cols();
        return Tensor(Shape{end - begin, c},
                      std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                          values_.begin() + static_cast<std::ptrdiff_t>(end * c)));
    }

    /// Gathers the given rows into a new (indices.size(), cols) tensor.
    Tensor gather_rows(std::span<const std::size_t> indices) const {
        const std::size_t c = cols();
        std::vector<double> out;
        out.reserve(indices.size() * c);
        for (std::size_t r : indices) {
            if (r >= rows()) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range");
            out.insert(out.end(), values_.begin() + static_cast<std::ptrdiff_t>(r * c),
                       values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
        }
        return Tensor(Shape{indices.size(), c}, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace rcs
