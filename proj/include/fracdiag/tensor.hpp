#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace fracdiag {

// Dense row-major array of doubles with an explicit shape.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return values.size(); }

    static std::size_t element_count(std::span<const std::size_t> shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

// Row-major 2-D matrix; segments and parameter slices use this.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        values_.resize(rows * cols);
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

}  // namespace fracdiag
