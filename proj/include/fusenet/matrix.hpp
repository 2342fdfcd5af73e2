#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fusenet/error.hpp"

namespace fusenet {

// Dense row-major 2-D array of doubles. Plain storage; arithmetic lives in
// the kernel layer and the graph ops.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values)
        : rows(r), cols(c), a(std::move(values)) {
        if (a.size() != r * c) throw ShapeError("matrix data size does not match shape");
    }

    std::size_t size() const { return rows * cols; }
    double* data() { return a.data(); }
    const double* data() const { return a.data(); }
    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace fusenet
