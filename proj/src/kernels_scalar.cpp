#include <cmath>
#include <cstddef>

#include "fusenet/kernels.hpp"

// Reference kernels. Every fused operation goes through std::fma so the AVX2
// backend (whose vfmadd is the same correctly-rounded operation) produces
// identical bits.

namespace fusenet::kern {
namespace {

void add_s(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_s(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_s(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_s(const double* a, double s, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * s;
}

void axpy_s(double s, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(s, x[i], y[i]);
}

void mul_acc_s(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a[i], b[i], y[i]);
}

void relu_s(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_acc_s(const double* x, const double* g, double* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) dx[i] += g[i];
    }
}

// i-p-j order: each C[i][j] accumulates over p sequentially, which is the
// same per-element order the vectorized variant uses.
void matmul_acc_s(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] = std::fma(av, brow[j], crow[j]);
            }
        }
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table = {
        "scalar", add_s, sub_s,  mul_s,          scale_s,      axpy_s,
        mul_acc_s, relu_s, relu_grad_acc_s, matmul_acc_s,
    };
    return table;
}

void transpose(const double* in, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[j * rows + i] = in[i * cols + j];
        }
    }
}

}  // namespace fusenet::kern
