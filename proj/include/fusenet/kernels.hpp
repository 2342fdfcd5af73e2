#pragma once

#include <cstddef>
#include <string_view>

namespace fusenet::kern {

// Dispatch table for the double-precision inner loops. Two backends exist:
// a scalar reference implementation and an AVX2+FMA variant selected at
// runtime when the CPU supports it. The two are bit-exact equivalent by
// construction: every fused multiply-add in the scalar path goes through
// std::fma, matmul accumulates in the same i-p-j order in both, and the
// transcendental maps (sigmoid/tanh/exp) are deliberately left out of the
// table — they run through one shared scalar path so that results never
// depend on the backend.
struct Ops {
    const char* name;

    // y = a op b, elementwise over n entries
    void (*add)(const double* a, const double* b, double* y, std::size_t n);
    void (*sub)(const double* a, const double* b, double* y, std::size_t n);
    void (*mul)(const double* a, const double* b, double* y, std::size_t n);

    // y = s * a
    void (*scale)(const double* a, double s, double* y, std::size_t n);

    // y += s * x  (fused)
    void (*axpy)(double s, const double* x, double* y, std::size_t n);

    // y += a * b, elementwise (fused)
    void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);

    // y = max(x, 0); gradient convention at exactly 0 is 0
    void (*relu)(const double* x, double* y, std::size_t n);

    // dx += (x > 0) ? g : 0
    void (*relu_grad_acc)(const double* x, const double* g, double* dx, std::size_t n);

    // C[m x n] += A[m x k] * B[k x n], row-major
    void (*matmul_acc)(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n);
};

const Ops& scalar_ops();

// Valid to call only when avx2_supported(); entries without a profitable
// vector form alias the scalar ones.
const Ops& avx2_ops();

bool avx2_supported();

enum class Backend { auto_select, scalar, avx2 };

// Select the active backend. auto_select picks AVX2 when available.
// Requesting AVX2 on a CPU without it throws.
void select(Backend b);
Backend selected();

// The active table. Defaults to auto_select on first use; honors the
// FUSENET_BACKEND environment variable (scalar|avx2|auto) if set.
const Ops& active();

Backend parse_backend(std::string_view name);

// Row-major transpose, out[j*rows + i] = in[i*cols + j]. Not dispatched; it
// moves data without arithmetic.
void transpose(const double* in, double* out, std::size_t rows, std::size_t cols);

}  // namespace fusenet::kern
