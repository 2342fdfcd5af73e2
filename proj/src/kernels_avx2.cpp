#include <cmath>
#include <cstddef>

#include "fusenet/kernels.hpp"

// AVX2+FMA variants of the dispatched kernels, 4 doubles per lane. This
// translation unit is the only one compiled with -mavx2 -mfma; entry is
// guarded by the runtime cpuid check in kernels.cpp. Tails use std::fma to
// stay bit-identical to the vector body and to the scalar backend.

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace fusenet::kern {
namespace {

void add_v(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_v(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_v(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_v(const double* a, double s, double* y, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    }
    for (; i < n; ++i) y[i] = a[i] * s;
}

void axpy_v(double s, const double* x, double* y, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vs, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] = std::fma(s, x[i], y[i]);
}

void mul_acc_v(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(
            y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                   _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] = std::fma(a[i], b[i], y[i]);
}

void relu_v(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // max(x, 0) with the NaN-propagation of vmaxpd matching x > 0 ? x : 0
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_acc_v(const double* x, const double* g, double* dx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d dxv = _mm256_loadu_pd(dx + i);
        const __m256d sum = _mm256_add_pd(dxv, _mm256_loadu_pd(g + i));
        // blend, not masked-add: dx += 0.0 would turn -0.0 into +0.0
        _mm256_storeu_pd(dx + i, _mm256_blendv_pd(dxv, sum, mask));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0) dx[i] += g[i];
    }
}

void matmul_acc_v(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const __m256d vav = _mm256_set1_pd(av);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                _mm256_storeu_pd(
                    crow + j, _mm256_fmadd_pd(vav, _mm256_loadu_pd(brow + j),
                                              _mm256_loadu_pd(crow + j)));
            }
            for (; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
    }
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops table = {
        "avx2",    add_v,  sub_v,           mul_v,        scale_v, axpy_v,
        mul_acc_v, relu_v, relu_grad_acc_v, matmul_acc_v,
    };
    return table;
}

}  // namespace fusenet::kern

#else  // non-x86: the avx2 table aliases the scalar one and is never selected

namespace fusenet::kern {
const Ops& avx2_ops() { return scalar_ops(); }
}  // namespace fusenet::kern

#endif
