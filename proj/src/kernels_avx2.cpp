// AVX2 kernels (4-wide double lanes, FMA inside the gemm accumulators).
// Elementwise kernels keep separate mul/add so they stay bit-identical with
// the scalar reference; reductions and gemm reorder sums and are compared
// against scalar under a tolerance instead.

#include "tokdiff/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define TOKDIFF_X86 1
#else
#define TOKDIFF_X86 0
#endif

#if TOKDIFF_X86
#include <immintrin.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tokdiff::kernels {

#if TOKDIFF_X86

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swap = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swap));
}

// Row-panel update shared by gemm_nn and gemm_tn: crow += av * brow.
inline void fma_row(int n, double av, const double* brow, double* crow) {
    __m256d va = _mm256_set1_pd(av);
    int j = 0;
    for (; j + 16 <= n; j += 16) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        __m256d c1 = _mm256_loadu_pd(crow + j + 4);
        __m256d c2 = _mm256_loadu_pd(crow + j + 8);
        __m256d c3 = _mm256_loadu_pd(crow + j + 12);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), c0);
        c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j + 4), c1);
        c2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j + 8), c2);
        c3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j + 12), c3);
        _mm256_storeu_pd(crow + j, c0);
        _mm256_storeu_pd(crow + j + 4, c1);
        _mm256_storeu_pd(crow + j + 8, c2);
        _mm256_storeu_pd(crow + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), c0);
        _mm256_storeu_pd(crow + j, c0);
    }
    for (; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
}

void gemm_nn_v(int m, int n, int k, const double* a, const double* b,
               double* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * (size_t)m * n);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + (size_t)i * k;
        double* crow = c + (size_t)i * n;
        for (int p = 0; p < k; ++p) fma_row(n, arow[p], b + (size_t)p * n, crow);
    }
}

void gemm_tn_v(int m, int n, int k, const double* a, const double* b,
               double* c) {
    for (int p = 0; p < k; ++p) {
        const double* arow = a + (size_t)p * m;
        const double* brow = b + (size_t)p * n;
        for (int i = 0; i < m; ++i)
            fma_row(n, arow[i], brow, c + (size_t)i * n);
    }
}

double dot_v(int n, const double* x, const double* y) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                               acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                               _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                               acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void gemm_nt_v(int m, int n, int k, const double* a, const double* b,
               double* c) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + (size_t)i * k;
        double* crow = c + (size_t)i * n;
        for (int j = 0; j < n; ++j) crow[j] += dot_v(k, arow, b + (size_t)j * k);
    }
}

void axpy_v(int n, double alpha, const double* x, double* y) {
    __m256d va = _mm256_set1_pd(alpha);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_v(int n, double alpha, double* x) {
    __m256d va = _mm256_set1_pd(alpha);
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

void vadd_v(int n, const double* x, const double* y, double* out) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void vmul_v(int n, const double* x, const double* y, double* out) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

double vsum_v(int n, const double* x) {
    __m256d acc = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double vmax_v(int n, const double* x) {
    int i = 0;
    double m = x[0];
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4)
            vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        __m128d lo = _mm256_castpd256_pd128(vm);
        __m128d hi = _mm256_extractf128_pd(vm, 1);
        lo = _mm_max_pd(lo, hi);
        __m128d swap = _mm_unpackhi_pd(lo, lo);
        m = _mm_cvtsd_f64(_mm_max_sd(lo, swap));
    }
    for (; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

void adam_step_v(int n, double* p, const double* g, double* m, double* v,
                 double lr, double beta1, double beta2, double eps,
                 double b1t, double b2t) {
    double mc = 1.0 / (1.0 - b1t);
    double vc = 1.0 / (1.0 - b2t);
    __m256d vb1 = _mm256_set1_pd(beta1), vb1c = _mm256_set1_pd(1.0 - beta1);
    __m256d vb2 = _mm256_set1_pd(beta2), vb2c = _mm256_set1_pd(1.0 - beta2);
    __m256d vlr = _mm256_set1_pd(lr), veps = _mm256_set1_pd(eps);
    __m256d vmc = _mm256_set1_pd(mc), vvc = _mm256_set1_pd(vc);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gi = _mm256_loadu_pd(g + i);
        __m256d mi = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                                   _mm256_mul_pd(vb1c, gi));
        __m256d vi = _mm256_add_pd(
            _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
            _mm256_mul_pd(vb2c, _mm256_mul_pd(gi, gi)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        __m256d denom =
            _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, vvc)), veps);
        __m256d step =
            _mm256_div_pd(_mm256_mul_pd(vlr, _mm256_mul_pd(mi, vmc)), denom);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        p[i] -= lr * (m[i] * mc) / (std::sqrt(v[i] * vc) + eps);
    }
}

}  // namespace

const Ops avx2_ops = {
    gemm_nn_v, gemm_tn_v, gemm_nt_v, dot_v,  axpy_v,      scale_v,
    vadd_v,    vmul_v,    vsum_v,    vmax_v, adam_step_v,
};

#else  // non-x86 builds fall back to the scalar table

const Ops avx2_ops = scalar_ops;

#endif

}  // namespace tokdiff::kernels
