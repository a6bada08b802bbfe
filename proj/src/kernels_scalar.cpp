// Scalar reference kernels. Deliberately plain loops: this is the ground
// truth the AVX2 variants are tested against.

#include "tokdiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tokdiff::kernels {
namespace {

void gemm_nn_s(int m, int n, int k, const double* a, const double* b,
               double* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * (size_t)m * n);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + (size_t)i * k;
        double* crow = c + (size_t)i * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b + (size_t)p * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn_s(int m, int n, int k, const double* a, const double* b,
               double* c) {
    for (int p = 0; p < k; ++p) {
        const double* arow = a + (size_t)p * m;
        const double* brow = b + (size_t)p * n;
        for (int i = 0; i < m; ++i) {
            double av = arow[i];
            double* crow = c + (size_t)i * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_s(int m, int n, int k, const double* a, const double* b,
               double* c) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + (size_t)i * k;
        double* crow = c + (size_t)i * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + (size_t)j * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

double dot_s(int n, const double* x, const double* y) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_s(int n, double alpha, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_s(int n, double alpha, double* x) {
    for (int i = 0; i < n; ++i) x[i] *= alpha;
}

void vadd_s(int n, const double* x, const double* y, double* out) {
    for (int i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void vmul_s(int n, const double* x, const double* y, double* out) {
    for (int i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

double vsum_s(int n, const double* x) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double vmax_s(int n, const double* x) {
    double m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

void adam_step_s(int n, double* p, const double* g, double* m, double* v,
                 double lr, double beta1, double beta2, double eps,
                 double b1t, double b2t) {
    double mc = 1.0 / (1.0 - b1t);
    double vc = 1.0 / (1.0 - b2t);
    for (int i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        p[i] -= lr * (m[i] * mc) / (std::sqrt(v[i] * vc) + eps);
    }
}

}  // namespace

const Ops scalar_ops = {
    gemm_nn_s, gemm_tn_s, gemm_nt_s, dot_s,  axpy_s,      scale_s,
    vadd_s,    vmul_s,    vsum_s,    vmax_s, adam_step_s,
};

}  // namespace tokdiff::kernels
