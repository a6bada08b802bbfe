#pragma once

#include <cstddef>
#include <string>

// Dense double-precision kernels behind every arithmetic inner loop.
// Two implementations exist: a scalar reference and an AVX2 variant.
// The active backend is chosen at runtime (CPU detection, overridable via
// the TOKDIFF_KERNELS environment variable or select()); both are kept
// equivalence-tested against each other.
namespace tokdiff::kernels {

enum class Backend { Scalar, Avx2 };

struct Ops {
    // C = [C +] A(m x k) * B(k x n), all row-major.
    void (*gemm_nn)(int m, int n, int k, const double* a, const double* b,
                    double* c, bool accumulate);
    // C += A(k x m)^T * B(k x n).
    void (*gemm_tn)(int m, int n, int k, const double* a, const double* b,
                    double* c);
    // C += A(m x k) * B(n x k)^T.
    void (*gemm_nt)(int m, int n, int k, const double* a, const double* b,
                    double* c);

    double (*dot)(int n, const double* x, const double* y);
    void (*axpy)(int n, double alpha, const double* x, double* y);  // y += a*x
    void (*scale)(int n, double alpha, double* x);
    void (*vadd)(int n, const double* x, const double* y, double* out);
    void (*vmul)(int n, const double* x, const double* y, double* out);
    double (*vsum)(int n, const double* x);
    double (*vmax)(int n, const double* x);

    // One Adam step over a flat buffer; b1t/b2t are beta powers at step t.
    void (*adam_step)(int n, double* p, const double* g, double* m, double* v,
                      double lr, double beta1, double beta2, double eps,
                      double b1t, double b2t);
};

extern const Ops scalar_ops;
extern const Ops avx2_ops;

bool avx2_supported();

// Active backend. Defaults to AVX2 when the CPU supports it, unless the
// TOKDIFF_KERNELS env var ("scalar"/"avx2") says otherwise.
Backend active();
void select(Backend b);
std::string backend_name();

const Ops& ops();

}  // namespace tokdiff::kernels
