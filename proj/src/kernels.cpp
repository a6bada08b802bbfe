#include "tokdiff/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace tokdiff::kernels {

bool avx2_supported() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Backend detect() {
    if (const char* env = std::getenv("TOKDIFF_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_supported())
            return Backend::Avx2;
    }
    return avx2_supported() ? Backend::Avx2 : Backend::Scalar;
}

Backend g_backend = detect();

}  // namespace

Backend active() { return g_backend; }

void select(Backend b) {
    g_backend = (b == Backend::Avx2 && avx2_supported()) ? Backend::Avx2
                                                         : Backend::Scalar;
}

std::string backend_name() {
    return g_backend == Backend::Avx2 ? "avx2" : "scalar";
}

const Ops& ops() {
    return g_backend == Backend::Avx2 ? avx2_ops : scalar_ops;
}

}  // namespace tokdiff::kernels
