#include "tokdiff/duration.hpp"

#include <cmath>

#include "tokdiff/tokens.hpp"

namespace tokdiff {

double flow_point(double u0, double r, double t) {
    return (1.0 - t) * u0 + t * r;
}

double fm_loss(double v_pred, double u0, double r, double t) {
    (void)t;  // the straight-line target velocity is time-independent
    double d = v_pred - (r - u0);
    return d * d;
}

double flow_euler(double u0, int steps,
                  const std::function<double(double, double)>& velocity) {
    if (steps < 1) throw Error("flow_euler: steps must be >= 1");
    double u = u0;
    double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        double v = velocity(u, s * dt);
        if (!std::isfinite(v)) throw Error("flow_euler: non-finite velocity");
        u += dt * v;
    }
    return u;
}

LengthMap resample_length(int n_src, double r) {
    if (n_src < 1) throw Error("resample_length: n_src must be >= 1");
    if (!(r > 0.0)) throw Error("resample_length: ratio must be positive");
    LengthMap out;
    out.n_tgt = static_cast<int>(std::floor(n_src * r + 0.5));
    if (out.n_tgt < 1) out.n_tgt = 1;
    out.src_index.resize(out.n_tgt);
    // round((j - 1/2) * n_src / n_tgt + 1/2) == floor((2P + Q) / (2Q)) with
    // P = (2j - 1) * n_src + n_tgt and Q = 2 * n_tgt; exact integers, so the
    // half-away-from-zero ties cannot drift with the FP rounding mode.
    long long q = 2LL * out.n_tgt;
    for (int j = 1; j <= out.n_tgt; ++j) {
        long long p = (2LL * j - 1) * n_src + out.n_tgt;
        long long i = (2 * p + q) / (2 * q);
        if (i < 1) i = 1;
        if (i > n_src) i = n_src;
        out.src_index[j - 1] = static_cast<int>(i);
    }
    return out;
}

std::vector<double> twoway_cfg(const std::vector<double>& v,
                               const std::vector<double>& v_no_a,
                               const std::vector<double>& v_no_b, double w1,
                               double w2) {
    if (v.size() != v_no_a.size() || v.size() != v_no_b.size())
        throw Error("twoway_cfg: shape mismatch");
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i)
        out[i] = v[i] + w1 * (v[i] - v_no_a[i]) + w2 * (v[i] - v_no_b[i]);
    return out;
}

}  // namespace tokdiff
