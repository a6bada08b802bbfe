#include "tokdiff/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "tokdiff/tokens.hpp"

namespace tokdiff {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Extended label sequence: blank, l1, blank, l2, ..., blank.
std::vector<int> extend_labels(const std::vector<int>& labels, int blank) {
    std::vector<int> z(2 * labels.size() + 1, blank);
    for (size_t i = 0; i < labels.size(); ++i) z[2 * i + 1] = labels[i];
    return z;
}

struct CtcTables {
    std::vector<double> logp;   // T x C row log-softmax of the logits
    std::vector<double> alpha;  // T x S
    double log_total = kNegInf;
    int T = 0, C = 0, S = 0;
};

CtcTables ctc_forward(const Tensor& logits, const std::vector<int>& labels) {
    const int T = logits.rows, C = logits.cols;
    const int blank = C - 1;
    if (C < 2) throw Error("ctc: logits need at least two classes");
    for (int l : labels)
        if (l < 0 || l >= blank)
            throw Error("ctc: label " + std::to_string(l) +
                        " outside alphabet of size " + std::to_string(blank));
    if (T < ctc_min_frames(labels))
        throw Error("ctc: " + std::to_string(T) + " frames cannot align " +
                    std::to_string(labels.size()) + " labels (need >= " +
                    std::to_string(ctc_min_frames(labels)) + ")");

    std::vector<int> z = extend_labels(labels, blank);
    const int S = static_cast<int>(z.size());

    CtcTables tb;
    tb.T = T;
    tb.C = C;
    tb.S = S;
    tb.logp.resize(static_cast<size_t>(T) * C);
    for (int t = 0; t < T; ++t) {
        double norm = log_sum_exp(logits.row(t), C);
        for (int k = 0; k < C; ++k) tb.logp[t * C + k] = logits.at(t, k) - norm;
    }
    auto lp = [&](int t, int k) { return tb.logp[t * C + k]; };

    tb.alpha.assign(static_cast<size_t>(T) * S, kNegInf);
    auto a = [&](int t, int s) -> double& { return tb.alpha[t * S + s]; };
    a(0, 0) = lp(0, blank);
    if (S > 1) a(0, 1) = lp(0, z[1]);
    for (int t = 1; t < T; ++t) {
        for (int s = 0; s < S; ++s) {
            double acc = a(t - 1, s);
            if (s >= 1) acc = lse2(acc, a(t - 1, s - 1));
            if (s >= 2 && z[s] != blank && z[s] != z[s - 2])
                acc = lse2(acc, a(t - 1, s - 2));
            a(t, s) = acc == kNegInf ? kNegInf : acc + lp(t, z[s]);
        }
    }
    tb.log_total = a(T - 1, S - 1);
    if (S > 1) tb.log_total = lse2(tb.log_total, a(T - 1, S - 2));
    return tb;
}

}  // namespace

int ctc_min_frames(const std::vector<int>& labels) {
    int extra = 0;
    for (size_t i = 1; i < labels.size(); ++i)
        if (labels[i] == labels[i - 1]) ++extra;
    return static_cast<int>(labels.size()) + extra;
}

double ctc_loss(const Tensor& logits, const std::vector<int>& labels) {
    return -ctc_forward(logits, labels).log_total;
}

Var ctc_loss_node(Var logits, const std::vector<int>& labels) {
    Graph* g = logits.g;
    const Tensor& L = logits.val();
    CtcTables tb = ctc_forward(L, labels);
    const int T = tb.T, C = tb.C, S = tb.S;
    const int blank = C - 1;
    std::vector<int> z = extend_labels(labels, blank);

    // beta excludes the emission at its own frame, so alpha + beta is the
    // log-probability of passing through state s at frame t.
    std::vector<double> beta(static_cast<size_t>(T) * S, kNegInf);
    auto b = [&](int t, int s) -> double& { return beta[t * S + s]; };
    auto lp = [&](int t, int k) { return tb.logp[t * C + k]; };
    b(T - 1, S - 1) = 0.0;
    if (S > 1) b(T - 1, S - 2) = 0.0;
    for (int t = T - 2; t >= 0; --t) {
        for (int s = 0; s < S; ++s) {
            double acc = b(t + 1, s) == kNegInf
                             ? kNegInf
                             : b(t + 1, s) + lp(t + 1, z[s]);
            if (s + 1 < S && b(t + 1, s + 1) != kNegInf)
                acc = lse2(acc, b(t + 1, s + 1) + lp(t + 1, z[s + 1]));
            if (s + 2 < S && z[s + 2] != blank && z[s + 2] != z[s] &&
                b(t + 1, s + 2) != kNegInf)
                acc = lse2(acc, b(t + 1, s + 2) + lp(t + 1, z[s + 2]));
            b(t, s) = acc;
        }
    }

    auto dL = std::make_shared<Tensor>(T, C);
    for (int t = 0; t < T; ++t) {
        std::vector<double> log_occ(C, kNegInf);
        for (int s = 0; s < S; ++s) {
            double v = tb.alpha[t * S + s] + b(t, s);
            if (v != kNegInf) log_occ[z[s]] = lse2(log_occ[z[s]], v);
        }
        for (int k = 0; k < C; ++k) {
            double post = log_occ[k] == kNegInf
                              ? 0.0
                              : std::exp(log_occ[k] - tb.log_total);
            dL->at(t, k) = std::exp(lp(t, k)) - post;
        }
    }

    Tensor out(1, 1);
    out.v[0] = -tb.log_total;
    int li = logits.i, oi = static_cast<int>(g->size());
    return g->node(std::move(out), [li, oi, dL](Graph& gr) {
        double go = gr.grad(oi).v[0];
        Tensor& d = gr.grad(li);
        for (int i = 0; i < d.size(); ++i) d.v[i] += go * dL->v[i];
    });
}

}  // namespace tokdiff
