#include "tokdiff/diffusion.hpp"

#include <cmath>

namespace tokdiff {

CorruptedSeq corrupt(const TokenSeq& y0, double t, const MaskSchedule& schedule,
                     const Vocab& vocab, Rng& rng) {
    if (t < 0.0 || t > 1.0)
        throw Error("corrupt: t must lie in [0,1], got " + std::to_string(t));
    CorruptedSeq out;
    out.t = t;
    out.lambda = schedule.lambda(t);
    out.z = y0;
    for (size_t i = 0; i < y0.size(); ++i) {
        if (rng.uniform() < out.lambda) {
            out.z[i] = vocab.mask_id();
            out.masked.push_back(static_cast<int>(i));
        }
    }
    return out;
}

double dlm_loss(const Tensor& logits, const TokenSeq& y0,
                const CorruptedSeq& corrupted, int norm_tokens) {
    if (corrupted.masked.empty()) return 0.0;
    if (logits.rows != static_cast<int>(corrupted.z.size()))
        throw Error("dlm_loss: logits row count != sequence length");
    if (norm_tokens < 0) norm_tokens = static_cast<int>(corrupted.masked.size());
    double ce = 0.0;
    for (int i : corrupted.masked) {
        const double* row = logits.row(i);
        ce += log_sum_exp(row, logits.cols) - row[y0[i]];
    }
    return ce / corrupted.lambda / norm_tokens;
}

namespace {

int poisson_at_least_one(double mean, Rng& rng) {
    // Knuth sampler, clamped below at 1.
    double limit = std::exp(-mean);
    double prod = rng.uniform();
    int k = 0;
    while (prod > limit && k < 64) {
        ++k;
        prod *= rng.uniform();
    }
    return std::max(1, k);
}

}  // namespace

TokenSeq bart_corrupt(const TokenSeq& y, const BartRates& rates,
                      const Vocab& vocab, Rng& rng) {
    if (y.empty()) throw Error("bart_corrupt: empty sequence");
    const int n = static_cast<int>(y.size());
    // Per-position probability of starting a span, chosen so the expected
    // covered fraction equals rates.span.
    double start_p =
        rates.span_mean_len > 0 ? rates.span / std::max(1.0, rates.span_mean_len)
                                : 0.0;
    TokenSeq out;
    out.reserve(y.size());
    int i = 0;
    while (i < n) {
        if (start_p > 0.0 && rng.bernoulli(start_p)) {
            int len = std::min(poisson_at_least_one(rates.span_mean_len, rng),
                               n - i);
            out.push_back(static_cast<int>(rng.below(vocab.size)));
            i += len;
            continue;
        }
        if (rates.del > 0.0 && rng.bernoulli(rates.del)) {
            ++i;
            continue;
        }
        if (rates.sub > 0.0 && rng.bernoulli(rates.sub)) {
            out.push_back(static_cast<int>(rng.below(vocab.size)));
            ++i;
            continue;
        }
        out.push_back(y[i]);
        ++i;
    }
    if (out.empty()) out.push_back(y[0]);  // empty guard
    return out;
}

}  // namespace tokdiff
