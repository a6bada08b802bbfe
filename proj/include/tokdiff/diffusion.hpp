#pragma once

#include <vector>

#include "tokdiff/rng.hpp"
#include "tokdiff/tensor.hpp"
#include "tokdiff/tokens.hpp"

namespace tokdiff {

// Absorbing-mask schedule: lambda(t) = (1 - epsilon) * t + epsilon.
// The epsilon floor keeps the 1/lambda loss weight bounded.
struct MaskSchedule {
    double epsilon = 1e-3;

    double lambda(double t) const { return (1.0 - epsilon) * t + epsilon; }
};

struct CorruptedSeq {
    TokenSeq z;
    std::vector<int> masked;  // ascending indices with z[i] == mask
    double lambda = 0.0;
    double t = 0.0;
};

// Masks each position independently with probability lambda(t).
CorruptedSeq corrupt(const TokenSeq& y0, double t, const MaskSchedule& schedule,
                     const Vocab& vocab, Rng& rng);

// Monte Carlo estimate of the reweighted masked-diffusion loss for one
// sample: (1/lambda) * sum over masked positions of -log p(y0_i), divided by
// `norm_tokens` (the batch-wide masked-token count; pass corrupted.masked
// count for a single-sample value). logits has one row per position of z.
double dlm_loss(const Tensor& logits, const TokenSeq& y0,
                const CorruptedSeq& corrupted, int norm_tokens = -1);

// BART-style source corruption for pretraining. Spans are collapsed to a
// single random content token (the encoder rejects [MASK], so a literal mask
// cannot stand in), single tokens are deleted or substituted. At least one
// token is always retained.
struct BartRates {
    double span = 0.3;         // expected fraction of tokens covered by spans
    double span_mean_len = 3;  // Poisson mean span length (min 1)
    double del = 0.1;
    double sub = 0.1;
};

TokenSeq bart_corrupt(const TokenSeq& y, const BartRates& rates,
                      const Vocab& vocab, Rng& rng);

}  // namespace tokdiff
