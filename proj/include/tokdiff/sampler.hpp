#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tokdiff/ctp.hpp"
#include "tokdiff/model.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tensor.hpp"
#include "tokdiff/tokens.hpp"

namespace tokdiff {

struct SamplerConfig {
    enum class Reuse { Threshold, Proportion, Random, None };

    int steps = 32;           // T
    double tau = 1.0;         // threshold-mode cutoff; reuse scores > tau
    double cfg_weight = 1.0;  // guidance weight in logit space
    Reuse reuse = Reuse::Threshold;
    double proportion = 0.5;  // proportion / random modes keep ceil(p * N_src)
    uint64_t seed = 0;
};

struct StepRecord {
    int step = 0;                     // step number starting at s0
    std::vector<int> positions;       // 0-based target positions unmasked here
    std::vector<double> confidences;  // matching max-softmax values
};

struct SamplerTrace {
    std::vector<int> reuse_targets;  // 0-based target positions seeded from source
    int n_mask0 = 0;                 // masked count after initialization
    int k = 0;                       // ceil(N_tgt / T)
    int t_eff = 0;                   // ceil(N_mask / K)
    int s0 = 0;                      // max(1, T - T_eff + 1)
    std::vector<StepRecord> steps;
};

struct InitResult {
    TokenSeq z0;
    std::vector<int> reused_from;  // per target position: 0-based source index or -1
};

// Nearest-interpolation initialization: 1-based target position j copies
// source position i* = round((j-1/2)*N_src/N_tgt + 1/2) when i* lands in the
// reuse set, and holds [MASK] otherwise. The reuse set comes from the scores
// per cfg.reuse; rng is consumed only in Random mode.
InitResult init_target(const TokenSeq& src, const CtpScores& scores, double r,
                       const SamplerConfig& cfg, const Vocab& vocab, Rng& rng);

// Already-CFG-combined logits for the current z; one row per position over
// content ids.
using Predictor = std::function<Tensor(const TokenSeq&)>;

// Iterative unmasking: per step take argmax and max-softmax confidence at
// every masked position, commit the top-min(K, masked) by confidence (ties:
// lowest position), leave everything else untouched.
TokenSeq greedy_sample(const TokenSeq& z0, const Predictor& predict,
                       const SamplerConfig& cfg, const Vocab& vocab,
                       SamplerTrace* trace = nullptr);

enum class RatioMode { Explicit, Auto };

struct ConvertResult {
    TokenSeq output;
    double ratio = 1.0;
    CtpScores scores;
    SamplerTrace trace;
};

// Full pipeline: encode, common-token scores, length ratio (predicted or
// explicit), initialization, greedy sampling.
ConvertResult convert(const Model& m, const TokenSeq& src,
                      const SamplerConfig& cfg, RatioMode ratio_mode,
                      double explicit_ratio = 1.0, int flow_steps = 16);

}  // namespace tokdiff
