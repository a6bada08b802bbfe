#include "tokdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tokdiff/duration.hpp"

namespace tokdiff {

namespace {

std::vector<char> reuse_set(const TokenSeq& src, const CtpScores& scores,
                            const SamplerConfig& cfg, Rng& rng) {
    int n = static_cast<int>(src.size());
    std::vector<char> in(n, 0);
    switch (cfg.reuse) {
        case SamplerConfig::Reuse::Threshold:
            for (int i = 0; i < n; ++i) in[i] = scores[i] > cfg.tau ? 1 : 0;
            break;
        case SamplerConfig::Reuse::Proportion:
        case SamplerConfig::Reuse::Random: {
            if (cfg.proportion < 0.0 || cfg.proportion > 1.0)
                throw Error("sampler: proportion must be in [0, 1]");
            int keep = static_cast<int>(std::ceil(cfg.proportion * n));
            keep = std::min(keep, n);
            std::vector<int> order(n);
            std::iota(order.begin(), order.end(), 0);
            if (cfg.reuse == SamplerConfig::Reuse::Proportion) {
                std::sort(order.begin(), order.end(), [&](int a, int b) {
                    if (scores[a] != scores[b]) return scores[a] > scores[b];
                    return a < b;
                });
            } else {
                for (int i = 0; i < n - 1; ++i) {
                    int j = i + static_cast<int>(rng.below(n - i));
                    std::swap(order[i], order[j]);
                }
            }
            for (int i = 0; i < keep; ++i) in[order[i]] = 1;
            break;
        }
        case SamplerConfig::Reuse::None:
            break;
    }
    return in;
}

}  // namespace

InitResult init_target(const TokenSeq& src, const CtpScores& scores, double r,
                       const SamplerConfig& cfg, const Vocab& vocab, Rng& rng) {
    if (src.empty()) throw Error("sampler: empty source");
    if (scores.size() != src.size())
        throw Error("sampler: scores/source length mismatch");
    std::vector<char> in = reuse_set(src, scores, cfg, rng);
    LengthMap lm = resample_length(static_cast<int>(src.size()), r);
    InitResult res;
    res.z0.resize(lm.n_tgt);
    res.reused_from.assign(lm.n_tgt, -1);
    for (int j = 0; j < lm.n_tgt; ++j) {
        int i = lm.src_index[j] - 1;
        if (in[i]) {
            res.z0[j] = src[i];
            res.reused_from[j] = i;
        } else {
            res.z0[j] = vocab.mask_id();
        }
    }
    return res;
}

TokenSeq greedy_sample(const TokenSeq& z0, const Predictor& predict,
                       const SamplerConfig& cfg, const Vocab& vocab,
                       SamplerTrace* trace) {
    if (cfg.steps < 1) throw Error("sampler: steps must be >= 1");
    TokenSeq z = z0;
    int n_tgt = static_cast<int>(z.size());
    std::vector<int> masked;
    for (int j = 0; j < n_tgt; ++j)
        if (z[j] == vocab.mask_id()) masked.push_back(j);

    int n_mask = static_cast<int>(masked.size());
    int k = (n_tgt + cfg.steps - 1) / cfg.steps;
    int t_eff = n_mask == 0 ? 0 : (n_mask + k - 1) / k;
    int s0 = std::max(1, cfg.steps - t_eff + 1);
    if (trace) {
        trace->n_mask0 = n_mask;
        trace->k = k;
        trace->t_eff = t_eff;
        trace->s0 = s0;
        trace->steps.clear();
    }

    struct Cand {
        double gamma;
        int pos;
        int tok;
    };
    int step_no = s0;
    while (!masked.empty()) {
        Tensor logits = predict(z);
        if (logits.rows != n_tgt || logits.cols != vocab.size)
            throw Error("sampler: predictor returned " +
                        std::to_string(logits.rows) + "x" +
                        std::to_string(logits.cols) + ", expected " +
                        std::to_string(n_tgt) + "x" + std::to_string(vocab.size));
        std::vector<Cand> cands;
        cands.reserve(masked.size());
        for (int j : masked) {
            const double* row = logits.row(j);
            int best = 0;
            for (int c = 1; c < logits.cols; ++c)
                if (row[c] > row[best]) best = c;
            double gamma = std::exp(row[best] - log_sum_exp(row, logits.cols));
            cands.push_back({gamma, j, best});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.gamma != b.gamma) return a.gamma > b.gamma;
            return a.pos < b.pos;
        });
        int take = std::min<int>(k, static_cast<int>(cands.size()));
        StepRecord rec;
        rec.step = step_no;
        for (int i = 0; i < take; ++i) {
            z[cands[i].pos] = cands[i].tok;
            rec.positions.push_back(cands[i].pos);
            rec.confidences.push_back(cands[i].gamma);
        }
        if (trace) trace->steps.push_back(std::move(rec));
        std::vector<int> still;
        still.reserve(masked.size() - take);
        for (int j : masked)
            if (z[j] == vocab.mask_id()) still.push_back(j);
        masked = std::move(still);
        ++step_no;
    }
    return z;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(std::string("convert/") + name + ": " + e.what());
    }
}

}  // namespace

ConvertResult convert(const Model& m, const TokenSeq& src,
                      const SamplerConfig& cfg, RatioMode ratio_mode,
                      double explicit_ratio, int flow_steps) {
    const Vocab vb = m.config().vocab_ids();
    Rng root(cfg.seed);
    Rng flow_rng = root.child("flow");
    Rng reuse_rng = root.child("reuse");

    Tensor c = stage("encode", [&] { return m.encode(src); });
    CtpScores scores = stage("score", [&] { return m.score_ctp(c, src); });
    double r = ratio_mode == RatioMode::Auto
                   ? stage("ratio", [&] {
                         return m.predict_ratio(c, src, flow_steps, flow_rng);
                     })
                   : explicit_ratio;
    InitResult init = stage("init", [&] {
        return init_target(src, scores, r, cfg, vb, reuse_rng);
    });

    ConvertResult res;
    res.ratio = r;
    res.scores = std::move(scores);
    for (int j = 0; j < static_cast<int>(init.reused_from.size()); ++j)
        if (init.reused_from[j] >= 0) res.trace.reuse_targets.push_back(j);

    InferenceDecoder dec_cond(m, &c);
    InferenceDecoder dec_uncond(m, nullptr);
    Predictor pred = [&](const TokenSeq& z) {
        Tensor cond = dec_cond.logits(z);
        if (cfg.cfg_weight == 0.0) return cond;
        Tensor uncond = dec_uncond.logits(z);
        return cfg_combine(cond, uncond, cfg.cfg_weight);
    };
    res.output = stage("sample", [&] {
        return greedy_sample(init.z0, pred, cfg, vb, &res.trace);
    });
    return res;
}

}  // namespace tokdiff
