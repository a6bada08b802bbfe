#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "tokdiff/diffusion.hpp"
#include "tokdiff/model.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tokens.hpp"

namespace tokdiff {

// Weights on the duration, common-token, and auxiliary-label terms.
struct LossWeights {
    double beta1 = 1.0;  // duration (flow matching)
    double beta2 = 1.0;  // common-token BCE
    double beta3 = 0.2;  // auxiliary-label CTC
};

struct TrainOptions {
    LossWeights weights;
    MaskSchedule schedule;
    BartRates bart;
    double content_dropout = 0.1;  // per sample: decode unconditionally
    double pos_weight = 2.0;       // common-token BCE positive weight
};

// Component values are the unweighted means; total applies the weights.
struct LossBreakdown {
    double total = 0.0;
    double dlm = 0.0;
    double dp = 0.0;
    double ctp = 0.0;
    double ctc = 0.0;
    int masked_tokens = 0;
    int ctc_skipped = 0;  // samples too short for their label sequence
};

// Batch objective on one tape. Stage 1 ignores the paired source: the
// encoder sees a BART-corrupted copy of the target and only the denoising
// and CTC terms are active. Stage 2 encodes the paired source and adds the
// common-token and duration terms. Per-sample randomness (corruption time,
// masking, dropout, flow time and noise) is drawn from rng in batch order.
// Throws Error naming any component that comes out non-finite.
Var joint_loss_node(const Model& m, Tape& tape,
                    const std::vector<const PairedSample*>& batch, bool stage2,
                    const TrainOptions& opt, Rng& rng, LossBreakdown* out);

// Forward + single backward; zeroes then fills every gradient buffer.
LossBreakdown joint_loss(Model& m, const std::vector<const PairedSample*>& batch,
                         bool stage2, const TrainOptions& opt, Rng& rng);

struct TrainConfig {
    ModelConfig model;
    MaskSchedule schedule;
    BartRates bart;
    LossWeights weights;
    double lr = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int pretrain_epochs = 4;
    int finetune_epochs = 12;
    int batch_size = 8;
    double content_dropout = 0.1;
    double pos_weight = 2.0;
    int eval_percent = 10;
    uint64_t seed = 1;

    TrainOptions options() const;
    void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct EpochLog {
    int epoch = 0;  // 1-based, contiguous across stages
    int stage = 0;
    LossBreakdown loss;  // mean over the epoch's batches
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool aborted = false;      // non-finite loss or gradient
    std::string abort_reason;  // empty unless aborted
};

// Two-stage loop. Saves ckpt_path after every completed epoch and rewrites
// csv_path with one row per epoch; either path may be empty to skip. On a
// non-finite loss the run stops without saving, so ckpt_path still holds the
// last good epoch. progress may be null.
TrainResult train_model(Model& m, const std::vector<PairedSample>& samples,
                        const TrainConfig& cfg, const std::string& ckpt_path,
                        const std::string& csv_path, std::ostream* progress);

// Index split on the latent sequence hash.
void split_corpus(const std::vector<PairedSample>& samples, int eval_percent,
                  std::vector<int>* train_idx, std::vector<int>* eval_idx);

}  // namespace tokdiff
