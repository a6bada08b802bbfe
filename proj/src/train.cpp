#include "tokdiff/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tokdiff/corpus.hpp"
#include "tokdiff/ctp.hpp"
#include "tokdiff/duration.hpp"
#include "tokdiff/guidance.hpp"

namespace tokdiff {

namespace {

Var zero_scalar(Tape& tape) { return tape.leaf(Tensor(1, 1)); }

// Monte Carlo draws of (t, u0) per sample for the duration term. The velocity
// net is tiny next to the encoder, so extra draws cut gradient noise in the
// flow-matching estimate at negligible cost.
constexpr int kDpDraws = 8;

Var mean_of_parts(Tape& tape, const std::vector<Var>& parts) {
    if (parts.empty()) return zero_scalar(tape);
    std::vector<double> w(parts.size(), 1.0 / static_cast<double>(parts.size()));
    return weighted_sum(parts, w);
}

void check_finite(const char* name, Var v) {
    if (!std::isfinite(v.scalar()))
        throw Error(std::string("joint loss: ") + name + " term is not finite");
}

}  // namespace

Var joint_loss_node(const Model& m, Tape& tape,
                    const std::vector<const PairedSample*>& batch, bool stage2,
                    const TrainOptions& opt, Rng& rng, LossBreakdown* out) {
    if (batch.empty()) throw Error("joint loss: empty batch");
    Vocab vocab = m.config().vocab_ids();

    // All randomness first, in batch order, so graph construction order can
    // never shift the streams.
    struct Prep {
        TokenSeq enc_in;
        CorruptedSeq corr;
        bool drop = false;
        double t_dp[kDpDraws] = {}, u0[kDpDraws] = {};
    };
    std::vector<Prep> preps(batch.size());
    int total_masked = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const PairedSample* s = batch[i];
        if (s->source.empty() || s->target.empty())
            throw Error("joint loss: empty sequence in batch");
        Prep& p = preps[i];
        p.enc_in = stage2 ? s->source
                          : bart_corrupt(s->target, opt.bart, vocab, rng);
        p.corr = corrupt(s->target, rng.uniform(), opt.schedule, vocab, rng);
        p.drop = rng.uniform() < opt.content_dropout;
        if (stage2) {
            if (s->common_labels.size() != s->source.size())
                throw Error("joint loss: sample lacks per-position labels");
            for (int k = 0; k < kDpDraws; ++k) {
                p.t_dp[k] = rng.uniform();
                p.u0[k] = rng.normal();
            }
        }
        total_masked += static_cast<int>(p.corr.masked.size());
    }

    std::vector<Var> ce_parts, ctc_parts, ctp_parts, dp_parts;
    std::vector<double> ce_weights;
    int ctc_skipped = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const PairedSample* s = batch[i];
        const Prep& p = preps[i];
        Var content = m.encode_t(tape, p.enc_in);
        if (!p.corr.masked.empty()) {
            std::optional<Var> cond;
            if (!p.drop) cond = content;
            Var logits = m.decode_t(tape, p.corr.z, cond);
            ce_parts.push_back(cross_entropy_rows(logits, s->target, p.corr.masked));
            ce_weights.push_back(1.0 / (p.corr.lambda * total_masked));
        }
        if (!s->latent_labels.empty() &&
            static_cast<int>(p.enc_in.size()) >= ctc_min_frames(s->latent_labels)) {
            ctc_parts.push_back(
                ctc_loss_node(m.ctc_logits_t(tape, content), s->latent_labels));
        } else {
            ++ctc_skipped;
        }
        if (stage2) {
            Var probs = m.ctp_probs_t(tape, content, s->source);
            ctp_parts.push_back(
                ctp_loss_node(probs, s->common_labels, opt.pos_weight));
            Var cond = m.dp_cond_t(tape, content, s->source);
            double r = s->ratio();
            for (int k = 0; k < kDpDraws; ++k) {
                double ut = flow_point(p.u0[k], r, p.t_dp[k]);
                Var v = m.dp_velocity_t(tape, cond, ut, p.t_dp[k]);
                Var diff =
                    add(v, tape.leaf(Tensor::filled(1, 1, -(r - p.u0[k]))));
                dp_parts.push_back(square(diff));
            }
        }
    }

    Var dlm = ce_parts.empty() ? zero_scalar(tape)
                               : weighted_sum(ce_parts, ce_weights);
    Var dp = mean_of_parts(tape, dp_parts);
    Var ctp = mean_of_parts(tape, ctp_parts);
    Var ctc = mean_of_parts(tape, ctc_parts);
    check_finite("denoising", dlm);
    check_finite("duration", dp);
    check_finite("common-token", ctp);
    check_finite("auxiliary-label", ctc);
    Var total = weighted_sum(
        {dlm, dp, ctp, ctc},
        {1.0, opt.weights.beta1, opt.weights.beta2, opt.weights.beta3});
    if (out) {
        out->total = total.scalar();
        out->dlm = dlm.scalar();
        out->dp = dp.scalar();
        out->ctp = ctp.scalar();
        out->ctc = ctc.scalar();
        out->masked_tokens = total_masked;
        out->ctc_skipped = ctc_skipped;
    }
    return total;
}

LossBreakdown joint_loss(Model& m, const std::vector<const PairedSample*>& batch,
                         bool stage2, const TrainOptions& opt, Rng& rng) {
    Graph g;
    Tape tape(g, m.params());
    LossBreakdown bd;
    Var total = joint_loss_node(m, tape, batch, stage2, opt, rng, &bd);
    g.backward(total);
    m.params().zero_grads();
    tape.harvest(m.params());
    return bd;
}

TrainOptions TrainConfig::options() const {
    TrainOptions opt;
    opt.weights = weights;
    opt.schedule = schedule;
    opt.bart = bart;
    opt.content_dropout = content_dropout;
    opt.pos_weight = pos_weight;
    return opt;
}

void TrainConfig::validate() const {
    model.validate();
    if (!(schedule.epsilon > 0.0 && schedule.epsilon < 1.0))
        throw Error("train config: epsilon outside (0,1)");
    if (lr <= 0.0) throw Error("train config: nonpositive lr");
    if (pretrain_epochs < 0 || finetune_epochs < 0)
        throw Error("train config: negative epoch count");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (content_dropout < 0.0 || content_dropout > 1.0)
        throw Error("train config: content_dropout outside [0,1]");
    if (pos_weight <= 0.0) throw Error("train config: nonpositive pos_weight");
    if (eval_percent < 0 || eval_percent > 100)
        throw Error("train config: eval_percent outside [0,100]");
}

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(config_to_json(cfg.model));
    j["epsilon"] = cfg.schedule.epsilon;
    j["bart"] = {{"span", cfg.bart.span},
                 {"span_mean_len", cfg.bart.span_mean_len},
                 {"del", cfg.bart.del},
                 {"sub", cfg.bart.sub}};
    j["beta1"] = cfg.weights.beta1;
    j["beta2"] = cfg.weights.beta2;
    j["beta3"] = cfg.weights.beta3;
    j["lr"] = cfg.lr;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["pretrain_epochs"] = cfg.pretrain_epochs;
    j["finetune_epochs"] = cfg.finetune_epochs;
    j["batch_size"] = cfg.batch_size;
    j["content_dropout"] = cfg.content_dropout;
    j["pos_weight"] = cfg.pos_weight;
    j["eval_percent"] = cfg.eval_percent;
    j["seed"] = cfg.seed;
    return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw Error("train config: malformed JSON");
    static const char* known[] = {
        "model",        "epsilon",       "bart",
        "beta1",        "beta2",         "beta3",
        "lr",           "adam_beta1",    "adam_beta2",
        "adam_eps",     "pretrain_epochs", "finetune_epochs",
        "batch_size",   "content_dropout", "pos_weight",
        "eval_percent", "seed"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw Error("train config: unknown key \"" + it.key() + "\"");
    }
    TrainConfig cfg;
    try {
        if (j.contains("model")) cfg.model = config_from_json(j["model"].dump());
        if (j.contains("epsilon"))
            cfg.schedule.epsilon = j["epsilon"].get<double>();
        if (j.contains("bart")) {
            const auto& b = j["bart"];
            if (b.contains("span")) cfg.bart.span = b["span"].get<double>();
            if (b.contains("span_mean_len"))
                cfg.bart.span_mean_len = b["span_mean_len"].get<double>();
            if (b.contains("del")) cfg.bart.del = b["del"].get<double>();
            if (b.contains("sub")) cfg.bart.sub = b["sub"].get<double>();
        }
        if (j.contains("beta1")) cfg.weights.beta1 = j["beta1"].get<double>();
        if (j.contains("beta2")) cfg.weights.beta2 = j["beta2"].get<double>();
        if (j.contains("beta3")) cfg.weights.beta3 = j["beta3"].get<double>();
        if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
        if (j.contains("adam_beta1")) cfg.adam_beta1 = j["adam_beta1"].get<double>();
        if (j.contains("adam_beta2")) cfg.adam_beta2 = j["adam_beta2"].get<double>();
        if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
        if (j.contains("pretrain_epochs"))
            cfg.pretrain_epochs = j["pretrain_epochs"].get<int>();
        if (j.contains("finetune_epochs"))
            cfg.finetune_epochs = j["finetune_epochs"].get<int>();
        if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
        if (j.contains("content_dropout"))
            cfg.content_dropout = j["content_dropout"].get<double>();
        if (j.contains("pos_weight")) cfg.pos_weight = j["pos_weight"].get<double>();
        if (j.contains("eval_percent"))
            cfg.eval_percent = j["eval_percent"].get<int>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

std::string csv_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

}  // namespace

TrainResult train_model(Model& m, const std::vector<PairedSample>& samples,
                        const TrainConfig& cfg, const std::string& ckpt_path,
                        const std::string& csv_path, std::ostream* progress) {
    cfg.validate();
    if (samples.empty()) throw Error("train: empty corpus");
    TrainOptions opt = cfg.options();
    Rng root(cfg.seed);
    TrainResult res;

    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::binary);
        if (!csv) throw Error("train: cannot open " + csv_path + " for writing");
        csv << "epoch,stage,dlm,dp,ctp,ctc,total,ctc_skipped\n";
    }

    int total_epochs = cfg.pretrain_epochs + cfg.finetune_epochs;
    int epoch = 0;
    for (int stage = 1; stage <= 2; ++stage) {
        int n_ep = stage == 1 ? cfg.pretrain_epochs : cfg.finetune_epochs;
        for (int e = 0; e < n_ep; ++e) {
            ++epoch;
            Rng er = root.child("epoch", static_cast<uint64_t>(epoch));
            std::vector<int> order(samples.size());
            std::iota(order.begin(), order.end(), 0);
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[er.below(i)]);

            LossBreakdown mean;
            int batches = 0;
            for (size_t b = 0; b < order.size();
                 b += static_cast<size_t>(cfg.batch_size)) {
                std::vector<const PairedSample*> batch;
                size_t hi = std::min(order.size(),
                                     b + static_cast<size_t>(cfg.batch_size));
                for (size_t k = b; k < hi; ++k) batch.push_back(&samples[order[k]]);
                LossBreakdown bd;
                try {
                    bd = joint_loss(m, batch, stage == 2, opt, er);
                } catch (const Error& err) {
                    res.aborted = true;
                    res.abort_reason = err.what();
                    return res;
                }
                m.params().adam_step(cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                                     cfg.adam_eps);
                mean.total += bd.total;
                mean.dlm += bd.dlm;
                mean.dp += bd.dp;
                mean.ctp += bd.ctp;
                mean.ctc += bd.ctc;
                mean.masked_tokens += bd.masked_tokens;
                mean.ctc_skipped += bd.ctc_skipped;
                ++batches;
            }
            double inv = 1.0 / std::max(1, batches);
            mean.total *= inv;
            mean.dlm *= inv;
            mean.dp *= inv;
            mean.ctp *= inv;
            mean.ctc *= inv;

            res.log.push_back({epoch, stage, mean});
            if (!ckpt_path.empty()) save_checkpoint(m, ckpt_path);
            if (csv) {
                csv << epoch << ',' << stage << ',' << csv_num(mean.dlm) << ','
                    << csv_num(mean.dp) << ',' << csv_num(mean.ctp) << ','
                    << csv_num(mean.ctc) << ',' << csv_num(mean.total) << ','
                    << mean.ctc_skipped << '\n';
                csv.flush();
            }
            if (progress) {
                *progress << "epoch " << epoch << "/" << total_epochs
                          << " stage " << stage << " total "
                          << csv_num(mean.total) << "\n";
                progress->flush();
            }
        }
    }
    return res;
}

void split_corpus(const std::vector<PairedSample>& samples, int eval_percent,
                  std::vector<int>* train_idx, std::vector<int>* eval_idx) {
    train_idx->clear();
    eval_idx->clear();
    for (size_t i = 0; i < samples.size(); ++i) {
        if (eval_split(samples[i].latent_labels, eval_percent))
            eval_idx->push_back(static_cast<int>(i));
        else
            train_idx->push_back(static_cast<int>(i));
    }
}

}  // namespace tokdiff
