#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokdiff/ctp.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tensor.hpp"
#include "tokdiff/tokens.hpp"

namespace tokdiff {

struct ModelConfig {
    int vocab = 64;      // content ids; specials sit above
    int alphabet = 16;   // auxiliary label alphabet (blank is alphabet)
    int d_model = 64;
    int n_heads = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int d_ff = 128;
    int rel_clip = 128;       // encoder relative-position clip radius; must
                              // exceed typical source length so boundary
                              // truncation reaches every position (the only
                              // absolute-position signal in the encoder)
    double rope_base = 10000.0;

    Vocab vocab_ids() const { return Vocab(vocab); }
    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

// One trainable tensor with its gradient and Adam moment buffers.
struct Param {
    std::string name;
    Tensor w, g, m, v;
};

class ParamStore {
public:
    int add_gauss(const std::string& name, int rows, int cols, double scale,
                  const Rng& root);
    int add_const(const std::string& name, int rows, int cols, double value);

    Param& at(int i) { return params_[i]; }
    const Param& at(int i) const { return params_[i]; }
    int find(const std::string& name) const;  // -1 when absent
    int count() const { return static_cast<int>(params_.size()); }
    long long scalar_count() const;

    void zero_grads();
    // One Adam update over every parameter from the accumulated gradients.
    void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8);
    int steps_taken() const { return step_; }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
    int step_ = 0;
};

// Mirrors parameters onto a Graph as leaves (lazily, memoized) so one forward
// pass can reference each parameter once, then pulls gradients back out.
class Tape {
public:
    Tape(Graph& g, const ParamStore& ps);
    Var p(int param_index);
    Var leaf(const Tensor& t) { return g_->leaf(t); }
    Graph& graph() { return *g_; }

    // Adds tape gradients into the store's buffers. Throws Error naming the
    // parameter when a gradient is not finite.
    void harvest(ParamStore& into);

private:
    Graph* g_;
    const ParamStore* ps_;
    std::vector<int> node_of_;
    std::vector<int> used_;
};

// Token diffusion model: relative-bias encoder over source tokens, heads for
// common-token scores / auxiliary-label logits / duration, and a packed
// [START] content [TASK] tokens [END] decoder with RoPE and a two-block
// attention mask (content rows see only content, token rows see everything).
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }

    // Tape forward passes (training and gradient checks).
    Var encode_t(Tape& t, const TokenSeq& src) const;             // S x d
    Var ctc_logits_t(Tape& t, Var content) const;                 // S x (A+1)
    Var ctp_probs_t(Tape& t, Var content, const TokenSeq& src) const;  // S x 1
    Var dp_cond_t(Tape& t, Var content, const TokenSeq& src) const;    // 1 x d
    Var dp_velocity_t(Tape& t, Var cond, double u, double time) const;  // 1 x 1
    // Per-token logits over content ids; content absent = unconditional branch.
    Var decode_t(Tape& t, const TokenSeq& z, std::optional<Var> content) const;
    // Full packed hidden states after the final norm (probing the mask).
    Var decode_packed_t(Tape& t, const TokenSeq& z,
                        std::optional<Var> content) const;

    // No-tape conveniences for inference paths.
    Tensor encode(const TokenSeq& src) const;
    CtpScores score_ctp(const Tensor& content, const TokenSeq& src) const;
    double predict_ratio(const Tensor& content, const TokenSeq& src, int steps,
                         Rng& rng) const;

private:
    struct LayerIdx {
        int ln1_g, ln1_b;
        std::vector<int> wq, wk, wv;  // per head, d x dh
        std::vector<int> rel;         // per head, 1 x (2*clip+1); empty = none
        int wo, bo;
        int ln2_g, ln2_b;
        int ff_w1, ff_b1, ff_w2, ff_b2;
    };

    LayerIdx make_layer(const std::string& prefix, bool with_rel,
                        const Rng& root);
    Var attn_block(Tape& t, Var x, const LayerIdx& L, const Tensor* mask_bias,
                   const std::vector<int>* rope_pos) const;

    friend class InferenceDecoder;

    ModelConfig cfg_;
    ParamStore ps_;

    int enc_embed_, dec_embed_;
    std::vector<LayerIdx> enc_, dec_;
    int enc_lnf_g_, enc_lnf_b_, dec_lnf_g_, dec_lnf_b_;
    int out_w_, out_b_;
    int ctc_w_, ctc_b_;
    int ctp_w1_, ctp_b1_, ctp_w2_, ctp_b2_;
    int dp_in_w_, dp_in_b_;
    LayerIdx dp_layer_;
    int dp_lnf_g_, dp_lnf_b_;
    int dp_q_, dp_wk_, dp_wv_;
    int dp_v_w1_, dp_v_b1_, dp_v_w2_, dp_v_b2_;
};

// (1+w)*cond - w*uncond in logit space. Throws on shape mismatch or w < 0.
Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double w);

// Flat binary checkpoint: magic, config JSON, then named shape-tagged
// tensors in registration order (see README for the byte layout).
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

// No-tape decoder for sampling loops. The two-block mask makes content rows
// independent of the token block, so their per-layer keys/values are computed
// once and reused across calls with different token sequences. Matches
// decode_t bit for bit on the same kernel backend.
class InferenceDecoder {
public:
    // content == nullptr builds the unconditional branch.
    InferenceDecoder(const Model& m, const Tensor* content);

    // Per-position logits over content ids, rows aligned with z.
    Tensor logits(const TokenSeq& z) const;

private:
    struct HeadKV {
        Tensor k, v;  // (S_c + 1) x dh, RoPE already applied to k
    };
    struct LayerCache {
        std::vector<HeadKV> heads;
    };

    const Model* m_;
    int s_c_;
    std::vector<LayerCache> cache_;
};

}  // namespace tokdiff
