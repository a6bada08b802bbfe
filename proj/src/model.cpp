#include "tokdiff/model.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tokdiff/duration.hpp"
#include "tokdiff/kernels.hpp"

namespace tokdiff {

namespace {

constexpr double kMaskedOut = -1e30;  // additive bias; exp underflows to 0

}  // namespace

void ModelConfig::validate() const {
    if (vocab < 2) throw Error("config: vocab must be >= 2");
    if (alphabet < 2) throw Error("config: alphabet must be >= 2");
    if (d_model < 2 || n_heads < 1 || d_model % n_heads != 0)
        throw Error("config: d_model must be a positive multiple of n_heads");
    if (head_dim() % 2 != 0)
        throw Error("config: head dim must be even (rotary pairs)");
    if (enc_layers < 1 || dec_layers < 1 || d_ff < 1)
        throw Error("config: layer sizes must be positive");
    if (rel_clip < 1) throw Error("config: rel_clip must be >= 1");
    if (!(rope_base > 1.0)) throw Error("config: rope_base must exceed 1");
}

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j{{"vocab", cfg.vocab},
                     {"alphabet", cfg.alphabet},
                     {"d_model", cfg.d_model},
                     {"n_heads", cfg.n_heads},
                     {"enc_layers", cfg.enc_layers},
                     {"dec_layers", cfg.dec_layers},
                     {"d_ff", cfg.d_ff},
                     {"rel_clip", cfg.rel_clip},
                     {"rope_base", cfg.rope_base}};
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw Error(std::string("config: bad JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.vocab = j.at("vocab").get<int>();
        cfg.alphabet = j.at("alphabet").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.n_heads = j.at("n_heads").get<int>();
        cfg.enc_layers = j.at("enc_layers").get<int>();
        cfg.dec_layers = j.at("dec_layers").get<int>();
        cfg.d_ff = j.at("d_ff").get<int>();
        cfg.rel_clip = j.at("rel_clip").get<int>();
        cfg.rope_base = j.at("rope_base").get<double>();
    } catch (const std::exception& e) {
        throw Error(std::string("config: missing or mistyped field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// ParamStore / Tape
// ---------------------------------------------------------------------------

int ParamStore::add_gauss(const std::string& name, int rows, int cols,
                          double scale, const Rng& root) {
    if (index_.count(name)) throw Error("duplicate parameter " + name);
    Param p;
    p.name = name;
    p.w = Tensor(rows, cols);
    p.g = Tensor(rows, cols);
    p.m = Tensor(rows, cols);
    p.v = Tensor(rows, cols);
    Rng r = root.child(name);
    for (double& x : p.w.v) x = scale * r.normal();
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

int ParamStore::add_const(const std::string& name, int rows, int cols,
                          double value) {
    if (index_.count(name)) throw Error("duplicate parameter " + name);
    Param p;
    p.name = name;
    p.w = Tensor::filled(rows, cols, value);
    p.g = Tensor(rows, cols);
    p.m = Tensor(rows, cols);
    p.v = Tensor(rows, cols);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

long long ParamStore::scalar_count() const {
    long long n = 0;
    for (const Param& p : params_) n += p.w.size();
    return n;
}

void ParamStore::zero_grads() {
    for (Param& p : params_) p.g.fill(0.0);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
    ++step_;
    double b1t = std::pow(beta1, step_);
    double b2t = std::pow(beta2, step_);
    for (Param& p : params_)
        kernels::ops().adam_step(p.w.size(), p.w.data(), p.g.data(), p.m.data(),
                                 p.v.data(), lr, beta1, beta2, eps, b1t, b2t);
}

Tape::Tape(Graph& g, const ParamStore& ps)
    : g_(&g), ps_(&ps), node_of_(ps.count(), -1) {}

Var Tape::p(int param_index) {
    if (node_of_[param_index] < 0) {
        node_of_[param_index] = g_->leaf(ps_->at(param_index).w).i;
        used_.push_back(param_index);
    }
    return Var{g_, node_of_[param_index]};
}

void Tape::harvest(ParamStore& into) {
    assert(&into == ps_);
    for (int idx : used_) {
        const Tensor& ng = g_->grad(node_of_[idx]);
        if (!ng.all_finite())
            throw Error("gradient for " + ps_->at(idx).name + " is not finite");
        kernels::ops().axpy(ng.size(), 1.0, ng.data(), into.at(idx).g.data());
    }
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

Model::LayerIdx Model::make_layer(const std::string& prefix, bool with_rel,
                                  const Rng& root) {
    int d = cfg_.d_model, dh = cfg_.head_dim(), ff = cfg_.d_ff;
    double ws = 1.0 / std::sqrt(static_cast<double>(d));
    LayerIdx L;
    L.ln1_g = ps_.add_const(prefix + ".ln1.g", 1, d, 1.0);
    L.ln1_b = ps_.add_const(prefix + ".ln1.b", 1, d, 0.0);
    for (int h = 0; h < cfg_.n_heads; ++h) {
        std::string hp = prefix + ".h" + std::to_string(h);
        L.wq.push_back(ps_.add_gauss(hp + ".wq", d, dh, ws, root));
        L.wk.push_back(ps_.add_gauss(hp + ".wk", d, dh, ws, root));
        L.wv.push_back(ps_.add_gauss(hp + ".wv", d, dh, ws, root));
        if (with_rel)
            L.rel.push_back(
                ps_.add_const(hp + ".rel", 1, 2 * cfg_.rel_clip + 1, 0.0));
    }
    L.wo = ps_.add_gauss(prefix + ".attn.wo", d, d, ws, root);
    L.bo = ps_.add_const(prefix + ".attn.bo", 1, d, 0.0);
    L.ln2_g = ps_.add_const(prefix + ".ln2.g", 1, d, 1.0);
    L.ln2_b = ps_.add_const(prefix + ".ln2.b", 1, d, 0.0);
    L.ff_w1 = ps_.add_gauss(prefix + ".ff.w1", d, ff, ws, root);
    L.ff_b1 = ps_.add_const(prefix + ".ff.b1", 1, ff, 0.0);
    L.ff_w2 = ps_.add_gauss(prefix + ".ff.w2", ff, d,
                            1.0 / std::sqrt(static_cast<double>(ff)), root);
    L.ff_b2 = ps_.add_const(prefix + ".ff.b2", 1, d, 0.0);
    return L;
}

Model::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng root(init_seed);
    int d = cfg_.d_model, V = cfg_.vocab, A = cfg_.alphabet;
    double ws = 1.0 / std::sqrt(static_cast<double>(d));
    double ws2 = 1.0 / std::sqrt(static_cast<double>(2 * d));

    enc_embed_ = ps_.add_gauss("enc.embed", V + 4, d, 0.1, root);
    dec_embed_ = ps_.add_gauss("dec.embed", V + 4, d, 0.1, root);
    for (int l = 0; l < cfg_.enc_layers; ++l)
        enc_.push_back(make_layer("enc.L" + std::to_string(l), true, root));
    enc_lnf_g_ = ps_.add_const("enc.lnf.g", 1, d, 1.0);
    enc_lnf_b_ = ps_.add_const("enc.lnf.b", 1, d, 0.0);
    for (int l = 0; l < cfg_.dec_layers; ++l)
        dec_.push_back(make_layer("dec.L" + std::to_string(l), false, root));
    dec_lnf_g_ = ps_.add_const("dec.lnf.g", 1, d, 1.0);
    dec_lnf_b_ = ps_.add_const("dec.lnf.b", 1, d, 0.0);
    out_w_ = ps_.add_gauss("out.w", d, V, ws, root);
    out_b_ = ps_.add_const("out.b", 1, V, 0.0);

    ctc_w_ = ps_.add_gauss("ctc.w", d, A + 1, ws, root);
    ctc_b_ = ps_.add_const("ctc.b", 1, A + 1, 0.0);

    ctp_w1_ = ps_.add_gauss("ctp.w1", 2 * d, d, ws2, root);
    ctp_b1_ = ps_.add_const("ctp.b1", 1, d, 0.0);
    ctp_w2_ = ps_.add_gauss("ctp.w2", d, 1, ws, root);
    ctp_b2_ = ps_.add_const("ctp.b2", 1, 1, 0.0);

    dp_in_w_ = ps_.add_gauss("dp.in.w", 2 * d, d, ws2, root);
    dp_in_b_ = ps_.add_const("dp.in.b", 1, d, 0.0);
    dp_layer_ = make_layer("dp.L0", false, root);
    dp_lnf_g_ = ps_.add_const("dp.lnf.g", 1, d, 1.0);
    dp_lnf_b_ = ps_.add_const("dp.lnf.b", 1, d, 0.0);
    dp_q_ = ps_.add_gauss("dp.pool.q", 1, d, ws, root);
    dp_wk_ = ps_.add_gauss("dp.pool.wk", d, d, ws, root);
    dp_wv_ = ps_.add_gauss("dp.pool.wv", d, d, ws, root);
    dp_v_w1_ = ps_.add_gauss("dp.vel.w1", d + 2, d,
                             1.0 / std::sqrt(static_cast<double>(d + 2)), root);
    dp_v_b1_ = ps_.add_const("dp.vel.b1", 1, d, 0.0);
    dp_v_w2_ = ps_.add_gauss("dp.vel.w2", d, 1, ws, root);
    dp_v_b2_ = ps_.add_const("dp.vel.b2", 1, 1, 0.0);
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

Var Model::attn_block(Tape& t, Var x, const LayerIdx& L,
                      const Tensor* mask_bias,
                      const std::vector<int>* rope_pos) const {
    int S = x.rows();
    int dh = cfg_.head_dim();
    double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Var h = layernorm(x, t.p(L.ln1_g), t.p(L.ln1_b));
    Var cat{};
    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
        Var q = matmul(h, t.p(L.wq[hd]));
        Var k = matmul(h, t.p(L.wk[hd]));
        Var v = matmul(h, t.p(L.wv[hd]));
        if (rope_pos) {
            q = rope(q, *rope_pos, 1, cfg_.rope_base);
            k = rope(k, *rope_pos, 1, cfg_.rope_base);
        }
        Var scores = scale(matmul_nt(q, k), inv);
        if (!L.rel.empty())
            scores = add(scores, rel_bias(t.p(L.rel[hd]), S, cfg_.rel_clip));
        Var att = mask_bias ? softmax_rows_bias(scores, *mask_bias)
                            : softmax_rows(scores);
        Var o = matmul(att, v);
        cat = hd == 0 ? o : concat_cols(cat, o);
    }
    Var ao = add_rowvec(matmul(cat, t.p(L.wo)), t.p(L.bo));
    x = add(x, ao);
    Var h2 = layernorm(x, t.p(L.ln2_g), t.p(L.ln2_b));
    Var f = gelu(add_rowvec(matmul(h2, t.p(L.ff_w1)), t.p(L.ff_b1)));
    Var f2 = add_rowvec(matmul(f, t.p(L.ff_w2)), t.p(L.ff_b2));
    return add(x, f2);
}

Var Model::encode_t(Tape& t, const TokenSeq& src) const {
    Vocab vb = cfg_.vocab_ids();
    if (src.empty()) throw Error("encode: empty input");
    validate_seq(src, vb, false, "encode input");
    Var x = gather_rows(t.p(enc_embed_), src);
    for (const LayerIdx& L : enc_) x = attn_block(t, x, L, nullptr, nullptr);
    return layernorm(x, t.p(enc_lnf_g_), t.p(enc_lnf_b_));
}

Var Model::ctc_logits_t(Tape& t, Var content) const {
    return add_rowvec(matmul(content, t.p(ctc_w_)), t.p(ctc_b_));
}

Var Model::ctp_probs_t(Tape& t, Var content, const TokenSeq& src) const {
    assert(content.rows() == static_cast<int>(src.size()));
    Var e = gather_rows(t.p(enc_embed_), src);
    Var x = concat_cols(content, e);
    Var h = gelu(add_rowvec(matmul(x, t.p(ctp_w1_)), t.p(ctp_b1_)));
    Var logit = add_rowvec(matmul(h, t.p(ctp_w2_)), t.p(ctp_b2_));
    return sigmoid(logit);
}

Var Model::dp_cond_t(Tape& t, Var content, const TokenSeq& src) const {
    assert(content.rows() == static_cast<int>(src.size()));
    int d = cfg_.d_model;
    Var e = gather_rows(t.p(enc_embed_), src);
    Var x = concat_cols(content, e);
    x = add_rowvec(matmul(x, t.p(dp_in_w_)), t.p(dp_in_b_));
    x = attn_block(t, x, dp_layer_, nullptr, nullptr);
    x = layernorm(x, t.p(dp_lnf_g_), t.p(dp_lnf_b_));
    Var k = matmul(x, t.p(dp_wk_));
    Var v = matmul(x, t.p(dp_wv_));
    Var att = softmax_rows(
        scale(matmul_nt(t.p(dp_q_), k), 1.0 / std::sqrt(static_cast<double>(d))));
    return matmul(att, v);  // 1 x d
}

Var Model::dp_velocity_t(Tape& t, Var cond, double u, double time) const {
    Tensor ut(1, 2);
    ut.v[0] = u;
    ut.v[1] = time;
    Var x = concat_cols(t.leaf(ut), cond);
    Var h = gelu(add_rowvec(matmul(x, t.p(dp_v_w1_)), t.p(dp_v_b1_)));
    return add_rowvec(matmul(h, t.p(dp_v_w2_)), t.p(dp_v_b2_));
}

Var Model::decode_packed_t(Tape& t, const TokenSeq& z,
                           std::optional<Var> content) const {
    Vocab vb = cfg_.vocab_ids();
    if (z.empty()) throw Error("decode: empty token sequence");
    validate_seq(z, vb, true, "decode input");
    int s_c = content ? content->rows() : 0;
    if (content && content->cols() != cfg_.d_model)
        throw Error("decode: content width mismatch");
    int n = static_cast<int>(z.size());
    int p = s_c + n + 3;

    std::vector<Var> parts;
    parts.push_back(gather_rows(t.p(dec_embed_), {vb.start_id()}));
    if (content) parts.push_back(*content);
    TokenSeq tail;
    tail.reserve(n + 2);
    tail.push_back(vb.task_id());
    tail.insert(tail.end(), z.begin(), z.end());
    tail.push_back(vb.end_id());
    parts.push_back(gather_rows(t.p(dec_embed_), tail));
    Var x = concat_rows(parts);

    std::vector<int> pos(p);
    std::iota(pos.begin(), pos.end(), 0);
    Tensor mask(p, p);
    for (int i = 0; i <= s_c; ++i)
        for (int j = s_c + 1; j < p; ++j) mask.at(i, j) = kMaskedOut;

    for (const LayerIdx& L : dec_) x = attn_block(t, x, L, &mask, &pos);
    return layernorm(x, t.p(dec_lnf_g_), t.p(dec_lnf_b_));
}

Var Model::decode_t(Tape& t, const TokenSeq& z,
                    std::optional<Var> content) const {
    int s_c = content ? content->rows() : 0;
    Var full = decode_packed_t(t, z, content);
    Var tok = slice_rows(full, s_c + 2, static_cast<int>(z.size()));
    return add_rowvec(matmul(tok, t.p(out_w_)), t.p(out_b_));
}

Tensor Model::encode(const TokenSeq& src) const {
    Graph g;
    Tape t(g, ps_);
    return encode_t(t, src).val();
}

CtpScores Model::score_ctp(const Tensor& content, const TokenSeq& src) const {
    Graph g;
    Tape t(g, ps_);
    Var probs = ctp_probs_t(t, t.leaf(content), src);
    const Tensor& P = probs.val();
    return CtpScores(P.v.begin(), P.v.end());
}

double Model::predict_ratio(const Tensor& content, const TokenSeq& src,
                            int steps, Rng& rng) const {
    Graph g;
    Tape t(g, ps_);
    Var cond = dp_cond_t(t, t.leaf(content), src);
    double u0 = rng.normal();
    double u = flow_euler(u0, steps, [&](double uu, double tt) {
        return dp_velocity_t(t, cond, uu, tt).scalar();
    });
    return std::clamp(u, kRatioMin, kRatioMax);
}

Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double w) {
    if (w < 0.0) throw Error("cfg: weight must be >= 0");
    if (!cond.same_shape(uncond)) throw Error("cfg: shape mismatch");
    Tensor out(cond.rows, cond.cols);
    // cond + w * (cond - uncond): exact when w == 0 or cond == uncond.
    for (int i = 0; i < out.size(); ++i)
        out.v[i] = cond.v[i] + w * (cond.v[i] - uncond.v[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'K', 'D', 'F', '0', '0', '0', '1'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
    for (double d : v) {
        uint64_t u = std::bit_cast<uint64_t>(d);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = (u >> (8 * i)) & 0xff;
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

void get_doubles(std::istream& is, std::vector<double>& v) {
    for (double& d : v) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
        d = std::bit_cast<double>(u);
    }
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("checkpoint: cannot write " + path);
    os.write(kMagic, 8);
    std::string cfg = config_to_json(m.config());
    put_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const ParamStore& ps = m.params();
    put_u32(os, static_cast<uint32_t>(ps.count()));
    for (int i = 0; i < ps.count(); ++i) {
        const Param& p = ps.at(i);
        put_u32(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(os, static_cast<uint32_t>(p.w.rows));
        put_u32(os, static_cast<uint32_t>(p.w.cols));
        put_doubles(os, p.w.v);
    }
    if (!os) throw Error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot read " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw Error("checkpoint: bad magic in " + path);
    uint32_t cfg_len = get_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw Error("checkpoint: truncated config in " + path);
    ModelConfig cfg = config_from_json(cfg_text);
    Model m(cfg, 0);
    ParamStore& ps = m.params();
    uint32_t n = get_u32(is);
    if (static_cast<int>(n) != ps.count())
        throw Error("checkpoint: parameter count mismatch in " + path);
    for (uint32_t k = 0; k < n; ++k) {
        uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rows = get_u32(is), cols = get_u32(is);
        if (!is) throw Error("checkpoint: truncated header in " + path);
        int idx = ps.find(name);
        if (idx < 0) throw Error("checkpoint: unknown parameter " + name);
        Param& p = ps.at(idx);
        if (p.w.rows != static_cast<int>(rows) ||
            p.w.cols != static_cast<int>(cols))
            throw Error("checkpoint: shape mismatch for " + name);
        get_doubles(is, p.w.v);
        if (!is) throw Error("checkpoint: truncated data for " + name);
    }
    return m;
}

// ---------------------------------------------------------------------------
// InferenceDecoder: no-tape decode with per-layer content K/V reuse.
// The numeric helpers repeat the tape ops' arithmetic exactly (same kernels,
// same operation order) so both paths agree bit for bit per backend.
// ---------------------------------------------------------------------------

namespace {

Tensor num_linear(const Tensor& x, const Tensor& w) {
    Tensor c(x.rows, w.cols);
    kernels::ops().gemm_nn(x.rows, w.cols, x.cols, x.data(), w.data(), c.data(),
                           false);
    return c;
}

void num_add_row(Tensor& x, const Tensor& b) {
    for (int r = 0; r < x.rows; ++r)
        kernels::ops().axpy(x.cols, 1.0, b.data(), x.row(r));
}

Tensor num_layernorm(const Tensor& x, const Tensor& g, const Tensor& b,
                     double eps = 1e-5) {
    int n = x.cols;
    Tensor c(x.rows, n);
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double mean = kernels::ops().vsum(n, xr) / n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        double* cr = c.row(r);
        for (int j = 0; j < n; ++j)
            cr[j] = (xr[j] - mean) * inv * g.v[j] + b.v[j];
    }
    return c;
}

void num_gelu(Tensor& x) {
    for (double& v : x.v) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
}

void num_rope(Tensor& x, const std::vector<int>& pos, double base) {
    int dh = x.cols;  // one head per matrix
    for (int r = 0; r < x.rows; ++r) {
        double* xr = x.row(r);
        for (int p = 0; p < dh / 2; ++p) {
            double theta =
                pos[r] * std::pow(base, -2.0 * p / static_cast<double>(dh));
            double c = std::cos(theta), s = std::sin(theta);
            double x0 = xr[2 * p], x1 = xr[2 * p + 1];
            xr[2 * p] = x0 * c - x1 * s;
            xr[2 * p + 1] = x0 * s + x1 * c;
        }
    }
}

// softmax((q k^T) / sqrt(dh)) row by row.
Tensor num_attention(const Tensor& q, const Tensor& k, int dh) {
    Tensor s(q.rows, k.rows);
    s.fill(0.0);
    kernels::ops().gemm_nt(q.rows, k.rows, q.cols, q.data(), k.data(), s.data());
    kernels::ops().scale(s.size(), 1.0 / std::sqrt(static_cast<double>(dh)),
                         s.data());
    for (int r = 0; r < s.rows; ++r) softmax_inplace(s.row(r), s.cols);
    return s;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
    assert(a.cols == b.cols);
    Tensor c(a.rows + b.rows, a.cols);
    std::copy(a.v.begin(), a.v.end(), c.data());
    std::copy(b.v.begin(), b.v.end(), c.row(a.rows));
    return c;
}

}  // namespace

InferenceDecoder::InferenceDecoder(const Model& m, const Tensor* content)
    : m_(&m) {
    const ModelConfig& cfg = m.cfg_;
    Vocab vb = cfg.vocab_ids();
    int d = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
    s_c_ = content ? content->rows : 0;
    if (content && content->cols != d)
        throw Error("decode: content width mismatch");

    // Content zone ([START] plus content rows) run through every layer once;
    // the mask keeps these rows blind to the token block, so their per-layer
    // keys/values hold for any z.
    Tensor x(s_c_ + 1, d);
    const Tensor& de = m.ps_.at(m.dec_embed_).w;
    std::copy(de.row(vb.start_id()), de.row(vb.start_id()) + d, x.row(0));
    if (content) std::copy(content->v.begin(), content->v.end(), x.row(1));
    std::vector<int> pos(s_c_ + 1);
    std::iota(pos.begin(), pos.end(), 0);

    cache_.resize(cfg.dec_layers);
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const Model::LayerIdx& L = m.dec_[l];
        auto W = [&](int i) -> const Tensor& { return m.ps_.at(i).w; };
        Tensor h = num_layernorm(x, W(L.ln1_g), W(L.ln1_b));
        LayerCache& lc = cache_[l];
        lc.heads.resize(H);
        Tensor cat(x.rows, d);
        for (int hd = 0; hd < H; ++hd) {
            Tensor q = num_linear(h, W(L.wq[hd]));
            Tensor k = num_linear(h, W(L.wk[hd]));
            Tensor v = num_linear(h, W(L.wv[hd]));
            num_rope(q, pos, cfg.rope_base);
            num_rope(k, pos, cfg.rope_base);
            Tensor att = num_attention(q, k, dh);
            Tensor o = num_linear(att, v);  // att rows x dh
            for (int r = 0; r < o.rows; ++r)
                std::copy(o.row(r), o.row(r) + dh, cat.row(r) + hd * dh);
            lc.heads[hd].k = std::move(k);
            lc.heads[hd].v = std::move(v);
        }
        Tensor ao = num_linear(cat, W(L.wo));
        num_add_row(ao, W(L.bo));
        kernels::ops().vadd(x.size(), x.data(), ao.data(), x.data());
        Tensor h2 = num_layernorm(x, W(L.ln2_g), W(L.ln2_b));
        Tensor f = num_linear(h2, W(L.ff_w1));
        num_add_row(f, W(L.ff_b1));
        num_gelu(f);
        Tensor f2 = num_linear(f, W(L.ff_w2));
        num_add_row(f2, W(L.ff_b2));
        kernels::ops().vadd(x.size(), x.data(), f2.data(), x.data());
    }
}

Tensor InferenceDecoder::logits(const TokenSeq& z) const {
    const Model& m = *m_;
    const ModelConfig& cfg = m.cfg_;
    Vocab vb = cfg.vocab_ids();
    if (z.empty()) throw Error("decode: empty token sequence");
    validate_seq(z, vb, true, "decode input");
    int d = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
    int n = static_cast<int>(z.size());
    auto W = [&](int i) -> const Tensor& { return m.ps_.at(i).w; };

    // Token zone: [TASK], tokens, [END].
    Tensor x(n + 2, d);
    const Tensor& de = m.ps_.at(m.dec_embed_).w;
    std::copy(de.row(vb.task_id()), de.row(vb.task_id()) + d, x.row(0));
    for (int j = 0; j < n; ++j)
        std::copy(de.row(z[j]), de.row(z[j]) + d, x.row(1 + j));
    std::copy(de.row(vb.end_id()), de.row(vb.end_id()) + d, x.row(n + 1));
    std::vector<int> pos(n + 2);
    for (int i = 0; i < n + 2; ++i) pos[i] = s_c_ + 1 + i;

    for (int l = 0; l < cfg.dec_layers; ++l) {
        const Model::LayerIdx& L = m.dec_[l];
        const LayerCache& lc = cache_[l];
        Tensor h = num_layernorm(x, W(L.ln1_g), W(L.ln1_b));
        Tensor cat(x.rows, d);
        for (int hd = 0; hd < H; ++hd) {
            Tensor q = num_linear(h, W(L.wq[hd]));
            Tensor kt = num_linear(h, W(L.wk[hd]));
            Tensor vt = num_linear(h, W(L.wv[hd]));
            num_rope(q, pos, cfg.rope_base);
            num_rope(kt, pos, cfg.rope_base);
            Tensor k_all = vstack(lc.heads[hd].k, kt);
            Tensor v_all = vstack(lc.heads[hd].v, vt);
            Tensor att = num_attention(q, k_all, dh);
            Tensor o = num_linear(att, v_all);
            for (int r = 0; r < o.rows; ++r)
                std::copy(o.row(r), o.row(r) + dh, cat.row(r) + hd * dh);
        }
        Tensor ao = num_linear(cat, W(L.wo));
        num_add_row(ao, W(L.bo));
        kernels::ops().vadd(x.size(), x.data(), ao.data(), x.data());
        Tensor h2 = num_layernorm(x, W(L.ln2_g), W(L.ln2_b));
        Tensor f = num_linear(h2, W(L.ff_w1));
        num_add_row(f, W(L.ff_b1));
        num_gelu(f);
        Tensor f2 = num_linear(f, W(L.ff_w2));
        num_add_row(f2, W(L.ff_b2));
        kernels::ops().vadd(x.size(), x.data(), f2.data(), x.data());
    }

    Tensor xf = num_layernorm(x, W(m.dec_lnf_g_), W(m.dec_lnf_b_));
    Tensor tok(n, d);
    std::copy(xf.row(1), xf.row(1) + static_cast<size_t>(n) * d, tok.data());
    Tensor logits = num_linear(tok, W(m.out_w_));
    num_add_row(logits, W(m.out_b_));
    return logits;
}

}  // namespace tokdiff
