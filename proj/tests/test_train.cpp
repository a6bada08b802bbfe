#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tokdiff/corpus.hpp"
#include "tokdiff/model.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tokens.hpp"
#include "tokdiff/train.hpp"

using namespace tokdiff;

namespace {

ModelConfig tiny_model() {
    ModelConfig mc;
    mc.vocab = 64;
    mc.alphabet = 16;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.enc_layers = 1;
    mc.dec_layers = 1;
    mc.d_ff = 24;
    mc.rel_clip = 4;
    return mc;
}

std::vector<PairedSample> tiny_corpus(int n, uint64_t seed) {
    CorpusParams p;
    p.latent_min = 3;
    p.latent_max = 6;
    return gen_corpus(p, default_specs(p), n, Rng(seed));
}

std::vector<const PairedSample*> as_batch(const std::vector<PairedSample>& s,
                                          size_t lo, size_t hi) {
    std::vector<const PairedSample*> b;
    for (size_t i = lo; i < hi && i < s.size(); ++i) b.push_back(&s[i]);
    return b;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

struct FileGuard {
    std::string path;
    explicit FileGuard(std::string p) : path(std::move(p)) {}
    ~FileGuard() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("joint_loss total recombines the weighted components") {
    Model m(tiny_model(), 31);
    std::vector<PairedSample> corpus = tiny_corpus(6, 91);
    std::vector<const PairedSample*> batch = as_batch(corpus, 0, 3);
    TrainOptions opt;
    opt.weights = {0.7, 0.3, 0.5};

    Rng r1(11);
    LossBreakdown a = joint_loss(m, batch, true, opt, r1);
    CHECK(std::isfinite(a.total));
    CHECK(a.total ==
          doctest::Approx(a.dlm + 0.7 * a.dp + 0.3 * a.ctp + 0.5 * a.ctc)
              .epsilon(1e-12));
    CHECK(a.ctp > 0.0);  // BCE over probabilities in (0,1) is never zero

    // Same stream, weights zeroed: identical components, total collapses.
    opt.weights = {0.0, 0.0, 0.0};
    Rng r2(11);
    LossBreakdown b = joint_loss(m, batch, true, opt, r2);
    CHECK(b.dlm == a.dlm);
    CHECK(b.dp == a.dp);
    CHECK(b.ctp == a.ctp);
    CHECK(b.ctc == a.ctc);
    CHECK(b.masked_tokens == a.masked_tokens);
    CHECK(b.total == b.dlm);
}

TEST_CASE("stage 1 leaves the paired-only terms at zero") {
    Model m(tiny_model(), 31);
    std::vector<PairedSample> corpus = tiny_corpus(6, 92);
    std::vector<const PairedSample*> batch = as_batch(corpus, 0, 4);
    TrainOptions opt;
    Rng rng(7);
    LossBreakdown bd = joint_loss(m, batch, false, opt, rng);
    CHECK(bd.dp == 0.0);
    CHECK(bd.ctp == 0.0);
    CHECK(bd.ctc >= 0.0);
    CHECK(bd.ctc_skipped >= 0);
    CHECK(bd.ctc_skipped <= static_cast<int>(batch.size()));
    CHECK(std::isfinite(bd.total));
}

TEST_CASE("joint_loss is deterministic in the rng stream and fills gradients") {
    Model m(tiny_model(), 31);
    std::vector<PairedSample> corpus = tiny_corpus(6, 93);
    std::vector<const PairedSample*> batch = as_batch(corpus, 0, 3);
    TrainOptions opt;

    Rng r1(5);
    LossBreakdown a = joint_loss(m, batch, true, opt, r1);
    std::vector<std::vector<double>> grads;
    for (int i = 0; i < m.params().count(); ++i)
        grads.push_back(m.params().at(i).g.v);

    Rng r2(5);
    LossBreakdown b = joint_loss(m, batch, true, opt, r2);
    CHECK(a.total == b.total);
    bool any_nonzero = false;
    for (int i = 0; i < m.params().count(); ++i) {
        CHECK(m.params().at(i).g.v == grads[i]);
        for (double gv : grads[i]) any_nonzero = any_nonzero || gv != 0.0;
    }
    CHECK(any_nonzero);

    Rng r3(6);
    LossBreakdown c = joint_loss(m, batch, true, opt, r3);
    CHECK(c.total != a.total);  // different masking/noise draws
}

TEST_CASE("joint_loss validates its batch") {
    Model m(tiny_model(), 31);
    TrainOptions opt;
    Rng rng(1);
    CHECK_THROWS_AS(joint_loss(m, {}, true, opt, rng), Error);

    std::vector<PairedSample> corpus = tiny_corpus(2, 94);
    corpus[0].common_labels.clear();
    std::vector<const PairedSample*> batch = as_batch(corpus, 0, 1);
    CHECK_THROWS_AS(joint_loss(m, batch, true, opt, rng), Error);
    // Stage 1 never reads the labels, so the same batch passes there.
    Rng rng2(1);
    CHECK_NOTHROW(joint_loss(m, batch, false, opt, rng2));
}

TEST_CASE("train config JSON round-trips and rejects junk") {
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.lr = 1.5e-3;
    cfg.weights = {0.9, 0.8, 0.1};
    cfg.bart.span = 0.25;
    cfg.pretrain_epochs = 2;
    cfg.finetune_epochs = 5;
    cfg.batch_size = 3;
    cfg.eval_percent = 20;
    cfg.seed = 77;

    TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.model.d_model == cfg.model.d_model);
    CHECK(back.model.vocab == cfg.model.vocab);
    CHECK(back.schedule.epsilon == cfg.schedule.epsilon);
    CHECK(back.bart.span == cfg.bart.span);
    CHECK(back.weights.beta1 == cfg.weights.beta1);
    CHECK(back.weights.beta2 == cfg.weights.beta2);
    CHECK(back.weights.beta3 == cfg.weights.beta3);
    CHECK(back.lr == cfg.lr);
    CHECK(back.pretrain_epochs == cfg.pretrain_epochs);
    CHECK(back.finetune_epochs == cfg.finetune_epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.eval_percent == cfg.eval_percent);
    CHECK(back.seed == cfg.seed);

    CHECK_THROWS_AS(train_config_from_json("[1,2]"), Error);
    CHECK_THROWS_AS(train_config_from_json(R"({"learning_rate": 0.1})"), Error);
    CHECK_THROWS_AS(train_config_from_json(R"({"lr": "fast"})"), Error);
    CHECK_THROWS_AS(train_config_from_json(R"({"lr": -1.0})"), Error);

    TrainConfig bad;
    bad.model = tiny_model();
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = TrainConfig{};
    bad.model = tiny_model();
    bad.schedule.epsilon = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = TrainConfig{};
    bad.model = tiny_model();
    bad.pretrain_epochs = -1;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("split_corpus agrees with the hash split and partitions indices") {
    std::vector<PairedSample> corpus = tiny_corpus(60, 95);
    std::vector<int> train_idx, eval_idx;
    split_corpus(corpus, 25, &train_idx, &eval_idx);
    CHECK(train_idx.size() + eval_idx.size() == corpus.size());
    std::set<int> seen(train_idx.begin(), train_idx.end());
    for (int i : eval_idx) CHECK(seen.insert(i).second);
    CHECK(seen.size() == corpus.size());
    for (int i : train_idx) CHECK_FALSE(eval_split(corpus[i].latent_labels, 25));
    for (int i : eval_idx) CHECK(eval_split(corpus[i].latent_labels, 25));
    CHECK_FALSE(eval_idx.empty());  // 60 draws at 25% miss with prob ~1e-8
}

TEST_CASE("train_model runs two stages and writes artifacts") {
    FileGuard ckpt("test_train_ckpt.bin");
    FileGuard csv("test_train_log.csv");
    std::vector<PairedSample> corpus = tiny_corpus(10, 96);
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.pretrain_epochs = 1;
    cfg.finetune_epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 3;

    Model m(cfg.model, 55);
    TrainResult res = train_model(m, corpus, cfg, ckpt.path, csv.path, nullptr);
    CHECK_FALSE(res.aborted);
    CHECK(res.abort_reason.empty());
    REQUIRE(res.log.size() == 2);
    CHECK(res.log[0].epoch == 1);
    CHECK(res.log[0].stage == 1);
    CHECK(res.log[1].epoch == 2);
    CHECK(res.log[1].stage == 2);
    CHECK(res.log[0].loss.dp == 0.0);
    CHECK(res.log[1].loss.ctp > 0.0);
    CHECK(std::isfinite(res.log[1].loss.total));
    CHECK(m.params().steps_taken() > 0);

    Model back = load_checkpoint(ckpt.path);
    CHECK(back.params().count() == m.params().count());

    std::string log = slurp(csv.path);
    std::istringstream lines(log);
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(line == "epoch,stage,dlm,dp,ctp,ctc,total,ctc_skipped");
    REQUIRE(std::getline(lines, line));
    CHECK(line.rfind("1,1,", 0) == 0);
    REQUIRE(std::getline(lines, line));
    CHECK(line.rfind("2,2,", 0) == 0);
    CHECK_FALSE(std::getline(lines, line));
}

TEST_CASE("train_model is bit-deterministic for a fixed config and seed") {
    FileGuard ck1("test_train_d1.bin"), ck2("test_train_d2.bin");
    FileGuard cs1("test_train_d1.csv"), cs2("test_train_d2.csv");
    std::vector<PairedSample> corpus = tiny_corpus(8, 97);
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.pretrain_epochs = 1;
    cfg.finetune_epochs = 2;
    cfg.batch_size = 3;
    cfg.seed = 13;

    Model m1(cfg.model, 5);
    TrainResult r1 = train_model(m1, corpus, cfg, ck1.path, cs1.path, nullptr);
    Model m2(cfg.model, 5);
    TrainResult r2 = train_model(m2, corpus, cfg, ck2.path, cs2.path, nullptr);
    REQUIRE_FALSE(r1.aborted);
    REQUIRE_FALSE(r2.aborted);
    CHECK(slurp(ck1.path) == slurp(ck2.path));
    CHECK(slurp(cs1.path) == slurp(cs2.path));
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i)
        CHECK(r1.log[i].loss.total == r2.log[i].loss.total);

    // A different data order (seed) has to change the trajectory.
    FileGuard ck3("test_train_d3.bin");
    TrainConfig other = cfg;
    other.seed = 14;
    Model m3(cfg.model, 5);
    TrainResult r3 = train_model(m3, corpus, other, ck3.path, "", nullptr);
    REQUIRE_FALSE(r3.aborted);
    CHECK(slurp(ck3.path) != slurp(ck1.path));
}

TEST_CASE("train_model aborts cleanly on a poisoned model") {
    std::vector<PairedSample> corpus = tiny_corpus(4, 98);
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.pretrain_epochs = 1;
    cfg.finetune_epochs = 0;
    cfg.batch_size = 2;

    Model m(cfg.model, 5);
    for (int i = 0; i < m.params().count(); ++i)
        m.params().at(i).w.fill(std::numeric_limits<double>::quiet_NaN());
    TrainResult res = train_model(m, corpus, cfg, "", "", nullptr);
    CHECK(res.aborted);
    CHECK(res.abort_reason.find("not finite") != std::string::npos);
    CHECK(res.log.empty());

    CHECK_THROWS_AS(train_model(m, {}, cfg, "", "", nullptr), Error);
}
