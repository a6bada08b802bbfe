#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "tokdiff/guidance.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tensor.hpp"
#include "tokdiff/tokens.hpp"

using namespace tokdiff;

namespace {

// Sums softmax path probabilities over every frame-wise class sequence that
// collapses (dedupe, then drop blanks) to the label string. Blank = last class.
double ctc_brute(const Tensor& logits, const std::vector<int>& labels) {
    const int T = logits.rows, C = logits.cols, blank = C - 1;
    std::vector<double> p(static_cast<size_t>(T) * C);
    for (int t = 0; t < T; ++t) {
        double norm = log_sum_exp(logits.row(t), C);
        for (int k = 0; k < C; ++k)
            p[t * C + k] = std::exp(logits.at(t, k) - norm);
    }
    int64_t n_paths = 1;
    for (int t = 0; t < T; ++t) n_paths *= C;
    double total = 0.0;
    std::vector<int> path(T);
    for (int64_t code = 0; code < n_paths; ++code) {
        int64_t c = code;
        for (int t = 0; t < T; ++t) {
            path[t] = static_cast<int>(c % C);
            c /= C;
        }
        std::vector<int> out;
        int prev = -1;
        for (int t = 0; t < T; ++t) {
            if (path[t] != prev && path[t] != blank) out.push_back(path[t]);
            prev = path[t];
        }
        if (out != labels) continue;
        double pp = 1.0;
        for (int t = 0; t < T; ++t) pp *= p[t * C + path[t]];
        total += pp;
    }
    return -std::log(total);
}

Tensor random_logits(Rng& rng, int rows, int cols, double scale) {
    Tensor t(rows, cols);
    for (double& v : t.v) v = scale * rng.normal();
    return t;
}

std::vector<int> feasible_labels(Rng& rng, int frames, int alphabet) {
    for (;;) {
        std::vector<int> l(rng.below(static_cast<uint64_t>(frames) + 1));
        for (int& x : l) x = static_cast<int>(rng.below(alphabet));
        if (ctc_min_frames(l) <= frames) return l;
    }
}

}  // namespace

TEST_CASE("ctc_min_frames counts labels plus adjacent repeats") {
    CHECK(ctc_min_frames({}) == 0);
    CHECK(ctc_min_frames({1, 2, 3}) == 3);
    CHECK(ctc_min_frames({1, 1}) == 3);
    CHECK(ctc_min_frames({2, 2, 2}) == 5);
    CHECK(ctc_min_frames({0, 0, 1, 1}) == 6);
}

TEST_CASE("ctc_loss closed forms") {
    // One frame, three classes incl. blank, uniform: P(label) = 1/3.
    Tensor u(1, 3);
    u.fill(0.0);
    CHECK(ctc_loss(u, {0}) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // Two uniform frames, binary: paths 00, 0b, b0 collapse to [0]; bb fails.
    Tensor u2(2, 2);
    u2.fill(0.0);
    CHECK(ctc_loss(u2, {0}) ==
          doctest::Approx(-std::log(3.0 / 4.0)).epsilon(1e-12));

    // Sharply peaked correct alignment drives the loss to ~0.
    Tensor peak(3, 4);
    peak.fill(-50.0);
    peak.at(0, 0) = 50.0;
    peak.at(1, 1) = 50.0;
    peak.at(2, 3) = 50.0;  // blank
    CHECK(ctc_loss(peak, {0, 1}) < 1e-6);
}

TEST_CASE("ctc_loss rejects infeasible inputs") {
    Tensor t(2, 3);
    t.fill(0.0);
    CHECK_THROWS_AS(ctc_loss(t, {0, 1, 0}), Error);      // 3 labels, 2 frames
    CHECK_THROWS_AS(ctc_loss(t, {0, 0}), Error);         // repeat needs 3
    CHECK_THROWS_AS(ctc_loss(t, {2}), Error);            // blank as label
    CHECK_THROWS_AS(ctc_loss(t, {-1}), Error);
    Tensor one(2, 1);
    one.fill(0.0);
    CHECK_THROWS_AS(ctc_loss(one, {}), Error);           // no label classes
    Tensor ok(3, 3);
    ok.fill(0.0);
    CHECK_NOTHROW(ctc_loss(ok, {0, 0}));
    CHECK_NOTHROW(ctc_loss(ok, {}));                     // all-blank is valid
}

TEST_CASE("ctc_loss is sensitive to label order") {
    Tensor t(4, 3);
    t.fill(0.0);
    t.at(0, 0) = 3.0;
    t.at(1, 0) = 3.0;
    t.at(2, 1) = 3.0;
    t.at(3, 1) = 3.0;
    CHECK(ctc_loss(t, {0, 1}) < ctc_loss(t, {1, 0}) - 1.0);
}

TEST_CASE("ctc_loss matches exhaustive path enumeration") {
    Rng rng(0xc7c1u);
    for (int it = 0; it < 300; ++it) {
        int T = 1 + static_cast<int>(rng.below(6));
        int C = 2 + static_cast<int>(rng.below(3));
        Tensor logits = random_logits(rng, T, C, 1.5);
        std::vector<int> labels = feasible_labels(rng, T, C - 1);
        double got = ctc_loss(logits, labels);
        double want = ctc_brute(logits, labels);
        CHECK_MESSAGE(got == doctest::Approx(want).epsilon(1e-9),
                      "T=", T, " C=", C, " |labels|=", labels.size());
    }
}

TEST_CASE("ctc_loss_node value matches ctc_loss") {
    Rng rng(0xc7c2u);
    Tensor logits = random_logits(rng, 6, 5, 1.0);
    std::vector<int> labels = {0, 2, 2, 1};
    Graph g;
    Var l = g.leaf(logits);
    Var y = ctc_loss_node(l, labels);
    CHECK(y.val().v[0] ==
          doctest::Approx(ctc_loss(logits, labels)).epsilon(1e-12));
}

TEST_CASE("ctc_loss_node gradient matches finite differences") {
    Rng rng(0xc7c3u);
    Tensor logits = random_logits(rng, 5, 4, 1.0);
    std::vector<int> labels = {0, 2, 1};
    Graph g;
    Var l = g.leaf(logits);
    Var y = ctc_loss_node(l, labels);
    g.backward(y);

    const double h = 1e-6;
    for (int i = 0; i < logits.size(); ++i) {
        Tensor up = logits, dn = logits;
        up.v[i] += h;
        dn.v[i] -= h;
        double fd = (ctc_loss(up, labels) - ctc_loss(dn, labels)) / (2.0 * h);
        double an = g.grad(l.i).v[i];
        CHECK_MESSAGE(an == doctest::Approx(fd).epsilon(2e-5).scale(1.0),
                      "entry ", i);
    }
}

TEST_CASE("ctc_loss_node gradient scales with upstream seed") {
    Rng rng(0xc7c4u);
    Tensor logits = random_logits(rng, 4, 3, 1.0);
    std::vector<int> labels = {1, 0};
    Graph g;
    Var l = g.leaf(logits);
    Var y = scale(ctc_loss_node(l, labels), 2.5);
    g.backward(y);
    Graph g2;
    Var l2 = g2.leaf(logits);
    Var y2 = ctc_loss_node(l2, labels);
    g2.backward(y2);
    for (int i = 0; i < logits.size(); ++i)
        CHECK(g.grad(l.i).v[i] ==
              doctest::Approx(2.5 * g2.grad(l2.i).v[i]).epsilon(1e-12));
}
