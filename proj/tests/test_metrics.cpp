#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tokdiff/metrics.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tokens.hpp"

using namespace tokdiff;

namespace {

// Full-matrix reference, kept separate from the rolling-row production code.
int edit_oracle(const TokenSeq& a, const TokenSeq& b) {
    std::vector<std::vector<int>> d(a.size() + 1,
                                    std::vector<int>(b.size() + 1, 0));
    for (size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
    for (size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
    return d[a.size()][b.size()];
}

TokenSeq random_seq(Rng& rng, int max_len, int vocab) {
    TokenSeq s(rng.below(static_cast<uint64_t>(max_len) + 1));
    for (int& t : s) t = static_cast<int>(rng.below(vocab));
    return s;
}

}  // namespace

TEST_CASE("edit_distance known cases") {
    CHECK(edit_distance({}, {}) == 0);
    CHECK(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
    CHECK(edit_distance({1, 2, 3}, {}) == 3);
    CHECK(edit_distance({}, {7}) == 1);
    CHECK(edit_distance({1, 2, 3}, {1, 9, 3}) == 1);
    CHECK(edit_distance({1, 2, 3}, {2, 3}) == 1);
    CHECK(edit_distance({1, 2, 3}, {1, 2, 3, 4, 5}) == 2);
    CHECK(edit_distance({5, 1, 5}, {1, 5, 1}) == 2);
}

TEST_CASE("edit_distance matches the full-matrix oracle") {
    Rng rng(0x3e1u);
    for (int it = 0; it < 1000; ++it) {
        TokenSeq a = random_seq(rng, 20, 6);
        TokenSeq b = random_seq(rng, 20, 6);
        int got = edit_distance(a, b);
        CHECK(got == edit_oracle(a, b));
        CHECK(got == edit_distance(b, a));  // symmetric for unit costs
    }
}

TEST_CASE("count_ids counts any listed id") {
    CHECK(count_ids({1, 2, 3, 2, 1}, {2}) == 2);
    CHECK(count_ids({1, 2, 3, 2, 1}, {1, 3}) == 3);
    CHECK(count_ids({1, 2, 3}, {}) == 0);
    CHECK(count_ids({}, {1}) == 0);
    CHECK(count_ids({4, 4, 4}, {4, 4}) == 3);  // duplicate ids count once
}

TEST_CASE("auc_score separates, fails, and averages ties") {
    CHECK(auc_score({0.1, 0.4, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(auc_score({0.9, 0.8, 0.4, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(auc_score({0.2, 0.7}, {0, 1}) == 1.0);
    // One positive tied with one of two negatives: P(win) + 0.5 P(tie).
    CHECK(auc_score({0.5, 0.5, 0.1}, {1, 0, 0}) == doctest::Approx(0.75));
    // All scores equal: no ranking information at all.
    CHECK(auc_score({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}) == doctest::Approx(0.5));

    CHECK_THROWS_AS(auc_score({0.5, 0.6}, {1, 1}), Error);
    CHECK_THROWS_AS(auc_score({0.5, 0.6}, {0, 0}), Error);
    CHECK_THROWS_AS(auc_score({0.5}, {0, 1}), Error);
    CHECK_THROWS_AS(auc_score({0.5, 0.6}, {0, 2}), Error);
}

TEST_CASE("auc_score matches pairwise counting on random data") {
    Rng rng(0x3e2u);
    for (int it = 0; it < 100; ++it) {
        int n = 2 + static_cast<int>(rng.below(30));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        labels[0] = 0;
        labels[1] = 1;  // both classes present
        for (int i = 0; i < n; ++i) {
            scores[i] = std::round(rng.uniform() * 8.0) / 8.0;  // force ties
            if (i >= 2) labels[i] = static_cast<int>(rng.below(2));
        }
        double wins = 0.0;
        int pairs = 0;
        for (int i = 0; i < n; ++i) {
            if (labels[i] != 1) continue;
            for (int j = 0; j < n; ++j) {
                if (labels[j] != 0) continue;
                ++pairs;
                if (scores[i] > scores[j]) wins += 1.0;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        }
        CHECK(auc_score(scores, labels) ==
              doctest::Approx(wins / pairs).epsilon(1e-12));
    }
}

TEST_CASE("spearman endpoints and tie handling") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
    // Monotone but nonlinear is still a perfect rank correlation.
    CHECK(spearman({1, 2, 3, 4}, {1, 10, 100, 1000}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
    CHECK(spearman({2, 2, 2}, {1, 2, 3}) == 0.0);
    CHECK_THROWS_AS(spearman({1}, {2}), Error);
    CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), Error);

    // Swapping one adjacent pair costs a known amount for n=4 without ties:
    // rho = 1 - 6 * sum d^2 / (n (n^2 - 1)) = 1 - 6*2/60 = 0.8.
    CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
}

TEST_CASE("spearman is invariant to monotone transforms") {
    Rng rng(0x3e3u);
    for (int it = 0; it < 50; ++it) {
        int n = 5 + static_cast<int>(rng.below(20));
        std::vector<double> xs(n), ys(n);
        for (int i = 0; i < n; ++i) {
            xs[i] = rng.normal();
            ys[i] = rng.normal();
        }
        double base = spearman(xs, ys);
        std::vector<double> warped(n);
        for (int i = 0; i < n; ++i) warped[i] = std::exp(2.0 * ys[i]) + 7.0;
        CHECK(spearman(xs, warped) == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("ks statistic against exact simple cases") {
    auto unif = [](double x) { return std::min(1.0, std::max(0.0, x)); };
    // Single sample at 0.5: D = max(F(0.5) - 0, 1 - F(0.5)) = 0.5.
    CHECK(ks_statistic({0.5}, unif) == doctest::Approx(0.5));
    CHECK(ks_statistic({1.0}, unif) == doctest::Approx(1.0));
    // Two samples at 0.25, 0.75: steps at 0.5 and 1.0 vs F.
    CHECK(ks_statistic({0.75, 0.25}, unif) == doctest::Approx(0.25));
}

TEST_CASE("ks test accepts matching and rejects shifted distributions") {
    Rng rng(0x3e4u);
    auto unif = [](double x) { return std::min(1.0, std::max(0.0, x)); };
    const int n = 2000;
    std::vector<double> ok(n), shifted(n);
    for (int i = 0; i < n; ++i) {
        ok[i] = rng.uniform();
        shifted[i] = std::min(1.0, rng.uniform() * 0.85 + 0.15);
    }
    double d_ok = ks_statistic(ok, unif);
    double d_bad = ks_statistic(shifted, unif);
    CHECK(ks_pvalue(d_ok, n) > 0.01);
    CHECK(ks_pvalue(d_bad, n) < 1e-6);
    CHECK(d_bad > d_ok);
}

TEST_CASE("ks_pvalue endpoints") {
    CHECK(ks_pvalue(0.0, 100) == doctest::Approx(1.0));
    CHECK(ks_pvalue(1.0, 100) == doctest::Approx(0.0).epsilon(1e-12));
    // Known reference: lim n->inf P(sqrt(n) D > 1.36) ~ 0.05.
    double p = ks_pvalue(1.36 / std::sqrt(10000.0), 10000);
    CHECK(p > 0.04);
    CHECK(p < 0.06);
}

TEST_CASE("mean_of") {
    CHECK(mean_of({2.0}) == 2.0);
    CHECK(mean_of({1.0, 2.0, 3.0, 4.0}) == doctest::Approx(2.5));
}
