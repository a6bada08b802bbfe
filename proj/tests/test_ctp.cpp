#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tokdiff/ctp.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tensor.hpp"

using namespace tokdiff;

namespace {

// Forward full-matrix DP, independent of the suffix-table in lcs_length.
int lcs_dp_oracle(const TokenSeq& a, const TokenSeq& b) {
    std::vector<std::vector<int>> dp(a.size() + 1,
                                     std::vector<int>(b.size() + 1, 0));
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            dp[i][j] = a[i - 1] == b[j - 1]
                           ? dp[i - 1][j - 1] + 1
                           : std::max(dp[i - 1][j], dp[i][j - 1]);
    return dp[a.size()][b.size()];
}

bool is_subsequence(const TokenSeq& needle, const TokenSeq& hay) {
    size_t j = 0;
    for (size_t i = 0; i < hay.size() && j < needle.size(); ++i)
        if (hay[i] == needle[j]) ++j;
    return j == needle.size();
}

// Exhaustive search over all 2^|a| subsequences of a; true maximum.
int lcs_brute(const TokenSeq& a, const TokenSeq& b) {
    int best = 0;
    for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
        TokenSeq sub;
        for (size_t i = 0; i < a.size(); ++i)
            if (mask & (1u << i)) sub.push_back(a[i]);
        if (static_cast<int>(sub.size()) > best && is_subsequence(sub, b))
            best = static_cast<int>(sub.size());
    }
    return best;
}

TokenSeq random_seq(Rng& rng, int max_len, int vocab) {
    TokenSeq s(rng.below(static_cast<uint64_t>(max_len) + 1));
    for (int& t : s) t = static_cast<int>(rng.below(vocab));
    return s;
}

TokenSeq marked_tokens(const TokenSeq& src, const CtpLabels& labels) {
    TokenSeq out;
    for (size_t i = 0; i < src.size(); ++i)
        if (labels[i]) out.push_back(src[i]);
    return out;
}

}  // namespace

TEST_CASE("lcs_length matches exhaustive subsequence search") {
    Rng rng(0x1c5u);
    for (int it = 0; it < 500; ++it) {
        TokenSeq a = random_seq(rng, 8, 4);
        TokenSeq b = random_seq(rng, 8, 4);
        CHECK(lcs_length(a, b) == lcs_brute(a, b));
    }
}

TEST_CASE("lcs_length matches forward DP on longer pairs") {
    Rng rng(0x1c6u);
    for (int it = 0; it < 1000; ++it) {
        TokenSeq a = random_seq(rng, 24, 5);
        TokenSeq b = random_seq(rng, 24, 5);
        CHECK(lcs_length(a, b) == lcs_dp_oracle(a, b));
    }
}

TEST_CASE("lcs_labels known cases") {
    CHECK(lcs_labels({1, 2, 3}, {1, 2, 3}) == CtpLabels{1, 1, 1});
    CHECK(lcs_labels({1, 2, 3}, {4, 5, 6}) == CtpLabels{0, 0, 0});
    CHECK(lcs_labels({7, 8, 9, 8}, {7, 9, 8}) == CtpLabels{1, 0, 1, 1});
    CHECK(lcs_labels({0, 0}, {0, 1, 0}) == CtpLabels{1, 1});
    CHECK(lcs_labels({}, {1, 2}).empty());
    CHECK(lcs_labels({1, 2}, {}) == CtpLabels{0, 0});
}

TEST_CASE("lcs_labels centers matches inside longer source runs") {
    // Lengthened run: the 3 matched tokens sit centered among the 5 copies.
    CHECK(lcs_labels({5, 5, 5, 5, 5}, {5, 5, 5}) == CtpLabels{0, 1, 1, 1, 0});
    // Run bounded by anchored matches on both sides.
    CHECK(lcs_labels({1, 5, 5, 5, 1}, {1, 5, 1}) == CtpLabels{1, 0, 1, 0, 1});
}

TEST_CASE("lcs_labels bit count equals LCS length and certifies a subsequence") {
    Rng rng(0x1c7u);
    for (int it = 0; it < 10000; ++it) {
        TokenSeq src = random_seq(rng, 10, 4);
        TokenSeq tgt = random_seq(rng, 10, 4);
        CtpLabels labels = lcs_labels(src, tgt);
        REQUIRE(labels.size() == src.size());
        int ones = 0;
        for (int b : labels) {
            CHECK((b == 0 || b == 1));
            ones += b;
        }
        CHECK(ones == lcs_dp_oracle(src, tgt));
        CHECK(is_subsequence(marked_tokens(src, labels), tgt));
    }
}

TEST_CASE("center_align places min-run ones with extra zero on the right") {
    CHECK(center_align(5, 3) == std::vector<int>{0, 1, 1, 1, 0});
    CHECK(center_align(3, 3) == std::vector<int>{1, 1, 1});
    CHECK(center_align(4, 1) == std::vector<int>{0, 1, 0, 0});
    CHECK(center_align(1, 4) == std::vector<int>{1});
    for (int m = 1; m <= 9; ++m) {
        for (int n = 1; n <= 9; ++n) {
            std::vector<int> out = center_align(m, n);
            REQUIRE(static_cast<int>(out.size()) == m);
            int k = std::min(m, n);
            int first = -1, last = -1, ones = 0;
            for (int i = 0; i < m; ++i) {
                if (!out[i]) continue;
                if (first < 0) first = i;
                last = i;
                ++ones;
            }
            CHECK(ones == k);
            CHECK(last - first + 1 == k);  // contiguous
            int left = first, right = m - 1 - last;
            CHECK(right - left >= 0);
            CHECK(right - left <= 1);
        }
    }
}

TEST_CASE("ctp_loss closed-form cases") {
    CHECK(ctp_loss({0.5, 0.5, 0.5}, {1, 0, 1}, 1.0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ctp_loss({1.0, 0.0, 1.0}, {1, 0, 1}, 2.0) < 1e-5);
    CHECK(ctp_loss({}, {}, 2.0) == 0.0);
}

TEST_CASE("ctp_loss matches direct weighted BCE recomputation") {
    Rng rng(0x1c8u);
    for (int it = 0; it < 200; ++it) {
        int n = 1 + static_cast<int>(rng.below(8));
        CtpScores s(n);
        CtpLabels l(n);
        for (int i = 0; i < n; ++i) {
            s[i] = rng.uniform();
            l[i] = static_cast<int>(rng.below(2));
        }
        double want = 0.0;
        for (int i = 0; i < n; ++i) {
            double p = std::min(std::max(s[i], 1e-6), 1.0 - 1e-6);
            want += l[i] ? -2.0 * std::log(p) : -std::log(1.0 - p);
        }
        want /= n;
        CHECK(ctp_loss(s, l, 2.0) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("ctp_loss_node value and gradient") {
    Rng rng(0x1c9u);
    const int n = 7;
    CtpLabels labels(n);
    Tensor P0(n, 1);
    for (int i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.below(2));
        P0.v[i] = 0.1 + 0.8 * rng.uniform();
    }

    Graph g;
    Var p = g.leaf(P0);
    Var y = ctp_loss_node(p, labels, 2.0);
    CtpScores s0(P0.v.begin(), P0.v.end());
    CHECK(y.val().v[0] == doctest::Approx(ctp_loss(s0, labels, 2.0)).epsilon(1e-12));
    g.backward(y);

    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
        CtpScores up = s0, dn = s0;
        up[i] += h;
        dn[i] -= h;
        double fd = (ctp_loss(up, labels, 2.0) - ctp_loss(dn, labels, 2.0)) /
                    (2.0 * h);
        CHECK(g.grad(p.i).v[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("ctp_loss_node clamped scores get zero gradient") {
    Tensor P0(2, 1);
    P0.v = {1.0 - 1e-7, 1e-7};
    Graph g;
    Var p = g.leaf(P0);
    Var y = ctp_loss_node(p, {0, 1}, 2.0);
    g.backward(y);
    CHECK(g.grad(p.i).v[0] == 0.0);
    CHECK(g.grad(p.i).v[1] == 0.0);
}
