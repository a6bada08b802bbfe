#include "tokdiff/ctp.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <memory>

namespace tokdiff {

int lcs_length(const TokenSeq& a, const TokenSeq& b) {
    const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (int i = n - 1; i >= 0; --i) {
        for (int j = m - 1; j >= 0; --j) {
            cur[j] = a[i] == b[j] ? prev[j + 1] + 1
                                  : std::max(prev[j], cur[j + 1]);
        }
        std::swap(prev, cur);
    }
    return prev[0];
}

std::vector<int> center_align(int src_run_len, int tgt_run_len) {
    assert(src_run_len >= 1 && tgt_run_len >= 1);
    int k = std::min(src_run_len, tgt_run_len);
    int zeros = src_run_len - k;
    int left = zeros / 2;  // extra zero goes right
    std::vector<int> out(src_run_len, 0);
    for (int i = 0; i < k; ++i) out[left + i] = 1;
    return out;
}

namespace {

struct MatchBlock {
    int s_begin, s_end;  // source positions [s_begin, s_end], same token
    int t_begin, t_end;  // matched target positions, contiguous
};

// Suffix-table LCS with the skip-source-first tie rule, returning maximal
// blocks of consecutive matches that are contiguous in both sequences.
std::vector<MatchBlock> lcs_blocks(const TokenSeq& src, const TokenSeq& tgt) {
    const int n = static_cast<int>(src.size()), m = static_cast<int>(tgt.size());
    std::vector<int> dp((n + 1) * (m + 1), 0);
    auto at = [&](int i, int j) -> int& { return dp[i * (m + 1) + j]; };
    for (int i = n - 1; i >= 0; --i)
        for (int j = m - 1; j >= 0; --j)
            at(i, j) = src[i] == tgt[j]
                           ? std::max(at(i + 1, j + 1) + 1,
                                      std::max(at(i + 1, j), at(i, j + 1)))
                           : std::max(at(i + 1, j), at(i, j + 1));

    std::vector<MatchBlock> blocks;
    int i = 0, j = 0;
    while (i < n && j < m && at(i, j) > 0) {
        if (at(i + 1, j) == at(i, j)) {
            ++i;  // skipping the source token costs nothing: prefer it
        } else if (at(i, j + 1) == at(i, j)) {
            ++j;
        } else {
            // both skips lose: src[i] == tgt[j] must be matched
            if (!blocks.empty() && blocks.back().s_end == i - 1 &&
                blocks.back().t_end == j - 1 &&
                src[blocks.back().s_begin] == src[i]) {
                blocks.back().s_end = i;
                blocks.back().t_end = j;
            } else {
                blocks.push_back({i, i, j, j});
            }
            ++i;
            ++j;
        }
    }
    return blocks;
}

}  // namespace

CtpLabels lcs_labels(const TokenSeq& src, const TokenSeq& tgt) {
    CtpLabels labels(src.size(), 0);
    if (src.empty() || tgt.empty()) return labels;
    std::vector<MatchBlock> blocks = lcs_blocks(src, tgt);

    int placed_end = -1;  // rightmost position labeled 1 so far
    for (size_t b = 0; b < blocks.size(); ++b) {
        const MatchBlock& blk = blocks[b];
        int k = blk.s_end - blk.s_begin + 1;
        int token = src[blk.s_begin];
        // Enclosing run of the same token in the source.
        int run_begin = blk.s_begin;
        while (run_begin > 0 && src[run_begin - 1] == token) --run_begin;
        int run_end = blk.s_end;
        while (run_end + 1 < static_cast<int>(src.size()) &&
               src[run_end + 1] == token)
            ++run_end;
        // Clip to the stretch not claimed by neighbors: left by what is
        // already placed, right by the next block's matched span. The block's
        // own span always stays inside, so room >= k and bit count holds.
        run_begin = std::max(run_begin, placed_end + 1);
        if (b + 1 < blocks.size())
            run_end = std::min(run_end, blocks[b + 1].s_begin - 1);
        int room = run_end - run_begin + 1;
        int left = (room - k) / 2;  // extra slack goes right
        for (int p = 0; p < k; ++p) labels[run_begin + left + p] = 1;
        placed_end = run_begin + left + k - 1;
    }
    return labels;
}

double ctp_loss(const CtpScores& scores, const CtpLabels& labels,
                double pos_weight) {
    assert(scores.size() == labels.size());
    if (scores.empty()) return 0.0;
    double loss = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        double p = std::clamp(scores[i], 1e-6, 1.0 - 1e-6);
        loss -= labels[i] ? pos_weight * std::log(p) : std::log(1.0 - p);
    }
    return loss / static_cast<double>(scores.size());
}

Var ctp_loss_node(Var probs, const CtpLabels& labels, double pos_weight) {
    Graph* g = probs.g;
    const Tensor& P = probs.val();
    assert(P.cols == 1 && P.rows == static_cast<int>(labels.size()));
    CtpScores s(P.v.begin(), P.v.end());
    Tensor C(1, 1);
    C.v[0] = ctp_loss(s, labels, pos_weight);
    int pi = probs.i, oi = static_cast<int>(g->size());
    auto lab = std::make_shared<CtpLabels>(labels);
    return g->node(std::move(C), [pi, oi, lab, pos_weight](Graph& gr) {
        double go = gr.grad(oi).v[0];
        const Tensor& P = gr.val(pi);
        Tensor& dP = gr.grad(pi);
        double inv_n = 1.0 / P.rows;
        for (int i = 0; i < P.rows; ++i) {
            double p = P.v[i];
            if (p < 1e-6 || p > 1.0 - 1e-6) continue;  // clamped: zero slope
            double d = (*lab)[i] ? -pos_weight / p : 1.0 / (1.0 - p);
            dP.v[i] += go * inv_n * d;
        }
    });
}

}  // namespace tokdiff
