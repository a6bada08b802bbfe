#pragma once

#include <vector>

#include "tokdiff/tensor.hpp"
#include "tokdiff/tokens.hpp"

namespace tokdiff {

using CtpLabels = std::vector<int>;     // 0/1 per source position
using CtpScores = std::vector<double>;  // (0,1) per source position

// Binary common-token labels from the LCS of source and target.
//
// Backtracking skips a source token whenever doing so preserves the LCS
// value, so matches land as late as possible in the source. Afterwards each
// maximal matched block is re-placed centered inside the free stretch of its
// enclosing source run (the Fig.-style center alignment); the number of set
// bits always equals the LCS length.
CtpLabels lcs_labels(const TokenSeq& src, const TokenSeq& tgt);

// min(src_run_len, tgt_run_len) ones centered in a length-src_run_len run;
// when the zeros split unevenly the extra zero goes on the right.
std::vector<int> center_align(int src_run_len, int tgt_run_len);

// Mean weighted binary cross-entropy; the positive term is scaled by
// pos_weight. Scores are clamped to [1e-6, 1-1e-6] before the logs.
double ctp_loss(const CtpScores& scores, const CtpLabels& labels,
                double pos_weight);

// Tape version used in training: probs is S x 1 (sigmoid outputs).
Var ctp_loss_node(Var probs, const CtpLabels& labels, double pos_weight);

// Length of the LCS (no backtrace); used as a cheap cross-check.
int lcs_length(const TokenSeq& a, const TokenSeq& b);

}  // namespace tokdiff
