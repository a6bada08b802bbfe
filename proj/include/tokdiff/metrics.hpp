#pragma once

#include <functional>
#include <vector>

#include "tokdiff/tokens.hpp"

namespace tokdiff {

// Levenshtein distance (unit costs).
int edit_distance(const TokenSeq& a, const TokenSeq& b);

// Occurrences in seq of any id in ids.
int count_ids(const TokenSeq& seq, const std::vector<int>& ids);

// Area under the ROC curve via the rank statistic; ties get average ranks.
// Throws unless both classes are present.
double auc_score(const std::vector<double>& scores,
                 const std::vector<int>& labels);

// Spearman rank correlation with average ranks for ties. Throws on length
// mismatch or fewer than 2 points; returns 0 when either side is constant.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// One-sample Kolmogorov-Smirnov statistic against a CDF, and the asymptotic
// p-value (conservative for discrete data).
double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf);
double ks_pvalue(double d, int n);

double mean_of(const std::vector<double>& xs);

}  // namespace tokdiff
