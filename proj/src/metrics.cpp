#include "tokdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tokdiff {

int edit_distance(const TokenSeq& a, const TokenSeq& b) {
    size_t n = b.size();
    std::vector<int> row(n + 1);
    std::iota(row.begin(), row.end(), 0);
    for (size_t i = 0; i < a.size(); ++i) {
        int diag = row[0];
        row[0] = static_cast<int>(i) + 1;
        for (size_t j = 0; j < n; ++j) {
            int next = std::min({row[j] + 1, row[j + 1] + 1,
                                 diag + (a[i] == b[j] ? 0 : 1)});
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    return row[n];
}

int count_ids(const TokenSeq& seq, const std::vector<int>& ids) {
    int n = 0;
    for (int t : seq)
        for (int id : ids)
            if (t == id) {
                ++n;
                break;
            }
    return n;
}

namespace {

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& xs) {
    size_t n = xs.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return xs[i] < xs[j]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double auc_score(const std::vector<double>& scores,
                 const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw Error("auc: scores/labels length mismatch");
    size_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw Error("auc: labels must be 0/1");
        pos += static_cast<size_t>(l);
    }
    size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw Error("auc: needs both classes");
    std::vector<double> ranks = average_ranks(scores);
    double rank_sum = 0.0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 1) rank_sum += ranks[i];
    double u = rank_sum - 0.5 * static_cast<double>(pos) *
                              static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw Error("spearman: length mismatch");
    size_t n = xs.size();
    if (n < 2) throw Error("spearman: needs at least 2 points");
    std::vector<double> rx = average_ranks(xs);
    std::vector<double> ry = average_ranks(ys);
    double mx = mean_of(rx), my = mean_of(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf) {
    if (samples.empty()) throw Error("ks: no samples");
    std::sort(samples.begin(), samples.end());
    double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        double f = cdf(samples[i]);
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(f - lo), std::abs(hi - f)});
    }
    return d;
}

double ks_pvalue(double d, int n) {
    if (n <= 0) throw Error("ks: nonpositive n");
    double rn = std::sqrt(static_cast<double>(n));
    double lam = (rn + 0.12 + 0.11 / rn) * d;
    if (lam < 1e-9) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        double term = 2.0 * ((k % 2) ? 1.0 : -1.0) *
                      std::exp(-2.0 * lam * lam * k * k);
        sum += term;
        if (std::abs(term) < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, sum));
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) throw Error("mean: empty");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

}  // namespace tokdiff
