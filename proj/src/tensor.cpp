#include "tokdiff/tensor.hpp"

#include <cassert>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "tokdiff/kernels.hpp"

namespace tokdiff {

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor Tensor::filled(int r, int c, double x) {
    Tensor t(r, c);
    t.fill(x);
    return t;
}

const Tensor& Var::val() const { return g->val(i); }

double Var::scalar() const {
    const Tensor& t = val();
    assert(t.rows == 1 && t.cols == 1);
    return t.v[0];
}

Var Graph::node(Tensor val, std::function<void(Graph&)> back) {
    Node n;
    n.grad = Tensor(val.rows, val.cols);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var loss) {
    assert(loss.g == this);
    Tensor& g = grad(loss.i);
    assert(g.rows == 1 && g.cols == 1);
    g.v[0] = 1.0;
    for (int i = loss.i; i >= 0; --i) {
        if (nodes_[i].back) nodes_[i].back(*this);
    }
}

void softmax_inplace(double* x, int n) {
    const auto& k = kernels::ops();
    double m = k.vmax(n, x);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        sum += x[i];
    }
    k.scale(n, 1.0 / sum, x);
}

double log_sum_exp(const double* x, int n) {
    double m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    if (!std::isfinite(m)) return m;  // all -inf
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(x[i] - m);
    return m + std::log(sum);
}

// ---------------------------------------------------------------------------
// Ops. Each op computes the forward value eagerly and records a closure that
// reads its own output gradient by index and accumulates into its inputs.
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    assert(A.cols == B.rows);
    Tensor C(A.rows, B.cols);
    kernels::ops().gemm_nn(A.rows, B.cols, A.cols, A.data(), B.data(), C.data(),
                           false);
    int ai = a.i, bi = b.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, bi, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        const Tensor& A = gr.val(ai);
        const Tensor& B = gr.val(bi);
        // dA += dC * B^T ; dB += A^T * dC
        kernels::ops().gemm_nt(A.rows, A.cols, B.cols, dC.data(), B.data(),
                               gr.grad(ai).data());
        kernels::ops().gemm_tn(A.cols, B.cols, A.rows, A.data(), dC.data(),
                               gr.grad(bi).data());
    });
}

Var matmul_nt(Var a, Var b) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    assert(A.cols == B.cols);
    Tensor C(A.rows, B.rows);
    C.fill(0.0);
    kernels::ops().gemm_nt(A.rows, B.rows, A.cols, A.data(), B.data(), C.data());
    int ai = a.i, bi = b.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, bi, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);  // m x n (n = B.rows)
        const Tensor& A = gr.val(ai);
        const Tensor& B = gr.val(bi);
        // C = A B^T: dA += dC * B ; dB += dC^T * A
        kernels::ops().gemm_nn(A.rows, A.cols, B.rows, dC.data(), B.data(),
                               gr.grad(ai).data(), true);
        kernels::ops().gemm_tn(B.rows, B.cols, A.rows, dC.data(), A.data(),
                               gr.grad(bi).data());
    });
}

Var add(Var a, Var b) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    assert(A.same_shape(B));
    Tensor C(A.rows, A.cols);
    kernels::ops().vadd(A.size(), A.data(), B.data(), C.data());
    int ai = a.i, bi = b.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, bi, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        kernels::ops().axpy(dC.size(), 1.0, dC.data(), gr.grad(ai).data());
        kernels::ops().axpy(dC.size(), 1.0, dC.data(), gr.grad(bi).data());
    });
}

Var add_rowvec(Var a, Var rv) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    const Tensor& R = rv.val();
    assert(R.rows == 1 && R.cols == A.cols);
    Tensor C = A;
    for (int i = 0; i < A.rows; ++i)
        kernels::ops().axpy(A.cols, 1.0, R.data(), C.row(i));
    int ai = a.i, ri = rv.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, ri, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        kernels::ops().axpy(dC.size(), 1.0, dC.data(), gr.grad(ai).data());
        Tensor& dR = gr.grad(ri);
        for (int i = 0; i < dC.rows; ++i)
            kernels::ops().axpy(dC.cols, 1.0, dC.row(i), dR.data());
    });
}

Var scale(Var a, double s) {
    Graph* g = a.g;
    Tensor C = a.val();
    kernels::ops().scale(C.size(), s, C.data());
    int ai = a.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, oi, s](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        kernels::ops().axpy(dC.size(), s, dC.data(), gr.grad(ai).data());
    });
}

Var square(Var a) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    Tensor C(A.rows, A.cols);
    kernels::ops().vmul(A.size(), A.data(), A.data(), C.data());
    int ai = a.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        const Tensor& A = gr.val(ai);
        Tensor& dA = gr.grad(ai);
        for (int i = 0; i < A.size(); ++i) dA.v[i] += 2.0 * A.v[i] * dC.v[i];
    });
}

Var gelu(Var a) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    Tensor C(A.rows, A.cols);
    for (int i = 0; i < A.size(); ++i) {
        double x = A.v[i];
        C.v[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    int ai = a.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        const Tensor& A = gr.val(ai);
        Tensor& dA = gr.grad(ai);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (int i = 0; i < A.size(); ++i) {
            double x = A.v[i];
            double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            dA.v[i] += dC.v[i] * (cdf + x * pdf);
        }
    });
}

Var sigmoid(Var a) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    Tensor C(A.rows, A.cols);
    for (int i = 0; i < A.size(); ++i) C.v[i] = 1.0 / (1.0 + std::exp(-A.v[i]));
    int ai = a.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        const Tensor& S = gr.val(oi);
        Tensor& dA = gr.grad(ai);
        for (int i = 0; i < S.size(); ++i)
            dA.v[i] += dC.v[i] * S.v[i] * (1.0 - S.v[i]);
    });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
    Graph* g = x.g;
    const Tensor& X = x.val();
    const Tensor& G = gain.val();
    const Tensor& B = bias.val();
    assert(G.rows == 1 && G.cols == X.cols && B.rows == 1 && B.cols == X.cols);
    int n = X.cols;
    Tensor C(X.rows, n);
    auto stats = std::make_shared<Tensor>(X.rows, 2);  // mean, inv_std per row
    for (int r = 0; r < X.rows; ++r) {
        const double* xr = X.row(r);
        double mean = kernels::ops().vsum(n, xr) / n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        stats->at(r, 0) = mean;
        stats->at(r, 1) = inv;
        double* cr = C.row(r);
        for (int j = 0; j < n; ++j)
            cr[j] = (xr[j] - mean) * inv * G.v[j] + B.v[j];
    }
    int xi = x.i, gi = gain.i, bi = bias.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [xi, gi, bi, oi, stats](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        const Tensor& X = gr.val(xi);
        const Tensor& G = gr.val(gi);
        Tensor& dX = gr.grad(xi);
        Tensor& dG = gr.grad(gi);
        Tensor& dB = gr.grad(bi);
        int n = X.cols;
        for (int r = 0; r < X.rows; ++r) {
            double mean = stats->at(r, 0), inv = stats->at(r, 1);
            const double* xr = X.row(r);
            const double* dcr = dC.row(r);
            double* dxr = dX.row(r);
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < n; ++j) {
                double xhat = (xr[j] - mean) * inv;
                double dxhat = dcr[j] * G.v[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                dG.v[j] += dcr[j] * xhat;
                dB.v[j] += dcr[j];
            }
            for (int j = 0; j < n; ++j) {
                double xhat = (xr[j] - mean) * inv;
                double dxhat = dcr[j] * G.v[j];
                dxr[j] += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / n);
            }
        }
    });
}

namespace {

Var softmax_impl(Var scores, const Tensor* bias) {
    Graph* g = scores.g;
    const Tensor& S = scores.val();
    Tensor P = S;
    if (bias) {
        assert(bias->same_shape(S));
        kernels::ops().vadd(S.size(), S.data(), bias->data(), P.data());
    }
    for (int r = 0; r < P.rows; ++r) softmax_inplace(P.row(r), P.cols);
    int si = scores.i, oi = static_cast<int>(g->size());
    return g->node(std::move(P), [si, oi](Graph& gr) {
        const Tensor& dP = gr.grad(oi);
        const Tensor& P = gr.val(oi);
        Tensor& dS = gr.grad(si);
        for (int r = 0; r < P.rows; ++r) {
            const double* pr = P.row(r);
            const double* dpr = dP.row(r);
            double inner = kernels::ops().dot(P.cols, pr, dpr);
            double* dsr = dS.row(r);
            for (int j = 0; j < P.cols; ++j)
                dsr[j] += (dpr[j] - inner) * pr[j];
        }
    });
}

}  // namespace

Var softmax_rows(Var scores) { return softmax_impl(scores, nullptr); }

Var softmax_rows_bias(Var scores, const Tensor& bias) {
    return softmax_impl(scores, &bias);
}

Var rope(Var x, const std::vector<int>& positions, int n_heads, double base) {
    Graph* g = x.g;
    const Tensor& X = x.val();
    assert(static_cast<int>(positions.size()) == X.rows);
    int d = X.cols;
    assert(d % n_heads == 0);
    int dh = d / n_heads;
    assert(dh % 2 == 0);
    Tensor C(X.rows, d);
    auto rotate = [&](const Tensor& in, Tensor& out, bool inverse) {
        for (int r = 0; r < in.rows; ++r) {
            const double* xr = in.row(r);
            double* cr = out.row(r);
            for (int h = 0; h < n_heads; ++h) {
                int off = h * dh;
                for (int p = 0; p < dh / 2; ++p) {
                    double theta =
                        positions[r] *
                        std::pow(base, -2.0 * p / static_cast<double>(dh));
                    double c = std::cos(theta);
                    double s = inverse ? -std::sin(theta) : std::sin(theta);
                    double x0 = xr[off + 2 * p], x1 = xr[off + 2 * p + 1];
                    cr[off + 2 * p] = x0 * c - x1 * s;
                    cr[off + 2 * p + 1] = x0 * s + x1 * c;
                }
            }
        }
    };
    rotate(X, C, false);
    int xi = x.i, oi = static_cast<int>(g->size());
    auto pos = std::make_shared<std::vector<int>>(positions);
    return g->node(std::move(C), [xi, oi, pos, n_heads, base](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        Tensor tmp(dC.rows, dC.cols);
        // rotation is orthogonal: backward rotates by the negative angle
        int dh = dC.cols / n_heads;
        for (int r = 0; r < dC.rows; ++r) {
            const double* xr = dC.row(r);
            double* cr = tmp.row(r);
            for (int h = 0; h < n_heads; ++h) {
                int off = h * dh;
                for (int p = 0; p < dh / 2; ++p) {
                    double theta =
                        (*pos)[r] *
                        std::pow(base, -2.0 * p / static_cast<double>(dh));
                    double c = std::cos(theta);
                    double s = -std::sin(theta);
                    double x0 = xr[off + 2 * p], x1 = xr[off + 2 * p + 1];
                    cr[off + 2 * p] = x0 * c - x1 * s;
                    cr[off + 2 * p + 1] = x0 * s + x1 * c;
                }
            }
        }
        kernels::ops().axpy(tmp.size(), 1.0, tmp.data(), gr.grad(xi).data());
    });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
    Graph* g = table.g;
    const Tensor& T = table.val();
    Tensor C(static_cast<int>(ids.size()), T.cols);
    for (size_t r = 0; r < ids.size(); ++r) {
        assert(ids[r] >= 0 && ids[r] < T.rows);
        std::copy(T.row(ids[r]), T.row(ids[r]) + T.cols, C.row(static_cast<int>(r)));
    }
    int ti = table.i, oi = static_cast<int>(g->size());
    auto idv = std::make_shared<std::vector<int>>(ids);
    return g->node(std::move(C), [ti, oi, idv](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        Tensor& dT = gr.grad(ti);
        for (size_t r = 0; r < idv->size(); ++r)
            kernels::ops().axpy(dC.cols, 1.0, dC.row(static_cast<int>(r)),
                                dT.row((*idv)[r]));
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    assert(!parts.empty());
    Graph* g = parts[0].g;
    int cols = parts[0].val().cols, rows = 0;
    for (const Var& p : parts) {
        assert(p.val().cols == cols);
        rows += p.val().rows;
    }
    Tensor C(rows, cols);
    int r = 0;
    std::vector<std::pair<int, int>> spans;  // (node index, row count)
    for (const Var& p : parts) {
        const Tensor& P = p.val();
        std::copy(P.v.begin(), P.v.end(), C.row(r));
        spans.emplace_back(p.i, P.rows);
        r += P.rows;
    }
    int oi = static_cast<int>(g->size());
    auto sp = std::make_shared<std::vector<std::pair<int, int>>>(std::move(spans));
    return g->node(std::move(C), [oi, sp](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        int r = 0;
        for (auto [idx, cnt] : *sp) {
            kernels::ops().axpy(cnt * dC.cols, 1.0, dC.row(r),
                                gr.grad(idx).data());
            r += cnt;
        }
    });
}

Var concat_cols(Var a, Var b) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    assert(A.rows == B.rows);
    Tensor C(A.rows, A.cols + B.cols);
    for (int r = 0; r < A.rows; ++r) {
        std::copy(A.row(r), A.row(r) + A.cols, C.row(r));
        std::copy(B.row(r), B.row(r) + B.cols, C.row(r) + A.cols);
    }
    int ai = a.i, bi = b.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, bi, oi](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        Tensor& dA = gr.grad(ai);
        Tensor& dB = gr.grad(bi);
        for (int r = 0; r < dC.rows; ++r) {
            kernels::ops().axpy(dA.cols, 1.0, dC.row(r), dA.row(r));
            kernels::ops().axpy(dB.cols, 1.0, dC.row(r) + dA.cols, dB.row(r));
        }
    });
}

Var slice_rows(Var a, int begin, int count) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    assert(begin >= 0 && begin + count <= A.rows);
    Tensor C(count, A.cols);
    std::copy(A.row(begin), A.row(begin) + static_cast<size_t>(count) * A.cols,
              C.data());
    int ai = a.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, oi, begin, count](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        kernels::ops().axpy(count * dC.cols, 1.0, dC.data(),
                            gr.grad(ai).row(begin));
    });
}

Var mean_all(Var a) {
    Graph* g = a.g;
    const Tensor& A = a.val();
    Tensor C(1, 1);
    C.v[0] = kernels::ops().vsum(A.size(), A.data()) / A.size();
    int ai = a.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ai, oi](Graph& gr) {
        double s = gr.grad(oi).v[0] / gr.grad(ai).size();
        Tensor& dA = gr.grad(ai);
        for (double& x : dA.v) x += s;
    });
}

Var rel_bias(Var table, int rows, int clip) {
    Graph* g = table.g;
    const Tensor& T = table.val();
    assert(T.rows == 1 && T.cols == 2 * clip + 1);
    Tensor C(rows, rows);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < rows; ++j) {
            int d = std::max(-clip, std::min(clip, j - i));
            C.at(i, j) = T.v[d + clip];
        }
    int ti = table.i, oi = static_cast<int>(g->size());
    return g->node(std::move(C), [ti, oi, rows, clip](Graph& gr) {
        const Tensor& dC = gr.grad(oi);
        Tensor& dT = gr.grad(ti);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < rows; ++j) {
                int d = std::max(-clip, std::min(clip, j - i));
                dT.v[d + clip] += dC.at(i, j);
            }
    });
}

Var cross_entropy_rows(Var logits, const std::vector<int>& targets,
                       const std::vector<int>& rows) {
    Graph* g = logits.g;
    const Tensor& L = logits.val();
    double loss = 0.0;
    for (int r : rows) {
        assert(r >= 0 && static_cast<size_t>(r) < targets.size());
        const double* lr = L.row(r);
        double lse = log_sum_exp(lr, L.cols);
        loss += lse - lr[targets[r]];
    }
    Tensor C(1, 1);
    C.v[0] = loss;
    int li = logits.i, oi = static_cast<int>(g->size());
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto rw = std::make_shared<std::vector<int>>(rows);
    return g->node(std::move(C), [li, oi, tg, rw](Graph& gr) {
        double go = gr.grad(oi).v[0];
        const Tensor& L = gr.val(li);
        Tensor& dL = gr.grad(li);
        std::vector<double> p(L.cols);
        for (int r : *rw) {
            std::copy(L.row(r), L.row(r) + L.cols, p.data());
            softmax_inplace(p.data(), L.cols);
            p[(*tg)[r]] -= 1.0;
            kernels::ops().axpy(L.cols, go, p.data(), dL.row(r));
        }
    });
}

Var weighted_sum(const std::vector<Var>& parts,
                 const std::vector<double>& weights) {
    assert(!parts.empty() && parts.size() == weights.size());
    Graph* g = parts[0].g;
    Tensor C(1, 1);
    std::vector<int> idx;
    for (size_t k = 0; k < parts.size(); ++k) {
        assert(parts[k].val().rows == 1 && parts[k].val().cols == 1);
        C.v[0] += weights[k] * parts[k].val().v[0];
        idx.push_back(parts[k].i);
    }
    int oi = static_cast<int>(g->size());
    auto ws = std::make_shared<std::vector<double>>(weights);
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    return g->node(std::move(C), [oi, ws, ix](Graph& gr) {
        double go = gr.grad(oi).v[0];
        for (size_t k = 0; k < ix->size(); ++k)
            gr.grad((*ix)[k]).v[0] += go * (*ws)[k];
    });
}

}  // namespace tokdiff
