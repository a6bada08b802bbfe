#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tokdiff/rng.hpp"

namespace tokdiff {

// Row-major dense matrix of doubles. Vectors are 1 x n or n x 1.
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    double* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
    int size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    bool all_finite() const;

    static Tensor filled(int r, int c, double x);
};

class Graph;

// Handle to a node on a Graph tape.
struct Var {
    Graph* g = nullptr;
    int i = -1;
    bool valid() const { return g != nullptr && i >= 0; }
    const Tensor& val() const;
    int rows() const { return val().rows; }
    int cols() const { return val().cols; }
    double scalar() const;
};

// Reverse-mode tape. Ops append nodes in topological order; backward() walks
// the tape in reverse. One Graph per forward pass.
class Graph {
public:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void(Graph&)> back;
    };

    Var node(Tensor val, std::function<void(Graph&)> back = {});
    Var leaf(const Tensor& t) { return node(t); }

    const Tensor& val(int i) const { return nodes_[i].val; }
    Tensor& grad(int i) { return nodes_[i].grad; }
    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every node.
    void backward(Var loss);

private:
    std::vector<Node> nodes_;
};

// ---- Tape ops ----

Var matmul(Var a, Var b);              // (m x k)(k x n) -> m x n
Var matmul_nt(Var a, Var b);           // (m x k)(n x k)^T -> m x n
Var add(Var a, Var b);                 // same shape
Var add_rowvec(Var a, Var rv);         // rv: 1 x n broadcast over rows
Var scale(Var a, double s);
Var square(Var a);  // elementwise
Var gelu(Var a);
Var sigmoid(Var a);
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var scores);                          // per-row softmax
Var softmax_rows_bias(Var scores, const Tensor& bias); // softmax(scores + bias)
// RoPE over per-head channel pairs; positions give the rotation index per row.
Var rope(Var x, const std::vector<int>& positions, int n_heads, double base);
Var gather_rows(Var table, const std::vector<int>& ids);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(Var a, Var b);
Var slice_rows(Var a, int begin, int count);
Var mean_all(Var a);                  // 1 x 1
// S x S matrix of clipped relative-position biases from a 1 x (2*clip+1) table.
Var rel_bias(Var table, int rows, int clip);
// Sum of -log softmax(logits[r])[targets[r]] over the listed rows. 1 x 1.
Var cross_entropy_rows(Var logits, const std::vector<int>& targets,
                       const std::vector<int>& rows);
// Affine combination sum_i w[i] * parts[i] of 1 x 1 nodes.
Var weighted_sum(const std::vector<Var>& parts, const std::vector<double>& weights);

// ---- Numeric helpers shared with no-grad paths ----

void softmax_inplace(double* x, int n);
double log_sum_exp(const double* x, int n);

}  // namespace tokdiff
