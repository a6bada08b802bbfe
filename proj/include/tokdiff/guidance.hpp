#pragma once

#include <vector>

#include "tokdiff/tensor.hpp"

namespace tokdiff {

// Auxiliary-label alignment loss over per-frame logits (CTC). Logits are
// L' x (|A|+1) with blank = |A| in the last column; labels take values in
// [0, |A|). Throws Error when L' is shorter than the minimum alignable
// length (label count plus adjacent repeats).
double ctc_loss(const Tensor& logits, const std::vector<int>& labels);

// Tape version. Gradient is computed in the forward pass via the
// forward-backward occupancy posterior and replayed on backward.
Var ctc_loss_node(Var logits, const std::vector<int>& labels);

// Shortest frame count that can realize the labels: |labels| plus one
// mandatory blank per adjacent repeat.
int ctc_min_frames(const std::vector<int>& labels);

}  // namespace tokdiff
