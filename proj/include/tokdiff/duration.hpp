#pragma once

#include <functional>
#include <vector>

namespace tokdiff {

// Predicted length ratios are clamped to this range before resampling.
inline constexpr double kRatioMin = 0.25;
inline constexpr double kRatioMax = 4.0;

// Linear interpolation point u_t = (1-t)*u0 + t*r used to train the
// velocity field.
double flow_point(double u0, double r, double t);

// Squared error between a predicted velocity and the true straight-line
// velocity r - u0. t is part of the sampling contract but does not enter
// the target.
double fm_loss(double v_pred, double u0, double r, double t);

// Euler integration of du/dt = velocity(u, t) from t=0 to t=1.
double flow_euler(double u0, int steps,
                  const std::function<double(double, double)>& velocity);

// Target length plus the nearest-interpolation index map. src_index[j-1]
// holds the 1-based source position i* for 1-based target position j:
// i* = round((j - 1/2) * n_src / n_tgt + 1/2), half away from zero,
// evaluated in exact integer arithmetic.
struct LengthMap {
    int n_tgt = 0;
    std::vector<int> src_index;
};

LengthMap resample_length(int n_src, double r);

// v + w1*(v - v_no_a) + w2*(v - v_no_b), elementwise.
std::vector<double> twoway_cfg(const std::vector<double>& v,
                               const std::vector<double>& v_no_a,
                               const std::vector<double>& v_no_b, double w1,
                               double w2);

}  // namespace tokdiff
