#pragma once

#include <functional>

#include "stylesiam/graph.hpp"
#include "stylesiam/tensor.hpp"

namespace stylesiam {

// Builds a scalar output from x on the given graph. The same callable serves
// both sides of the check: recorded once for the analytic gradient, replayed
// with recording off for the numeric probes.
using ScalarFn = std::function<TensorPtr(Graph&, const TensorPtr&)>;

struct GradCheckReport {
    float max_rel_error = 0.0f;
    int checked = 0;
    int skipped_kinks = 0;
    int below_noise_floor = 0;
};

// Central-difference check of d(f)/d(x) against the tape's gradient.
// Per coordinate: (f(x+eps e_i) - f(x-eps e_i)) / (x_plus - x_minus), using
// the float32 values x actually took on and the float64 shadow of the scalar
// output, which keeps the probe out of cancellation noise. Returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
//
// Two exclusions for checking whole-network compositions:
//  - exclude_kinks: a disagreeing coordinate is skipped only when the
//    forward/backward one-sided slope disparity is at least half the
//    disagreement itself. Relu and maxpool kinks inside the probe interval
//    produce disparity commensurate with the contamination they cause; a
//    wrong analytic formula on smooth ground only produces curvature-scale
//    disparity, so real bugs still fail.
//  - noise_floor: coordinates where analytic and numeric are both below the
//    floor count as matching. Float32 backward passes leave ~1e-7 residue
//    on directions the loss is exactly invariant to (e.g. bias shifts that
//    normalization removes), which the 1e-8 denominator floor would
//    otherwise turn into order-1 relative errors.
//
// x must require grad; its grad buffer is used as scratch. x's data is
// restored on exit.
GradCheckReport finite_diff_check_report(const ScalarFn& f, const TensorPtr& x, float eps,
                                         bool exclude_kinks, float noise_floor = 0.0f);

inline float finite_diff_check(const ScalarFn& f, const TensorPtr& x, float eps) {
    return finite_diff_check_report(f, x, eps, false).max_rel_error;
}

}  // namespace stylesiam
