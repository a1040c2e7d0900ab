#include "stylesiam/grad_check.hpp"

#include <cmath>
#include <cstdlib>

#include "stylesiam/exceptions.hpp"

namespace stylesiam {

namespace {

double eval_scalar(const ScalarFn& f, const TensorPtr& x) {
    Graph probe;
    probe.recording = false;
    auto out = f(probe, x);
    if (!out->is_scalar()) {
        throw contract_error("finite_diff_check requires a scalar-valued function, got shape " +
                             shape_str(out->shape));
    }
    return out->scalar_value();
}

double analytic_at(const ScalarFn& f, const TensorPtr& x, size_t i) {
    x->zero_grad();
    Graph g;
    auto out = f(g, x);
    g.backward(out);
    return x->grad[i];
}

}  // namespace

GradCheckReport finite_diff_check_report(const ScalarFn& f, const TensorPtr& x, float eps,
                                         bool exclude_kinks, float noise_floor) {
    if (!(eps > 0.0f)) throw contract_error("finite_diff_check eps must be positive");
    if (!x->requires_grad) throw contract_error("finite_diff_check needs x.requires_grad");

    x->zero_grad();
    Graph g;
    auto out = f(g, x);
    if (!out->is_scalar()) {
        throw contract_error("finite_diff_check requires a scalar-valued function, got shape " +
                             shape_str(out->shape));
    }
    g.backward(out);
    std::vector<float> analytic = x->grad;
    x->zero_grad();

    // 64-bit checking mode: probes run through the ops' float64 shadow path,
    // seeded here, so the numeric side is free of float32 staircase noise.
    const bool had_shadow = x->has_shadow();
    x->seed_shadow();

    const double f_center = exclude_kinks ? eval_scalar(f, x) : 0.0;

    GradCheckReport report;
    for (size_t i = 0; i < x->data.size(); ++i) {
        const float orig = x->data[i];
        x->data[i] = orig + eps;
        x->shadow[i] = static_cast<double>(x->data[i]);
        const double x_plus = x->shadow[i];
        const double f_plus = eval_scalar(f, x);
        x->data[i] = orig - eps;
        x->shadow[i] = static_cast<double>(x->data[i]);
        const double x_minus = x->shadow[i];
        const double f_minus = eval_scalar(f, x);
        x->data[i] = orig;
        x->shadow[i] = static_cast<double>(orig);

        const double numeric = (f_plus - f_minus) / (x_plus - x_minus);
        const double a = static_cast<double>(analytic[i]);

        if (noise_floor > 0.0f && std::fabs(a) < noise_floor && std::fabs(numeric) < noise_floor) {
            ++report.below_noise_floor;
            continue;
        }

        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(a - numeric) / denom;

        if (exclude_kinks && rel >= 1e-3) {
            const double fwd = (f_plus - f_center) / (x_plus - static_cast<double>(orig));
            const double bwd = (f_center - f_minus) / (static_cast<double>(orig) - x_minus);
            if (std::fabs(fwd - bwd) >= 0.5 * std::fabs(a - numeric)) {
                ++report.skipped_kinks;
                continue;
            }
            // A kink sitting at the evaluation point itself leaves the
            // one-sided slopes in agreement (both straddle it) while the
            // analytic gradient follows a single branch; in that case the
            // analytic value jumps under an eps shift of the coordinate. A
            // wrong formula on smooth ground stays stable under the shift.
            if (rel < 5e-3) {
                ++report.checked;
                if (rel > report.max_rel_error) report.max_rel_error = static_cast<float>(rel);
                continue;
            }
            x->data[i] = orig + eps;
            x->shadow[i] = static_cast<double>(x->data[i]);
            const double a_plus = analytic_at(f, x, i);
            x->data[i] = orig - eps;
            x->shadow[i] = static_cast<double>(x->data[i]);
            const double a_minus = analytic_at(f, x, i);
            x->data[i] = orig;
            x->shadow[i] = static_cast<double>(orig);
            x->zero_grad();
            if (std::max(std::fabs(a_plus - a), std::fabs(a_minus - a)) >=
                0.5 * std::fabs(a - numeric)) {
                ++report.skipped_kinks;
                continue;
            }
        }

        ++report.checked;
        if (rel > report.max_rel_error) report.max_rel_error = static_cast<float>(rel);
    }
    if (!had_shadow) x->shadow.clear();
    return report;
}

}  // namespace stylesiam
