#include "stylesiam/losses.hpp"

#include "stylesiam/exceptions.hpp"
#include "stylesiam/ops.hpp"

namespace stylesiam {

void LossParams::validate() const {
    if (alpha < 0.0f) throw config_error("loss params: alpha must be >= 0");
    if (w1 < 0.0f || w2 < 0.0f) throw config_error("loss params: weights must be >= 0");
    if (w1 + w2 <= 0.0f) throw config_error("loss params: w1 + w2 must be > 0");
    if (!k_l.equal_to_m_l && k_l.constant <= 0.0f) {
        throw config_error("loss params: constant K_l must be positive");
    }
}

TensorPtr distance(Graph& g, const TensorPtr& e1, const TensorPtr& e2, DistanceKind kind) {
    if (e1->shape != e2->shape) {
        throw dim_error("distance dim mismatch: " + shape_str(e1->shape) + " vs " + shape_str(e2->shape));
    }
    auto squared = ops::sum_squares(g, ops::sub(g, e1, e2));
    if (kind == DistanceKind::squared_euclidean) return squared;
    return ops::sqrt_stable(g, squared, 1e-12f);
}

TensorPtr triplet_loss(Graph& g, const TensorPtr& anchor, const TensorPtr& positive,
                       const TensorPtr& negative, const LossParams& params) {
    auto d_ap = distance(g, anchor, positive, params.distance);
    auto d_an = distance(g, anchor, negative, params.distance);
    auto margin = ops::add_const(g, ops::sub(g, d_ap, d_an), params.alpha);
    return ops::relu(g, margin);
}

double style_loss_reference(const Tensor& gm1, const Tensor& gm2, int n_l, int m_l) {
    if (gm1.shape != gm2.shape) {
        throw dim_error("style_loss_reference shape mismatch: " + shape_str(gm1.shape) + " vs " +
                        shape_str(gm2.shape));
    }
    if (n_l <= 0 || m_l <= 0) throw contract_error("style_loss_reference needs positive n_l, m_l");
    double acc = 0.0;
    for (size_t i = 0; i < gm1.data.size(); ++i) {
        const double d = static_cast<double>(gm1.data[i]) - gm2.data[i];
        acc += d * d;
    }
    const double n = n_l, m = m_l;
    return acc / (4.0 * n * n * m * m);
}

TensorPtr layer_style_loss(Graph& g, const TensorPtr& rep_p, const TensorPtr& rep_n, int n_l,
                           int m_l, const LossParams& params) {
    if (rep_p->shape != rep_n->shape) {
        throw dim_error("layer_style_loss shape mismatch: " + shape_str(rep_p->shape) + " vs " +
                        shape_str(rep_n->shape));
    }
    if (n_l <= 0 || m_l <= 0) throw contract_error("layer_style_loss needs positive n_l, m_l");
    const double n = n_l, m = m_l;
    const float k_l = params.k_l.resolve(m_l);
    const float coef = static_cast<float>(-static_cast<double>(k_l) / (4.0 * n * n * m * m));
    auto diff2 = ops::sum_squares(g, ops::sub(g, rep_p, rep_n));
    return ops::add_const(g, ops::scale(g, diff2, coef), params.k_const);
}

std::pair<TensorPtr, LossBreakdown> hybrid_loss(Graph& g, const ForwardOutput& out_a,
                                                const ForwardOutput& out_p,
                                                const ForwardOutput& out_n,
                                                const LossParams& params) {
    params.validate();
    if (out_a.aux.size() != out_p.aux.size() || out_a.aux.size() != out_n.aux.size()) {
        throw dim_error("hybrid_loss: aux lists differ in length across branches");
    }

    LossBreakdown breakdown;
    auto trip = triplet_loss(g, out_a.embedding, out_p.embedding, out_n.embedding, params);
    breakdown.triplet_term = trip->data[0];

    auto total = ops::scale(g, trip, params.w1);
    if (params.w2 == 0.0f) {
        // baseline mode: the style path contributes nothing, keep it off the graph
        breakdown.style_terms.assign(out_p.aux.size(), 0.0);
        breakdown.total = total->data[0];
        return {total, breakdown};
    }
    for (size_t l = 0; l < out_p.aux.size(); ++l) {
        const auto& p_tap = out_p.aux[l];
        const auto& n_tap = out_n.aux[l];
        if (p_tap.n_l != n_tap.n_l || p_tap.m_l != n_tap.m_l) {
            throw dim_error("hybrid_loss: tap " + std::to_string(l) + " layer sizes differ between branches");
        }
        const auto& rep_p = params.style_mode == StyleMode::aux_vector ? p_tap.style_vector : p_tap.raw_gram;
        const auto& rep_n = params.style_mode == StyleMode::aux_vector ? n_tap.style_vector : n_tap.raw_gram;
        auto term = layer_style_loss(g, rep_p, rep_n, p_tap.n_l, p_tap.m_l, params);
        breakdown.style_terms.push_back(term->data[0]);
        total = ops::add(g, total, ops::scale(g, term, params.w2));
    }
    breakdown.total = total->data[0];
    return {total, breakdown};
}

}  // namespace stylesiam
