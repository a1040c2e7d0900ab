#pragma once

#include "stylesiam/graph.hpp"
#include "stylesiam/model.hpp"
#include "stylesiam/tensor.hpp"

namespace stylesiam {

enum class DistanceKind { squared_euclidean, euclidean };
enum class StyleMode { aux_vector, raw_gram };

struct KlPolicy {
    bool equal_to_m_l = true;
    float constant = 0.0f;  // used when equal_to_m_l is false

    float resolve(int m_l) const { return equal_to_m_l ? static_cast<float>(m_l) : constant; }
};

struct LossParams {
    float alpha = 0.2f;  // triplet margin
    float k_const = 2.0f;
    KlPolicy k_l;
    float w1 = 1.0f;
    float w2 = 1.0f;
    StyleMode style_mode = StyleMode::aux_vector;
    DistanceKind distance = DistanceKind::euclidean;

    void validate() const;  // w1 + w2 > 0, alpha >= 0
};

// ||e1 - e2|| or its square; the root is stabilized with +1e-12 so the
// gradient stays finite at zero distance.
TensorPtr distance(Graph& g, const TensorPtr& e1, const TensorPtr& e2, DistanceKind kind);

// max(alpha + d(A,P) - d(A,N), 0)
TensorPtr triplet_loss(Graph& g, const TensorPtr& anchor, const TensorPtr& positive,
                       const TensorPtr& negative, const LossParams& params);

// (1 / (4 n_l^2 m_l^2)) * sum (gm1 - gm2)^2; non-training reference form
double style_loss_reference(const Tensor& gm1, const Tensor& gm2, int n_l, int m_l);

// K - K_l * (1 / (4 n_l^2 m_l^2)) * sum (repP - repN)^2. Decreases as the
// two representations diverge; not clamped below.
TensorPtr layer_style_loss(Graph& g, const TensorPtr& rep_p, const TensorPtr& rep_n, int n_l,
                           int m_l, const LossParams& params);

struct LossBreakdown {
    double total = 0.0;
    double triplet_term = 0.0;            // before w1
    std::vector<double> style_terms;      // per tap, before w2
};

// w1 * triplet(embeddings) + w2 * sum over taps of layer_style_loss(P, N)
std::pair<TensorPtr, LossBreakdown> hybrid_loss(Graph& g, const ForwardOutput& out_a,
                                                const ForwardOutput& out_p,
                                                const ForwardOutput& out_n,
                                                const LossParams& params);

}  // namespace stylesiam
