#include "stylesiam/graph.hpp"

#include "stylesiam/exceptions.hpp"

namespace stylesiam {

void Graph::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw contract_error("backward requires a scalar loss, got shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad) {
        throw contract_error("backward on a tensor that does not require grad");
    }
    loss->grad[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backward) it->backward();
    }
}

}  // namespace stylesiam
