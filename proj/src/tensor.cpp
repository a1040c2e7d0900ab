#include "stylesiam/tensor.hpp"

#include <cmath>
#include <sstream>

#include "stylesiam/exceptions.hpp"

namespace stylesiam {

TensorPtr make_tensor(std::vector<int> shape) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    for (int d : t->shape) {
        if (d <= 0) throw dim_error("tensor dimension must be positive, got shape " + shape_str(t->shape));
    }
    t->data.assign(static_cast<size_t>(t->numel()), 0.0f);
    return t;
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<float> values) {
    auto t = make_tensor(std::move(shape));
    if (values.size() != t->data.size()) {
        throw dim_error("tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(t->shape));
    }
    t->data = std::move(values);
    return t;
}

TensorPtr make_scalar(float value) {
    auto t = make_tensor({1});
    t->data[0] = value;
    return t;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream oss;
    oss << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) oss << ",";
        oss << shape[i];
    }
    oss << "]";
    return oss.str();
}

bool all_finite(const Tensor& t) {
    for (float v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace stylesiam
