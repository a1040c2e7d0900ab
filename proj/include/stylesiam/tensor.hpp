#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace stylesiam {

// Dense row-major float32 tensor. The gradient buffer is allocated when
// requires_grad is set; it is zero-initialized and accumulated into (+=) by
// backward passes, so callers clear it explicitly between optimizer steps.
//
// shadow is the 64-bit checking mode: a float64 image of the tensor that ops
// propagate whenever an input carries one. The finite-difference checker
// seeds it on the probed tensor and reads the scalar result from it, keeping
// central differences out of float32 cancellation noise. Training paths
// never allocate shadows.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<double> shadow;

    int numel() const {
        int n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    bool is_scalar() const { return numel() == 1; }
    bool has_shadow() const { return !shadow.empty(); }

    void seed_shadow() {
        shadow.assign(data.begin(), data.end());
    }

    double scalar_value() const {
        return has_shadow() ? shadow[0] : static_cast<double>(data[0]);
    }

    void set_requires_grad(bool on) {
        requires_grad = on;
        if (on && grad.size() != data.size()) grad.assign(data.size(), 0.0f);
        if (!on) grad.clear();
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0f);
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape);
TensorPtr make_tensor(std::vector<int> shape, std::vector<float> values);
TensorPtr make_scalar(float value);

std::string shape_str(const std::vector<int>& shape);
bool all_finite(const Tensor& t);

}  // namespace stylesiam
