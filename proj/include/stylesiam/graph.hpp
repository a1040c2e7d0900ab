#pragma once

#include <functional>
#include <vector>

#include "stylesiam/tensor.hpp"

namespace stylesiam {

// Records ops in execution order; backward replays them in reverse, once
// each. A graph is driven by one logical thread at a time. With recording
// off the ops run pure forward and produce no-grad outputs (eval mode,
// numeric probes of the gradient checker).
class Graph {
public:
    struct Node {
        const char* op;
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backward;
    };

    bool recording = true;

    void record(const char* op, std::vector<TensorPtr> inputs, TensorPtr output,
                std::function<void()> backward_fn) {
        if (!recording) return;
        nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward_fn)});
    }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients through the tape.
    void backward(const TensorPtr& loss);

    size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

// true when the op should allocate a gradient for its output
inline bool wants_grad(const Graph& g, std::initializer_list<TensorPtr> inputs) {
    if (!g.recording) return false;
    for (const auto& t : inputs) {
        if (t && t->requires_grad) return true;
    }
    return false;
}

}  // namespace stylesiam
