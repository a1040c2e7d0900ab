#pragma once

#include <array>
#include <string>
#include <vector>

#include "stylesiam/graph.hpp"
#include "stylesiam/ops.hpp"
#include "stylesiam/tensor.hpp"

namespace stylesiam {

enum class BnPosition { before_gram, after_gram };

struct BlockSpec {
    int out_channels = 0;
    int kernel = 3;  // odd; convs pad to keep spatial size
    bool pool_after = true;
};

struct ModelConfig {
    std::vector<BlockSpec> blocks;
    std::vector<int> tap_indices;
    int embedding_dim = 128;
    int style_out_dim = 128;
    std::array<int, 3> input_shape = {3, 64, 64};  // channels, height, width
    BnPosition bn_position = BnPosition::before_gram;

    static ModelConfig defaults();

    // throws config_error naming the violated constraint
    void validate() const;

    // canonical key-sorted JSON, embedded verbatim in checkpoints
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// spatial geometry of each block's output under the config
struct BlockShape {
    int channels;
    int height;
    int width;
};
std::vector<BlockShape> block_output_shapes(const ModelConfig& config);

// One auxiliary style output per tapped block. n_l and m_l are the tapped
// layer's channel count and spatial size, carried along for the loss
// normalization constants.
struct TapOutput {
    TensorPtr style_vector;  // [style_out_dim]
    TensorPtr raw_gram;      // [C_l, C_l]
    int n_l = 0;
    int m_l = 0;
};

struct ForwardOutput {
    TensorPtr embedding;  // [embedding_dim]
    std::vector<TapOutput> aux;
};

// Shared parameter set. Every siamese branch runs through the same tensors,
// so gradients from all branches accumulate into one place.
class Model {
public:
    struct Param {
        std::string name;
        TensorPtr tensor;
        bool trainable;
    };

    struct TapHead {
        int block_index;
        TensorPtr bn_gamma, bn_beta, bn_running_mean, bn_running_var;
        TensorPtr style_weight, style_bias;
        int channels, height, width;
    };

    ModelConfig config;
    std::vector<TensorPtr> conv_weights, conv_biases;
    std::vector<TapHead> taps;
    TensorPtr embed_weight, embed_bias;

    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }

    void zero_grads();

    friend Model build_model(const ModelConfig& config, uint32_t seed);

private:
    std::vector<Param> params_;
};

// Deterministic He-uniform initialization from the seed: identical
// (config, seed) produces bitwise-identical parameters.
Model build_model(const ModelConfig& config, uint32_t seed);

// Runs the backbone on [B,C,H,W] and returns one output per batch row.
// Train mode records onto the graph and updates batchnorm running stats.
std::vector<ForwardOutput> forward(Graph& g, Model& model, const TensorPtr& image_batch,
                                   ops::BnMode mode);

// Eval-mode embeddings, [B, embedding_dim]; aux outputs discarded.
TensorPtr embed(Model& model, const TensorPtr& image_batch);

// Checkpoint format: "HSSN" magic, u16 version, length-prefixed config JSON,
// then a count-prefixed list of (length-prefixed name, u32 rank, u32 dims,
// float32 little-endian data) covering parameters and running stats.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace stylesiam
