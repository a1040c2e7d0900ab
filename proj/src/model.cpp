#include "stylesiam/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "stylesiam/exceptions.hpp"
#include "stylesiam/rng.hpp"

namespace stylesiam {

using nlohmann::json;

ModelConfig ModelConfig::defaults() {
    ModelConfig c;
    c.blocks = {{16, 3, true}, {32, 3, true}, {64, 3, true}, {64, 3, true}};
    c.tap_indices = {0, 1, 2, 3};
    return c;
}

void ModelConfig::validate() const {
    if (blocks.empty()) throw config_error("model config: blocks must be non-empty");
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].out_channels <= 0) {
            throw config_error("model config: block " + std::to_string(i) + " out_channels must be positive");
        }
        if (blocks[i].kernel <= 0 || blocks[i].kernel % 2 == 0) {
            throw config_error("model config: block " + std::to_string(i) + " kernel must be positive odd");
        }
    }
    if (tap_indices.empty()) throw config_error("model config: tap_indices must be non-empty");
    for (size_t i = 0; i < tap_indices.size(); ++i) {
        if (tap_indices[i] < 0 || tap_indices[i] >= static_cast<int>(blocks.size())) {
            throw config_error("model config: tap index " + std::to_string(tap_indices[i]) +
                               " out of range for " + std::to_string(blocks.size()) + " blocks");
        }
        if (i > 0 && tap_indices[i] <= tap_indices[i - 1]) {
            throw config_error("model config: tap_indices must be strictly increasing");
        }
    }
    if (embedding_dim <= 0) throw config_error("model config: embedding_dim must be positive");
    if (style_out_dim <= 0) throw config_error("model config: style_out_dim must be positive");
    for (int d : input_shape) {
        if (d <= 0) throw config_error("model config: input_shape dims must be positive");
    }
    int h = input_shape[1], w = input_shape[2];
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].pool_after) {
            if (h % 2 != 0 || w % 2 != 0) {
                throw config_error("model config: block " + std::to_string(i) +
                                   " pools an odd spatial size " + std::to_string(h) + "x" +
                                   std::to_string(w));
            }
            h /= 2;
            w /= 2;
        }
        if (h < 1 || w < 1) {
            throw config_error("model config: spatial size collapses below 1 at block " +
                               std::to_string(i));
        }
    }
}

std::vector<BlockShape> block_output_shapes(const ModelConfig& config) {
    std::vector<BlockShape> shapes;
    int h = config.input_shape[1], w = config.input_shape[2];
    for (const auto& blk : config.blocks) {
        if (blk.pool_after) {
            h /= 2;
            w /= 2;
        }
        shapes.push_back({blk.out_channels, h, w});
    }
    return shapes;
}

std::string ModelConfig::to_json() const {
    json j;
    j["blocks"] = json::array();
    for (const auto& b : blocks) j["blocks"].push_back({b.out_channels, b.kernel, b.pool_after});
    j["tap_indices"] = tap_indices;
    j["embedding_dim"] = embedding_dim;
    j["style_out_dim"] = style_out_dim;
    j["input_shape"] = input_shape;
    j["bn_position"] = bn_position == BnPosition::before_gram ? "before_gram" : "after_gram";
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("model config: invalid JSON: ") + e.what());
    }
    static const std::vector<std::string> known = {"blocks",      "tap_indices", "embedding_dim",
                                                   "style_out_dim", "input_shape", "bn_position"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw config_error("model config: unknown key \"" + it.key() + "\"");
        }
    }
    ModelConfig c = ModelConfig::defaults();
    try {
        if (j.contains("blocks")) {
            c.blocks.clear();
            for (const auto& b : j.at("blocks")) {
                if (!b.is_array() || b.size() != 3) {
                    throw config_error("model config: each block must be [out_channels, kernel, pool_after]");
                }
                c.blocks.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<bool>()});
            }
            // taps default to the first four blocks of the configured stack
            c.tap_indices.clear();
            for (int i = 0; i < static_cast<int>(c.blocks.size()) && i < 4; ++i) {
                c.tap_indices.push_back(i);
            }
        }
        if (j.contains("tap_indices")) c.tap_indices = j.at("tap_indices").get<std::vector<int>>();
        if (j.contains("embedding_dim")) c.embedding_dim = j.at("embedding_dim").get<int>();
        if (j.contains("style_out_dim")) c.style_out_dim = j.at("style_out_dim").get<int>();
        if (j.contains("input_shape")) {
            auto v = j.at("input_shape").get<std::vector<int>>();
            if (v.size() != 3) throw config_error("model config: input_shape must have 3 dims");
            c.input_shape = {v[0], v[1], v[2]};
        }
        if (j.contains("bn_position")) {
            const auto s = j.at("bn_position").get<std::string>();
            if (s == "before_gram") {
                c.bn_position = BnPosition::before_gram;
            } else if (s == "after_gram") {
                c.bn_position = BnPosition::after_gram;
            } else {
                throw config_error("model config: bn_position must be before_gram or after_gram");
            }
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

void Model::zero_grads() {
    for (auto& p : params_) {
        if (p.trainable) p.tensor->zero_grad();
    }
}

namespace {

TensorPtr he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    auto t = make_tensor(std::move(shape));
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (auto& v : t->data) v = rng.uniform(-limit, limit);
    return t;
}

TensorPtr filled(std::vector<int> shape, float value) {
    auto t = make_tensor(std::move(shape));
    for (auto& v : t->data) v = value;
    return t;
}

}  // namespace

Model build_model(const ModelConfig& config, uint32_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(seed);

    auto add_param = [&m](const std::string& name, TensorPtr t, bool trainable) {
        if (trainable) t->set_requires_grad(true);
        m.params_.push_back({name, t, trainable});
        return t;
    };

    const auto shapes = block_output_shapes(config);
    int in_ch = config.input_shape[0];
    for (size_t i = 0; i < config.blocks.size(); ++i) {
        const auto& blk = config.blocks[i];
        const int fan_in = in_ch * blk.kernel * blk.kernel;
        auto w = he_uniform({blk.out_channels, in_ch, blk.kernel, blk.kernel}, fan_in, rng);
        auto b = make_tensor({blk.out_channels});
        m.conv_weights.push_back(add_param("conv" + std::to_string(i) + ".weight", w, true));
        m.conv_biases.push_back(add_param("conv" + std::to_string(i) + ".bias", b, true));
        in_ch = blk.out_channels;
    }

    for (size_t t = 0; t < config.tap_indices.size(); ++t) {
        const int bi = config.tap_indices[t];
        const auto& bs = shapes[bi];
        Model::TapHead head;
        head.block_index = bi;
        head.channels = bs.channels;
        head.height = bs.height;
        head.width = bs.width;
        const std::string prefix = "tap" + std::to_string(t);
        head.bn_gamma = add_param(prefix + ".bn.gamma", filled({bs.channels}, 1.0f), true);
        head.bn_beta = add_param(prefix + ".bn.beta", make_tensor({bs.channels}), true);
        head.bn_running_mean = add_param(prefix + ".bn.running_mean", make_tensor({bs.channels}), false);
        head.bn_running_var = add_param(prefix + ".bn.running_var", filled({bs.channels}, 1.0f), false);
        const int gram_flat = bs.channels * bs.channels;
        head.style_weight = add_param(prefix + ".style.weight",
                                      he_uniform({config.style_out_dim, gram_flat}, gram_flat, rng), true);
        head.style_bias = add_param(prefix + ".style.bias", make_tensor({config.style_out_dim}), true);
        m.taps.push_back(std::move(head));
    }

    const auto& last = shapes.back();
    const int flat = last.channels * last.height * last.width;
    m.embed_weight = add_param("embed.weight", he_uniform({config.embedding_dim, flat}, flat, rng), true);
    m.embed_bias = add_param("embed.bias", make_tensor({config.embedding_dim}), true);
    return m;
}

std::vector<ForwardOutput> forward(Graph& g, Model& model, const TensorPtr& image_batch,
                                   ops::BnMode mode) {
    const auto& cfg = model.config;
    if (image_batch->shape.size() != 4 || image_batch->shape[1] != cfg.input_shape[0] ||
        image_batch->shape[2] != cfg.input_shape[1] || image_batch->shape[3] != cfg.input_shape[2]) {
        throw dim_error("forward expects [B," + std::to_string(cfg.input_shape[0]) + "," +
                        std::to_string(cfg.input_shape[1]) + "," + std::to_string(cfg.input_shape[2]) +
                        "], got " + shape_str(image_batch->shape));
    }
    const int batch = image_batch->shape[0];

    // backbone: conv -> relu -> (pool), taps pick up block outputs
    std::vector<TensorPtr> tapped(model.taps.size());
    TensorPtr x = image_batch;
    for (size_t i = 0; i < cfg.blocks.size(); ++i) {
        x = ops::conv2d(g, x, model.conv_weights[i], model.conv_biases[i], 1, cfg.blocks[i].kernel / 2);
        x = ops::relu(g, x);
        if (cfg.blocks[i].pool_after) x = ops::maxpool2(g, x);
        for (size_t t = 0; t < model.taps.size(); ++t) {
            if (model.taps[t].block_index == static_cast<int>(i)) tapped[t] = x;
        }
    }

    std::vector<ForwardOutput> outputs(batch);

    for (size_t t = 0; t < model.taps.size(); ++t) {
        auto& head = model.taps[t];
        const int ch = head.channels;
        const int m_l = head.height * head.width;

        std::vector<TensorPtr> grams(batch);
        std::vector<TensorPtr> style_in(batch);  // [1, ch*ch] rows fed to the style dense
        if (cfg.bn_position == BnPosition::before_gram) {
            auto bn = ops::batchnorm(g, tapped[t], head.bn_gamma, head.bn_beta,
                                     head.bn_running_mean, head.bn_running_var, mode);
            for (int b = 0; b < batch; ++b) {
                auto feat = ops::reshape(g, ops::select_row(g, bn, b), {ch, m_l});
                grams[b] = ops::gram_matrix(g, feat);
                style_in[b] = ops::reshape(g, grams[b], {1, ch * ch});
            }
        } else {
            for (int b = 0; b < batch; ++b) {
                auto feat = ops::reshape(g, ops::select_row(g, tapped[t], b), {ch, m_l});
                grams[b] = ops::gram_matrix(g, feat);
            }
            auto bn = ops::batchnorm(g, ops::stack_rows(g, grams), head.bn_gamma, head.bn_beta,
                                     head.bn_running_mean, head.bn_running_var, mode);
            for (int b = 0; b < batch; ++b) {
                style_in[b] = ops::reshape(g, ops::select_row(g, bn, b), {1, ch * ch});
            }
        }
        for (int b = 0; b < batch; ++b) {
            auto sv = ops::dense(g, style_in[b], head.style_weight, head.style_bias);
            outputs[b].aux.push_back(TapOutput{ops::reshape(g, sv, {cfg.style_out_dim}),
                                               grams[b], ch, m_l});
        }
    }

    const auto last_shape = block_output_shapes(cfg).back();
    const int flat = last_shape.channels * last_shape.height * last_shape.width;
    auto embedded = ops::dense(g, ops::reshape(g, x, {batch, flat}), model.embed_weight, model.embed_bias);
    for (int b = 0; b < batch; ++b) {
        outputs[b].embedding = ops::select_row(g, embedded, b);
    }
    return outputs;
}

TensorPtr embed(Model& model, const TensorPtr& image_batch) {
    Graph g;
    g.recording = false;
    auto outs = forward(g, model, image_batch, ops::BnMode::eval);
    auto result = make_tensor({static_cast<int>(outs.size()), model.config.embedding_dim});
    for (size_t b = 0; b < outs.size(); ++b) {
        std::copy(outs[b].embedding->data.begin(), outs[b].embedding->data.end(),
                  result->data.begin() + b * model.config.embedding_dim);
    }
    return result;
}

namespace {

constexpr uint16_t kCheckpointVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    put_u32(buf, std::bit_cast<uint32_t>(v));
}

struct Reader {
    std::string buf;
    size_t pos = 0;
    const std::string path;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw io_error("checkpoint truncated: " + path);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::string buf;
    buf += "HSSN";
    put_u16(buf, kCheckpointVersion);
    const std::string cfg = model.config.to_json();
    put_u32(buf, static_cast<uint32_t>(cfg.size()));
    buf += cfg;
    put_u32(buf, static_cast<uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        put_u32(buf, static_cast<uint32_t>(p.name.size()));
        buf += p.name;
        put_u32(buf, static_cast<uint32_t>(p.tensor->shape.size()));
        for (int d : p.tensor->shape) put_u32(buf, static_cast<uint32_t>(d));
        for (float v : p.tensor->data) put_f32(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("short write on checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    Reader r{std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()), 0, path};

    if (r.str(4) != "HSSN") throw io_error("bad checkpoint magic: " + path);
    const uint16_t version = r.u16();
    if (version != kCheckpointVersion) {
        throw io_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    }
    const auto cfg = ModelConfig::from_json(r.str(r.u32()));
    Model model = build_model(cfg, 0);

    const uint32_t count = r.u32();
    if (count != model.params().size()) {
        throw config_error("checkpoint parameter count " + std::to_string(count) + " does not match config (" +
                           std::to_string(model.params().size()) + "): " + path);
    }
    for (auto& p : model.params()) {
        const std::string name = r.str(r.u32());
        if (name != p.name) {
            throw config_error("checkpoint parameter \"" + name + "\" where \"" + p.name + "\" expected: " + path);
        }
        const uint32_t rank = r.u32();
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(r.u32());
        if (dims != p.tensor->shape) {
            throw config_error("checkpoint shape conflict on \"" + name + "\": file has " + shape_str(dims) +
                               ", config implies " + shape_str(p.tensor->shape));
        }
        for (auto& v : p.tensor->data) v = r.f32();
    }
    return model;
}

}  // namespace stylesiam
