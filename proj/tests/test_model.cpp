#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stylesiam/exceptions.hpp"
#include "stylesiam/losses.hpp"
#include "stylesiam/model.hpp"
#include "stylesiam/rng.hpp"

using namespace stylesiam;

namespace {

TensorPtr random_image_batch(int batch, const ModelConfig& cfg, Rng& rng) {
    auto t = make_tensor({batch, cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]});
    for (auto& v : t->data) v = rng.unit();
    return t;
}

ModelConfig small_config() {
    ModelConfig c;
    c.blocks = {{4, 3, true}, {8, 3, true}};
    c.tap_indices = {0, 1};
    c.embedding_dim = 6;
    c.style_out_dim = 5;
    c.input_shape = {3, 8, 8};
    return c;
}

}  // namespace

TEST_CASE("build_model is deterministic in (config, seed)") {
    auto cfg = small_config();
    auto m1 = build_model(cfg, 42);
    auto m2 = build_model(cfg, 42);
    REQUIRE(m1.params().size() == m2.params().size());
    for (size_t i = 0; i < m1.params().size(); ++i) {
        CHECK(m1.params()[i].name == m2.params()[i].name);
        CHECK(m1.params()[i].tensor->data == m2.params()[i].tensor->data);
    }
    auto m3 = build_model(cfg, 43);
    bool any_diff = false;
    for (size_t i = 0; i < m1.params().size(); ++i) {
        if (m1.params()[i].tensor->data != m3.params()[i].tensor->data) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("invalid configs are rejected with configuration errors") {
    auto cfg = small_config();
    cfg.tap_indices = {0, 5};
    CHECK_THROWS_AS(build_model(cfg, 1), config_error);

    auto cfg2 = small_config();
    cfg2.tap_indices = {1, 0};
    CHECK_THROWS_AS(build_model(cfg2, 1), config_error);

    auto cfg3 = small_config();
    cfg3.blocks[0].kernel = 4;
    CHECK_THROWS_AS(build_model(cfg3, 1), config_error);

    auto cfg4 = small_config();
    cfg4.input_shape = {3, 6, 6};  // 6 -> 3, odd before second pool
    CHECK_THROWS_AS(build_model(cfg4, 1), config_error);

    auto cfg5 = small_config();
    cfg5.tap_indices = {};
    CHECK_THROWS_AS(build_model(cfg5, 1), config_error);
}

TEST_CASE("default config parameter count matches the closed-form sum") {
    auto cfg = ModelConfig::defaults();
    auto model = build_model(cfg, 3);

    // independent arithmetic from the config: convs, taps, embedding head
    long expected_trainable = 0;
    long expected_stats = 0;
    int in_ch = cfg.input_shape[0];
    int h = cfg.input_shape[1], w = cfg.input_shape[2];
    std::vector<std::array<int, 3>> out_shapes;
    for (const auto& blk : cfg.blocks) {
        expected_trainable += static_cast<long>(blk.out_channels) * in_ch * blk.kernel * blk.kernel +
                              blk.out_channels;
        in_ch = blk.out_channels;
        if (blk.pool_after) {
            h /= 2;
            w /= 2;
        }
        out_shapes.push_back({blk.out_channels, h, w});
    }
    for (int t : cfg.tap_indices) {
        const int c = out_shapes[t][0];
        expected_trainable += 2L * c;                                        // gamma, beta
        expected_stats += 2L * c;                                            // running stats
        expected_trainable += static_cast<long>(cfg.style_out_dim) * c * c;  // style weight
        expected_trainable += cfg.style_out_dim;                             // style bias
    }
    const auto& last = out_shapes.back();
    expected_trainable += static_cast<long>(cfg.embedding_dim) * last[0] * last[1] * last[2] +
                          cfg.embedding_dim;

    long got_trainable = 0, got_stats = 0;
    for (const auto& p : model.params()) {
        (p.trainable ? got_trainable : got_stats) += p.tensor->numel();
    }
    CHECK(got_trainable == expected_trainable);
    CHECK(got_stats == expected_stats);
}

TEST_CASE("forward output shapes follow the config") {
    auto cfg = small_config();
    auto model = build_model(cfg, 5);
    Rng rng(61);
    auto batch = random_image_batch(3, cfg, rng);
    Graph g;
    g.recording = false;
    auto outs = forward(g, model, batch, ops::BnMode::eval);
    REQUIRE(outs.size() == 3);
    for (const auto& out : outs) {
        CHECK(out.embedding->shape == std::vector<int>({cfg.embedding_dim}));
        REQUIRE(out.aux.size() == cfg.tap_indices.size());
        CHECK(out.aux[0].raw_gram->shape == std::vector<int>({4, 4}));
        CHECK(out.aux[1].raw_gram->shape == std::vector<int>({8, 8}));
        CHECK(out.aux[0].style_vector->shape == std::vector<int>({cfg.style_out_dim}));
        CHECK(out.aux[0].n_l == 4);
        CHECK(out.aux[0].m_l == 16);  // 8x8 input pooled once
        CHECK(out.aux[1].n_l == 8);
        CHECK(out.aux[1].m_l == 4);
        for (float v : out.embedding->data) CHECK(std::isfinite(v));
    }

    auto bad = make_tensor({2, 3, 10, 10});
    CHECK_THROWS_AS(forward(g, model, bad, ops::BnMode::eval), dim_error);
}

TEST_CASE("same image through the same model gives identical outputs") {
    auto cfg = small_config();
    auto model = build_model(cfg, 8);
    Rng rng(62);
    auto batch = random_image_batch(2, cfg, rng);
    Graph g;
    g.recording = false;
    auto first = forward(g, model, batch, ops::BnMode::eval);
    auto second = forward(g, model, batch, ops::BnMode::eval);
    for (size_t b = 0; b < first.size(); ++b) {
        CHECK(first[b].embedding->data == second[b].embedding->data);
        for (size_t t = 0; t < first[b].aux.size(); ++t) {
            CHECK(first[b].aux[t].style_vector->data == second[b].aux[t].style_vector->data);
            CHECK(first[b].aux[t].raw_gram->data == second[b].aux[t].raw_gram->data);
        }
    }
}

TEST_CASE("forward equals a hand-traced composition of the primitives") {
    auto cfg = small_config();
    auto model = build_model(cfg, 21);
    Rng rng(63);
    auto batch = random_image_batch(1, cfg, rng);
    Graph g;
    g.recording = false;
    auto outs = forward(g, model, batch, ops::BnMode::eval);

    // manual trace, eval mode, block by block
    TensorPtr x = batch;
    std::vector<TensorPtr> tapped;
    for (size_t i = 0; i < cfg.blocks.size(); ++i) {
        x = ops::conv2d(g, x, model.conv_weights[i], model.conv_biases[i], 1, cfg.blocks[i].kernel / 2);
        x = ops::relu(g, x);
        if (cfg.blocks[i].pool_after) x = ops::maxpool2(g, x);
        tapped.push_back(x);
    }
    for (size_t t = 0; t < model.taps.size(); ++t) {
        const auto& head = model.taps[t];
        auto bn = ops::batchnorm(g, tapped[head.block_index], head.bn_gamma, head.bn_beta,
                                 head.bn_running_mean, head.bn_running_var, ops::BnMode::eval);
        auto feat = ops::reshape(g, ops::select_row(g, bn, 0), {head.channels, head.height * head.width});
        auto gram = ops::gram_matrix(g, feat);
        auto sv = ops::dense(g, ops::reshape(g, gram, {1, head.channels * head.channels}),
                             head.style_weight, head.style_bias);
        CHECK(outs[0].aux[t].raw_gram->data == gram->data);
        CHECK(outs[0].aux[t].style_vector->data == sv->data);
    }
    const auto last = block_output_shapes(cfg).back();
    auto emb = ops::dense(g, ops::reshape(g, x, {1, last.channels * last.height * last.width}),
                          model.embed_weight, model.embed_bias);
    CHECK(outs[0].embedding->data == std::vector<float>(emb->data.begin(), emb->data.end()));
}

TEST_CASE("embed equals forward embeddings and preserves batch order") {
    auto cfg = small_config();
    auto model = build_model(cfg, 10);
    Rng rng(64);
    auto batch = random_image_batch(3, cfg, rng);
    auto embedded = embed(model, batch);
    REQUIRE(embedded->shape == std::vector<int>({3, cfg.embedding_dim}));
    Graph g;
    g.recording = false;
    auto outs = forward(g, model, batch, ops::BnMode::eval);
    for (int b = 0; b < 3; ++b) {
        for (int d = 0; d < cfg.embedding_dim; ++d) {
            CHECK(embedded->data[b * cfg.embedding_dim + d] == outs[b].embedding->data[d]);
        }
    }
}

TEST_CASE("eval embeddings are independent of batch company") {
    auto cfg = small_config();
    auto model = build_model(cfg, 12);
    Rng rng(65);
    auto lone = random_image_batch(1, cfg, rng);
    auto crowd = make_tensor({4, 3, 8, 8});
    std::copy(lone->data.begin(), lone->data.end(), crowd->data.begin());
    for (size_t i = lone->data.size(); i < crowd->data.size(); ++i) crowd->data[i] = rng.unit();

    auto e1 = embed(model, lone);
    auto e4 = embed(model, crowd);
    for (int d = 0; d < cfg.embedding_dim; ++d) {
        CHECK(e1->data[d] == e4->data[d]);
    }
}

TEST_CASE("siamese branches share parameters and accumulate gradients additively") {
    auto cfg = small_config();
    auto model = build_model(cfg, 14);
    Rng rng(66);
    auto batch1 = random_image_batch(2, cfg, rng);
    auto batch2 = random_image_batch(2, cfg, rng);

    auto run_loss = [&](bool first, bool second) {
        model.zero_grads();
        Graph g;
        TensorPtr total;
        if (first) {
            auto outs = forward(g, model, batch1, ops::BnMode::eval);
            total = ops::sum_squares(g, outs[0].embedding);
        }
        if (second) {
            auto outs = forward(g, model, batch2, ops::BnMode::eval);
            auto term = ops::sum_squares(g, outs[1].embedding);
            total = total ? ops::add(g, total, term) : term;
        }
        g.backward(total);
        std::vector<float> grads;
        for (const auto& p : model.params()) {
            if (p.trainable) grads.insert(grads.end(), p.tensor->grad.begin(), p.tensor->grad.end());
        }
        return grads;
    };

    auto g1 = run_loss(true, false);
    auto g2 = run_loss(false, true);
    auto g_both = run_loss(true, true);
    REQUIRE(g1.size() == g_both.size());
    double worst = 0.0;
    for (size_t i = 0; i < g1.size(); ++i) {
        worst = std::max(worst, std::fabs(static_cast<double>(g1[i]) + g2[i] - g_both[i]));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("batchnorm keeps aux outputs bounded under input scaling") {
    auto cfg = small_config();
    Rng rng(67);
    auto base = random_image_batch(2, cfg, rng);

    auto style_norm_bn = [&](float s) {
        auto model = build_model(cfg, 30);  // fresh stats per scale
        auto scaled = make_tensor(base->shape);
        for (size_t i = 0; i < base->data.size(); ++i) scaled->data[i] = base->data[i] * s;
        Graph g;
        auto outs = forward(g, model, scaled, ops::BnMode::train);
        double norm = 0.0;
        for (const auto& tap : outs[0].aux) {
            for (float v : tap.style_vector->data) norm += static_cast<double>(v) * v;
        }
        return std::sqrt(norm);
    };

    // test-only composition with the batchnorm stage removed
    auto style_norm_raw = [&](float s) {
        auto model = build_model(cfg, 30);
        auto scaled = make_tensor(base->shape);
        for (size_t i = 0; i < base->data.size(); ++i) scaled->data[i] = base->data[i] * s;
        Graph g;
        g.recording = false;
        TensorPtr x = scaled;
        double norm = 0.0;
        for (size_t i = 0; i < cfg.blocks.size(); ++i) {
            x = ops::conv2d(g, x, model.conv_weights[i], model.conv_biases[i], 1, cfg.blocks[i].kernel / 2);
            x = ops::relu(g, x);
            if (cfg.blocks[i].pool_after) x = ops::maxpool2(g, x);
            const auto& head = model.taps[i];
            auto feat = ops::reshape(g, ops::select_row(g, x, 0), {head.channels, head.height * head.width});
            auto gram = ops::gram_matrix(g, feat);
            auto sv = ops::dense(g, ops::reshape(g, gram, {1, head.channels * head.channels}),
                                 head.style_weight, head.style_bias);
            for (float v : sv->data) norm += static_cast<double>(v) * v;
        }
        return std::sqrt(norm);
    };

    const double bn1 = style_norm_bn(1.0f);
    const double raw1 = style_norm_raw(1.0f);
    for (float s : {10.0f, 100.0f}) {
        const double growth_bn = style_norm_bn(s) / bn1;
        const double growth_raw = style_norm_raw(s) / raw1;
        CHECK(growth_bn < s);                // sub-linear with normalization
        CHECK(growth_raw > growth_bn * s);   // monotone comparison between the two
    }
    // with zero-initialized biases the raw path scales as the square
    CHECK(style_norm_raw(10.0f) / raw1 == doctest::Approx(100.0).epsilon(0.05));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "stylesiam_ckpt_test";
    fs::create_directories(dir);
    const auto path = (dir / "model.ckpt").string();

    auto cfg = small_config();
    cfg.bn_position = BnPosition::after_gram;
    auto model = build_model(cfg, 77);
    // make running stats non-trivial before saving
    Rng rng(68);
    auto batch = random_image_batch(2, cfg, rng);
    Graph g;
    g.recording = false;
    forward(g, model, batch, ops::BnMode::train);

    save_checkpoint(model, path);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.config.to_json() == model.config.to_json());
    REQUIRE(loaded.params().size() == model.params().size());
    for (size_t i = 0; i < model.params().size(); ++i) {
        CHECK(loaded.params()[i].name == model.params()[i].name);
        CHECK(loaded.params()[i].tensor->data == model.params()[i].tensor->data);
    }

    const auto path2 = (dir / "model2.ckpt").string();
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // truncated file is rejected
    std::ofstream trunc((dir / "broken.ckpt").string(), std::ios::binary);
    trunc.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
    trunc.close();
    CHECK_THROWS_AS(load_checkpoint((dir / "broken.ckpt").string()), io_error);

    fs::remove_all(dir);
}

TEST_CASE("model config json rejects unknown keys and round-trips") {
    auto cfg = small_config();
    auto text = cfg.to_json();
    auto parsed = ModelConfig::from_json(text);
    CHECK(parsed.to_json() == text);

    CHECK_THROWS_AS(ModelConfig::from_json("{\"bogus\": 1}"), config_error);
    CHECK_THROWS_AS(ModelConfig::from_json("{\"bn_position\": \"sideways\"}"), config_error);
    CHECK_THROWS_AS(ModelConfig::from_json("not json"), config_error);
}

TEST_CASE("after_gram position normalizes gram matrices instead of features") {
    auto cfg = small_config();
    cfg.bn_position = BnPosition::after_gram;
    auto model = build_model(cfg, 19);
    Rng rng(69);
    auto batch = random_image_batch(2, cfg, rng);
    Graph g;
    g.recording = false;
    auto outs = forward(g, model, batch, ops::BnMode::eval);
    // raw grams are computed on un-normalized features here; with fresh
    // running stats (mean 0, var 1) the bn is near-identity, so the style
    // vector should match a manual dense over the raw gram
    const auto& head = model.taps[0];
    auto flat = ops::reshape(g, outs[0].aux[0].raw_gram, {1, head.channels * head.channels});
    auto manual = ops::dense(g, flat, head.style_weight, head.style_bias);
    double diff = 0.0;
    for (int i = 0; i < cfg.style_out_dim; ++i) {
        diff += std::fabs(manual->data[i] - outs[0].aux[0].style_vector->data[i]);
    }
    CHECK(diff / cfg.style_out_dim < 0.05);  // eps-scale discrepancy only
}
