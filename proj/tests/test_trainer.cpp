#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "stylesiam/exceptions.hpp"
#include "stylesiam/trainer.hpp"

using namespace stylesiam;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Model single_param_model(std::vector<float> values) {
    Model m;
    const int n = static_cast<int>(values.size());
    auto t = make_tensor({n}, std::move(values));
    t->set_requires_grad(true);
    m.params().push_back({"p", t, true});
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 4;
    cfg.triplets_per_epoch = 16;
    cfg.seed = 3;
    cfg.k_folds = 2;
    cfg.model.blocks = {{4, 3, true}, {8, 3, true}};
    cfg.model.tap_indices = {0, 1};
    cfg.model.embedding_dim = 8;
    cfg.model.style_out_dim = 4;
    cfg.model.input_shape = {3, 16, 16};
    cfg.schedule.base_lr = 1e-3;
    return cfg;
}

}  // namespace

TEST_CASE("adam_step first step moves by roughly lr") {
    auto model = single_param_model({1.0f, -2.0f, 0.5f});
    auto state = AdamState::init(model);
    auto& p = model.params()[0].tensor;
    p->grad = {1.0f, 1.0f, 1.0f};
    adam_step(model, state, 1e-3f);
    CHECK(state.step_count == 1);
    for (int i = 0; i < 3; ++i) {
        const float moved = std::fabs(p->data[i] - (i == 0 ? 1.0f : i == 1 ? -2.0f : 0.5f));
        CHECK(moved == doctest::Approx(1e-3f).epsilon(1e-4));
    }
}

TEST_CASE("adam_step keeps parameters fixed for zero gradient or zero lr") {
    auto model = single_param_model({0.7f, -0.3f});
    auto state = AdamState::init(model);
    auto& p = model.params()[0].tensor;

    p->grad = {0.0f, 0.0f};
    adam_step(model, state, 1e-2f);
    CHECK(p->data == std::vector<float>({0.7f, -0.3f}));

    p->grad = {5.0f, -5.0f};
    adam_step(model, state, 0.0f);
    CHECK(p->data == std::vector<float>({0.7f, -0.3f}));
}

TEST_CASE("adam_step matches a hand-rolled scalar oracle on f(p)=p^2") {
    auto model = single_param_model({1.0f});
    auto state = AdamState::init(model);
    auto& p = model.params()[0].tensor;

    // independent float64 reference
    double rp = 1.0, rm = 0.0, rv = 0.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;

    for (int t = 1; t <= 5; ++t) {
        p->zero_grad();
        p->grad[0] = 2.0f * p->data[0];
        adam_step(model, state, static_cast<float>(lr));

        const double g = 2.0 * rp;
        rm = b1 * rm + (1 - b1) * g;
        rv = b2 * rv + (1 - b2) * g * g;
        const double mhat = rm / (1 - std::pow(b1, t));
        const double vhat = rv / (1 - std::pow(b2, t));
        rp -= lr * mhat / (std::sqrt(vhat) + eps);

        CHECK(std::fabs(p->data[0] - rp) < 1e-6);
    }
}

TEST_CASE("adam_step rejects parameters without gradients") {
    auto model = single_param_model({1.0f});
    auto state = AdamState::init(model);
    model.params()[0].tensor->set_requires_grad(false);
    CHECK_THROWS_WITH_AS(adam_step(model, state, 1e-3f), doctest::Contains("\"p\""), contract_error);
}

TEST_CASE("lr_at follows both schedules") {
    Schedule step;
    step.kind = Schedule::Kind::step_decay;
    step.base_lr = 8e-5;
    step.drop_factor = 0.5;
    step.every_n_epochs = 10;
    CHECK(lr_at(step, 0) == doctest::Approx(8e-5));
    CHECK(lr_at(step, 25) == doctest::Approx(8e-5 * 0.25));

    Schedule expo;
    expo.kind = Schedule::Kind::exponential_decay;
    expo.base_lr = 8e-5;
    expo.gamma_per_epoch = 0.95;
    CHECK(lr_at(expo, 0) == doctest::Approx(8e-5));
    const double expected = 8e-5 * std::pow(0.95, 20);
    CHECK(std::fabs(lr_at(expo, 20) - expected) < 1e-12 * expected);

    for (const auto& s : {step, expo}) {
        double prev = lr_at(s, 0);
        for (int e = 1; e < 40; ++e) {
            const double cur = lr_at(s, e);
            CHECK(cur <= prev);
            CHECK(cur > 0.0);
            prev = cur;
        }
    }

    Schedule bad;
    bad.drop_factor = 1.5;
    CHECK_THROWS_AS(lr_at(bad, 0), config_error);
}

TEST_CASE("train reduces the loss on a small synthetic set and is deterministic") {
    TempDir dir("stylesiam_train");
    auto manifest = generate_synthetic((dir.path / "data").string(), 8, 32, 2, 11);
    auto records = load_manifest(manifest);
    auto cfg = tiny_train_config();

    auto outfits_of = [&]() {
        std::vector<std::string> ids;
        for (const auto& [o, items] : complete_outfits(records)) ids.push_back(o);
        return ids;
    };
    auto folds = kfold_split(outfits_of(), 2, cfg.seed);

    cfg.checkpoint_dir = (dir.path / "run1").string();
    cfg.log_path = (dir.path / "run1.jsonl").string();
    ImageStore store1(records, cfg.model.input_shape, (dir.path / "data").string());
    auto r1 = train(cfg, store1, folds[0]);

    REQUIRE(static_cast<int>(r1.epoch_logs.size()) == cfg.epochs);
    CHECK(r1.epoch_logs.back().mean_total < r1.epoch_logs.front().mean_total);
    for (const auto& log : r1.epoch_logs) {
        CHECK(std::isfinite(log.mean_total));
        CHECK(log.mean_style_terms.size() == 2);
    }
    CHECK(fs::exists(r1.final_checkpoint));
    CHECK(fs::exists(fs::path(cfg.checkpoint_dir) / "epoch_0.ckpt"));

    cfg.checkpoint_dir = (dir.path / "run2").string();
    cfg.log_path = (dir.path / "run2.jsonl").string();
    ImageStore store2(records, cfg.model.input_shape, (dir.path / "data").string());
    auto r2 = train(cfg, store2, folds[0]);

    CHECK(slurp(dir.path / "run1.jsonl") == slurp(dir.path / "run2.jsonl"));
    CHECK(slurp(dir.path / "run1" / "final.ckpt") == slurp(dir.path / "run2" / "final.ckpt"));

    const double map = evaluate_fold(r1.model, store1, folds[0]);
    CHECK(map > 0.0);
    CHECK(map <= 1.0);
}

TEST_CASE("train in baseline mode logs zero style terms") {
    TempDir dir("stylesiam_train_base");
    auto manifest = generate_synthetic((dir.path / "data").string(), 4, 32, 2, 13);
    auto records = load_manifest(manifest);
    auto cfg = tiny_train_config();
    cfg.epochs = 2;
    cfg.loss.w2 = 0.0f;
    auto folds = kfold_split({"outfit0000_fam0", "outfit0001_fam0", "outfit0002_fam1", "outfit0003_fam1"},
                             2, 1);
    // family suffixes vary with the draw; use the actual outfit ids instead
    std::vector<std::string> ids;
    for (const auto& [o, items] : complete_outfits(records)) ids.push_back(o);
    folds = kfold_split(ids, 2, 1);

    ImageStore store(records, cfg.model.input_shape, (dir.path / "data").string());
    auto result = train(cfg, store, folds[0]);
    for (const auto& log : result.epoch_logs) {
        for (double s : log.mean_style_terms) CHECK(s == 0.0);
        CHECK(log.mean_total == doctest::Approx(log.mean_triplet_term).epsilon(1e-5));
    }
}

TEST_CASE("train rejects folds without enough complete outfits") {
    TempDir dir("stylesiam_train_small");
    auto manifest = generate_synthetic((dir.path / "data").string(), 2, 32, 2, 15);
    auto records = load_manifest(manifest);
    auto cfg = tiny_train_config();
    ImageStore store(records, cfg.model.input_shape, (dir.path / "data").string());
    FoldSplit fold;
    fold.fold_index = 0;
    std::vector<std::string> ids;
    for (const auto& [o, items] : complete_outfits(records)) ids.push_back(o);
    fold.train_outfits = {ids[0]};
    fold.test_outfits = {ids[1]};
    CHECK_THROWS_AS(train(cfg, store, fold), data_error);
}

TEST_CASE("train config validation") {
    auto cfg = tiny_train_config();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), config_error);

    cfg = tiny_train_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);

    cfg = tiny_train_config();
    cfg.loss.w1 = 0.0f;
    cfg.loss.w2 = 0.0f;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("improvement formula reproduces the reference percentages") {
    CHECK(improvement_percent(0.1271, 0.1308) == doctest::Approx(2.91).epsilon(0.01));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%+.2f", improvement_percent(0.1271, 0.1308));
    CHECK(std::string(buf) == "+2.91");
    std::snprintf(buf, sizeof(buf), "%+.2f", improvement_percent(0.1226, 0.1251));
    CHECK(std::string(buf) == "+2.04");
    std::snprintf(buf, sizeof(buf), "%+.2f", improvement_percent(0.1323, 0.1343));
    CHECK(std::string(buf) == "+1.51");
}

TEST_CASE("results table has the reference shape and improvement row") {
    ExperimentResult r;
    r.seeds = {1};
    r.baseline_per_seed = {0.1271};
    r.hybrid_per_seed = {0.1308};
    r.baseline_mean = 0.1271;
    r.hybrid_mean = 0.1308;
    r.improvement_per_seed = {improvement_percent(0.1271, 0.1308)};
    r.improvement_mean = improvement_percent(0.1271, 0.1308);
    const auto table = format_results_table(r);
    CHECK(table.find("baseline") != std::string::npos);
    CHECK(table.find("hybrid") != std::string::npos);
    CHECK(table.find("improvement (%)") != std::string::npos);
    CHECK(table.find("+2.91") != std::string::npos);
    CHECK(table.find("0.1271") != std::string::npos);
    CHECK(table.find("0.1308") != std::string::npos);
}

TEST_CASE("run_experiment with w2=0 everywhere gives a zero improvement row") {
    TempDir dir("stylesiam_exp");
    auto manifest = generate_synthetic((dir.path / "data").string(), 6, 32, 2, 17);
    auto records = load_manifest(manifest);
    auto cfg = tiny_train_config();
    cfg.epochs = 2;
    cfg.triplets_per_epoch = 8;
    cfg.loss.w2 = 0.0f;  // hybrid units degenerate to the baseline

    auto result = run_experiment(cfg, records, (dir.path / "data").string(), {5}, 2, 1);
    REQUIRE(result.seeds.size() == 1);
    REQUIRE(result.baseline_per_seed.size() == 1);
    REQUIRE(result.hybrid_per_seed.size() == 1);
    CHECK(result.baseline_per_seed[0] == doctest::Approx(result.hybrid_per_seed[0]));
    CHECK(result.improvement_per_seed[0] == doctest::Approx(0.0));
    CHECK(result.improvement_mean == doctest::Approx(0.0));
}

TEST_CASE("run_experiment results are independent of the job count") {
    TempDir dir("stylesiam_exp_jobs");
    auto manifest = generate_synthetic((dir.path / "data").string(), 6, 32, 2, 19);
    auto records = load_manifest(manifest);
    auto cfg = tiny_train_config();
    cfg.epochs = 2;
    cfg.triplets_per_epoch = 8;

    auto serial = run_experiment(cfg, records, (dir.path / "data").string(), {2, 9}, 2, 1);
    auto parallel = run_experiment(cfg, records, (dir.path / "data").string(), {2, 9}, 2, 3);
    REQUIRE(serial.seeds == parallel.seeds);
    for (size_t s = 0; s < serial.seeds.size(); ++s) {
        CHECK(serial.baseline_per_seed[s] == parallel.baseline_per_seed[s]);
        CHECK(serial.hybrid_per_seed[s] == parallel.hybrid_per_seed[s]);
    }
}
