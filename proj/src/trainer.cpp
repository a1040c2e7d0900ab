#include "stylesiam/trainer.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "stylesiam/evaluator.hpp"
#include "stylesiam/exceptions.hpp"
#include "stylesiam/rng.hpp"

namespace fs = std::filesystem;

namespace stylesiam {

using nlohmann::json;

AdamState AdamState::init(const Model& model) {
    AdamState state;
    for (const auto& p : model.params()) {
        if (!p.trainable) continue;
        state.m.emplace_back(p.tensor->data.size(), 0.0f);
        state.v.emplace_back(p.tensor->data.size(), 0.0f);
    }
    return state;
}

void adam_step(Model& model, AdamState& state, float lr) {
    if (lr < 0.0f) throw contract_error("adam_step lr must be non-negative");
    size_t slot = 0;
    for (const auto& p : model.params()) {
        if (!p.trainable) continue;
        if (slot >= state.m.size() || state.m[slot].size() != p.tensor->data.size()) {
            throw contract_error("adam state does not match parameter \"" + p.name + "\"");
        }
        if (!p.tensor->requires_grad || p.tensor->grad.size() != p.tensor->data.size()) {
            throw contract_error("missing gradient for parameter \"" + p.name + "\"");
        }
        ++slot;
    }

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.step_count);
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.step_count);

    slot = 0;
    for (auto& p : model.params()) {
        if (!p.trainable) continue;
        auto& m = state.m[slot];
        auto& v = state.v[slot];
        auto& data = p.tensor->data;
        const auto& grad = p.tensor->grad;
        for (size_t i = 0; i < data.size(); ++i) {
            const float g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
        ++slot;
    }
}

void Schedule::validate() const {
    if (base_lr <= 0.0) throw config_error("schedule: base_lr must be positive");
    switch (kind) {
        case Kind::step_decay:
            if (drop_factor <= 0.0 || drop_factor > 1.0) {
                throw config_error("schedule: drop_factor must be in (0,1]");
            }
            if (every_n_epochs <= 0) throw config_error("schedule: every_n_epochs must be positive");
            break;
        case Kind::exponential_decay:
            if (gamma_per_epoch <= 0.0 || gamma_per_epoch > 1.0) {
                throw config_error("schedule: gamma_per_epoch must be in (0,1]");
            }
            break;
    }
}

double lr_at(const Schedule& schedule, int epoch) {
    if (epoch < 0) throw contract_error("lr_at epoch must be non-negative");
    schedule.validate();
    switch (schedule.kind) {
        case Schedule::Kind::step_decay:
            return schedule.base_lr * std::pow(schedule.drop_factor, epoch / schedule.every_n_epochs);
        case Schedule::Kind::exponential_decay:
            return schedule.base_lr * std::pow(schedule.gamma_per_epoch, epoch);
    }
    return schedule.base_lr;
}

void TrainConfig::validate() const {
    if (epochs <= 0) throw config_error("train config: epochs must be positive");
    if (batch_size < 2) {
        throw config_error("train config: batch_size must be >= 2 (train-mode batchnorm)");
    }
    if (triplets_per_epoch < 0) throw config_error("train config: triplets_per_epoch must be >= 0");
    if (k_folds < 2) throw config_error("train config: k_folds must be >= 2");
    if (grad_clip_norm <= 0.0f) throw config_error("train config: grad_clip_norm must be positive");
    loss.validate();
    model.validate();
    schedule.validate();
}

std::string EpochLog::to_json() const {
    json j;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["mean_total"] = mean_total;
    j["mean_triplet_term"] = mean_triplet_term;
    j["mean_style_terms"] = mean_style_terms;
    return j.dump();
}

namespace {

void clip_gradients(Model& model, float max_norm) {
    double norm_sq = 0.0;
    for (const auto& p : model.params()) {
        if (!p.trainable) continue;
        for (float g : p.tensor->grad) norm_sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm <= max_norm) return;
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& p : model.params()) {
        if (!p.trainable) continue;
        for (auto& g : p.tensor->grad) g *= factor;
    }
}

void ensure_finite(double value, const std::string& what) {
    if (!std::isfinite(value)) {
        throw numeric_error("non-finite loss: " + what);
    }
}

}  // namespace

TrainResult train(const TrainConfig& config, ImageStore& store, const FoldSplit& fold) {
    config.validate();
    const auto outfits = complete_outfits(store.records());
    int train_complete = 0;
    for (const auto& o : fold.train_outfits) {
        if (outfits.count(o)) ++train_complete;
    }
    if (train_complete < 2) {
        throw data_error("train: fold " + std::to_string(fold.fold_index) + " has " +
                         std::to_string(train_complete) + " complete training outfits, need >= 2");
    }

    const std::set<std::string> train_pool(fold.train_outfits.begin(), fold.train_outfits.end());
    const int triplets_per_epoch =
        config.triplets_per_epoch > 0 ? config.triplets_per_epoch : 4 * train_complete;

    TrainResult result;
    result.model = build_model(config.model, config.seed);
    auto adam = AdamState::init(result.model);
    const size_t n_taps = result.model.taps.size();

    if (!config.checkpoint_dir.empty()) {
        std::error_code ec;
        fs::create_directories(config.checkpoint_dir, ec);
        if (ec) throw io_error("cannot create checkpoint dir: " + config.checkpoint_dir);
    }

    std::ofstream log_file;
    if (!config.log_path.empty()) {
        log_file.open(config.log_path, std::ios::trunc);
        if (!log_file) throw io_error("cannot write metric log: " + config.log_path);
    }

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config.schedule, epoch);
        const auto triplets =
            build_triplets(store.records(), train_pool, triplets_per_epoch, mix_seed(config.seed, epoch));

        double sum_total = 0.0, sum_triplet = 0.0;
        std::vector<double> sum_style(n_taps, 0.0);
        long counted = 0;

        for (size_t start = 0; start < triplets.size(); start += config.batch_size) {
            const size_t end = std::min(triplets.size(), start + config.batch_size);
            const int batch = static_cast<int>(end - start);
            if (batch < 2) break;  // train-mode batchnorm needs a real batch

            std::vector<std::string> anchors, positives, negatives;
            for (size_t i = start; i < end; ++i) {
                anchors.push_back(triplets[i].anchor);
                positives.push_back(triplets[i].positive);
                negatives.push_back(triplets[i].negative);
            }

            Graph g;
            auto outs_a = forward(g, result.model, store.batch(anchors), ops::BnMode::train);
            auto outs_p = forward(g, result.model, store.batch(positives), ops::BnMode::train);
            auto outs_n = forward(g, result.model, store.batch(negatives), ops::BnMode::train);

            TensorPtr total;
            const std::string where = "epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(start / config.batch_size);
            for (int b = 0; b < batch; ++b) {
                auto [h, breakdown] = hybrid_loss(g, outs_a[b], outs_p[b], outs_n[b], config.loss);
                ensure_finite(breakdown.triplet_term, where + " triplet term");
                for (size_t t = 0; t < breakdown.style_terms.size(); ++t) {
                    ensure_finite(breakdown.style_terms[t], where + " style term " + std::to_string(t));
                    sum_style[t] += breakdown.style_terms[t];
                }
                sum_triplet += breakdown.triplet_term;
                sum_total += breakdown.total;
                ++counted;
                total = total ? ops::add(g, total, h) : h;
            }
            total = ops::scale(g, total, 1.0f / batch);
            ensure_finite(total->data[0], where + " total");

            result.model.zero_grads();
            g.backward(total);
            clip_gradients(result.model, config.grad_clip_norm);
            adam_step(result.model, adam, static_cast<float>(lr));
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.mean_total = counted ? sum_total / counted : 0.0;
        entry.mean_triplet_term = counted ? sum_triplet / counted : 0.0;
        for (double s : sum_style) entry.mean_style_terms.push_back(counted ? s / counted : 0.0);
        if (log_file.is_open()) log_file << entry.to_json() << "\n";
        result.epoch_logs.push_back(std::move(entry));

        if (!config.checkpoint_dir.empty()) {
            save_checkpoint(result.model,
                            (fs::path(config.checkpoint_dir) / ("epoch_" + std::to_string(epoch) + ".ckpt"))
                                .string());
        }
    }

    if (!config.checkpoint_dir.empty()) {
        result.final_checkpoint = (fs::path(config.checkpoint_dir) / "final.ckpt").string();
        save_checkpoint(result.model, result.final_checkpoint);
    }
    if (log_file.is_open()) {
        log_file.close();
        if (!log_file) throw io_error("short write on metric log: " + config.log_path);
    }
    return result;
}

double evaluate_fold(Model& model, ImageStore& store, const FoldSplit& fold) {
    const auto outfits = complete_outfits(store.records());
    EvalPairSet pairset;
    std::vector<std::string> ids;
    for (const auto& o : fold.test_outfits) {
        auto it = outfits.find(o);
        if (it == outfits.end()) continue;
        pairset.pairs.push_back({it->second[0], it->second[1]});
        ids.push_back(it->second[0]);
        ids.push_back(it->second[1]);
    }
    if (pairset.pairs.empty()) {
        throw data_error("evaluate_fold: fold " + std::to_string(fold.fold_index) +
                         " has no complete test outfits");
    }
    for (const auto& id : ids) {
        auto e = embed(model, store.batch({id}));
        pairset.embeddings[id] = std::vector<float>(e->data.begin(), e->data.end());
    }
    return compute_map(rank_pairs(pairset), true);
}

double improvement_percent(double baseline, double hybrid) {
    return 100.0 * (hybrid - baseline) / baseline;
}

ExperimentResult run_experiment(const TrainConfig& base, const std::vector<ItemRecord>& records,
                                const std::string& base_dir, const std::vector<uint32_t>& seeds,
                                int k, int jobs) {
    if (seeds.empty()) throw config_error("run_experiment needs at least one seed");
    if (jobs < 1) throw config_error("run_experiment jobs must be >= 1");

    std::vector<std::string> outfit_ids;
    for (const auto& [outfit, items] : complete_outfits(records)) outfit_ids.push_back(outfit);

    struct Unit {
        size_t seed_idx;
        int fold;
        bool hybrid;
        Schedule::Kind schedule;
    };
    std::vector<Unit> units;
    for (size_t s = 0; s < seeds.size(); ++s) {
        for (int f = 0; f < k; ++f) {
            for (bool hybrid : {false, true}) {
                for (auto kind : {Schedule::Kind::step_decay, Schedule::Kind::exponential_decay}) {
                    units.push_back({s, f, hybrid, kind});
                }
            }
        }
    }

    std::vector<double> unit_map(units.size(), 0.0);
    std::vector<std::string> unit_error(units.size());
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        for (size_t u = next.fetch_add(1); u < units.size(); u = next.fetch_add(1)) {
            const auto& unit = units[u];
            try {
                const auto folds = kfold_split(outfit_ids, k, seeds[unit.seed_idx]);
                TrainConfig cfg = base;
                cfg.seed = mix_seed(seeds[unit.seed_idx], static_cast<uint32_t>(unit.fold));
                cfg.schedule.kind = unit.schedule;
                cfg.checkpoint_dir.clear();
                cfg.log_path.clear();
                if (!unit.hybrid) cfg.loss.w2 = 0.0f;

                ImageStore store(records, cfg.model.input_shape, base_dir);
                auto result = train(cfg, store, folds[unit.fold]);
                unit_map[u] = evaluate_fold(result.model, store, folds[unit.fold]);
            } catch (const std::exception& e) {
                unit_error[u] = e.what();
            }
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    for (size_t u = 0; u < units.size(); ++u) {
        if (!unit_error[u].empty()) {
            throw numeric_error("experiment unit failed (seed " + std::to_string(seeds[units[u].seed_idx]) +
                                ", fold " + std::to_string(units[u].fold) + "): " + unit_error[u]);
        }
    }

    // per (seed, fold, config): best schedule; per seed: mean over folds
    ExperimentResult result;
    result.seeds = seeds;
    for (size_t s = 0; s < seeds.size(); ++s) {
        double baseline_sum = 0.0, hybrid_sum = 0.0;
        for (int f = 0; f < k; ++f) {
            double best_baseline = -1.0, best_hybrid = -1.0;
            for (size_t u = 0; u < units.size(); ++u) {
                if (units[u].seed_idx != s || units[u].fold != f) continue;
                auto& best = units[u].hybrid ? best_hybrid : best_baseline;
                best = std::max(best, unit_map[u]);
            }
            baseline_sum += best_baseline;
            hybrid_sum += best_hybrid;
        }
        result.baseline_per_seed.push_back(baseline_sum / k);
        result.hybrid_per_seed.push_back(hybrid_sum / k);
        result.improvement_per_seed.push_back(
            improvement_percent(result.baseline_per_seed.back(), result.hybrid_per_seed.back()));
    }
    double b_mean = 0.0, h_mean = 0.0;
    for (size_t s = 0; s < seeds.size(); ++s) {
        b_mean += result.baseline_per_seed[s];
        h_mean += result.hybrid_per_seed[s];
    }
    result.baseline_mean = b_mean / seeds.size();
    result.hybrid_mean = h_mean / seeds.size();
    result.improvement_mean = improvement_percent(result.baseline_mean, result.hybrid_mean);
    return result;
}

std::string format_results_table(const ExperimentResult& result) {
    char buf[64];
    std::string table = "model              ";
    for (auto seed : result.seeds) {
        std::snprintf(buf, sizeof(buf), "seed %-6u ", seed);
        table += buf;
    }
    table += "mean\n";

    auto row = [&](const char* name, const std::vector<double>& values, double mean, bool percent) {
        std::string line = name;
        line.resize(19, ' ');
        for (double v : values) {
            std::snprintf(buf, sizeof(buf), percent ? "%+-10.2f " : "%-10.4f ", v);
            line += buf;
        }
        std::snprintf(buf, sizeof(buf), percent ? "%+.2f" : "%.4f", mean);
        line += buf;
        line += "\n";
        return line;
    };
    table += row("baseline", result.baseline_per_seed, result.baseline_mean, false);
    table += row("hybrid", result.hybrid_per_seed, result.hybrid_mean, false);
    table += row("improvement (%)", result.improvement_per_seed, result.improvement_mean, true);
    return table;
}

}  // namespace stylesiam
