#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "stylesiam/cli_config.hpp"
#include "stylesiam/datapipe.hpp"
#include "stylesiam/evaluator.hpp"
#include "stylesiam/exceptions.hpp"
#include "stylesiam/model.hpp"
#include "stylesiam/trainer.hpp"

namespace fs = std::filesystem;
using namespace stylesiam;
using nlohmann::json;

namespace {

// exit codes: 0 ok, 2 config/argument, 3 data, 4 numerical
// (gen-synth maps io errors to 1 instead of 3)
int run_guarded(bool io_exits_one, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dim_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return io_exits_one ? 1 : 3;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

std::string manifest_dir(const std::string& manifest_path) {
    return fs::path(manifest_path).parent_path().string();
}

std::vector<std::string> sorted_complete_outfit_ids(const std::vector<ItemRecord>& records) {
    std::vector<std::string> ids;
    for (const auto& [outfit, items] : complete_outfits(records)) ids.push_back(outfit);
    return ids;  // map iteration is already sorted
}

FoldSplit fold_for(const std::vector<ItemRecord>& records, int k, uint32_t seed, int fold_index) {
    auto folds = kfold_split(sorted_complete_outfit_ids(records), k, seed);
    if (fold_index < 0 || fold_index >= static_cast<int>(folds.size())) {
        throw config_error("fold index " + std::to_string(fold_index) + " out of range for k=" +
                           std::to_string(k));
    }
    return folds[fold_index];
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << text;
    if (!out) throw io_error("short write on " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"complementary-item retrieval: siamese embedder with gram-matrix style heads"};
    app.require_subcommand(1);

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate a procedural synthetic dataset");
    std::string gen_out;
    int gen_outfits = 50;
    int gen_size = 64;
    int gen_families = 4;
    uint32_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--outfits", gen_outfits, "number of outfits");
    gen->add_option("--size", gen_size, "image size in pixels");
    gen->add_option("--families", gen_families, "number of style families");
    gen->add_option("--seed", gen_seed, "generator seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "train one fold");
    std::string train_config, train_manifest, train_out;
    int train_fold = 0;
    uint32_t train_seed = 0;
    bool train_seed_set = false;
    train_cmd->add_option("--config", train_config, "JSON config file");
    train_cmd->add_option("--manifest", train_manifest, "dataset manifest")->required();
    train_cmd->add_option("--fold", train_fold, "fold index")->required();
    train_cmd->add_option("--seed", train_seed, "seed override")->each([&](const std::string&) {
        train_seed_set = true;
    });
    train_cmd->add_option("--out", train_out, "checkpoint/log directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a fold");
    std::string eval_ckpt, eval_manifest, eval_out, eval_config;
    int eval_fold = 0;
    uint32_t eval_seed = 0;
    bool eval_seed_set = false;
    int eval_k = 0;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--fold", eval_fold, "fold index")->required();
    eval_cmd->add_option("--out", eval_out, "results JSON path")->required();
    eval_cmd->add_option("--config", eval_config, "JSON config file (for seed and k_folds)");
    eval_cmd->add_option("--seed", eval_seed, "fold-split seed override")->each([&](const std::string&) {
        eval_seed_set = true;
    });
    eval_cmd->add_option("--k", eval_k, "fold count override");

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "export embeddings for every manifest item");
    std::string embed_ckpt, embed_manifest, embed_out;
    embed_cmd->add_option("--ckpt", embed_ckpt, "checkpoint file")->required();
    embed_cmd->add_option("--manifest", embed_manifest, "dataset manifest")->required();
    embed_cmd->add_option("--out", embed_out, "embeddings JSONL path")->required();

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "rank complementary items for a query");
    std::string retr_embeddings, retr_query;
    int retr_k = 5;
    retrieve_cmd->add_option("--embeddings", retr_embeddings, "embeddings JSONL")->required();
    retrieve_cmd->add_option("--query", retr_query, "query item id")->required();
    retrieve_cmd->add_option("--k", retr_k, "number of results");

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "seeded cross-validated baseline-vs-hybrid comparison");
    std::string exp_config, exp_manifest, exp_out, exp_seeds = "1,2,3";
    int exp_k = 0;
    int exp_jobs = 1;
    exp_cmd->add_option("--config", exp_config, "JSON config file");
    exp_cmd->add_option("--manifest", exp_manifest, "dataset manifest")->required();
    exp_cmd->add_option("--seeds", exp_seeds, "comma-separated seed list");
    exp_cmd->add_option("--k", exp_k, "fold count override");
    exp_cmd->add_option("--jobs", exp_jobs, "parallel training jobs");
    exp_cmd->add_option("--out", exp_out, "results JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 2;
    }

    if (gen->parsed()) {
        return run_guarded(true, [&]() {
            if (gen_outfits < 1 || gen_size < 32 || gen_families < 2) {
                throw config_error("gen-synth: need outfits >= 1, size >= 32, families >= 2");
            }
            const auto manifest = generate_synthetic(gen_out, gen_outfits, gen_size, gen_families, gen_seed);
            std::cout << manifest << "\n";
        });
    }

    if (train_cmd->parsed()) {
        return run_guarded(false, [&]() {
            auto cfg = load_cli_config(train_config);
            if (train_seed_set) cfg.seed = train_seed;
            cfg.checkpoint_dir = train_out;
            if (cfg.log_path.empty()) cfg.log_path = (fs::path(train_out) / "metrics.jsonl").string();
            auto records = load_manifest(train_manifest);
            auto fold = fold_for(records, cfg.k_folds, cfg.seed, train_fold);
            ImageStore store(records, cfg.model.input_shape, manifest_dir(train_manifest));
            auto result = train(cfg, store, fold);

            json summary;
            summary["final_checkpoint"] = result.final_checkpoint;
            summary["log_path"] = cfg.log_path;
            summary["last_epoch"] = json::parse(result.epoch_logs.back().to_json());
            std::cout << summary.dump() << "\n";
        });
    }

    if (eval_cmd->parsed()) {
        return run_guarded(false, [&]() {
            auto cfg = load_cli_config(eval_config);
            const uint32_t seed = eval_seed_set ? eval_seed : cfg.seed;
            const int k = eval_k > 0 ? eval_k : cfg.k_folds;
            auto model = load_checkpoint(eval_ckpt);
            auto records = load_manifest(eval_manifest);
            auto fold = fold_for(records, k, seed, eval_fold);
            ImageStore store(records, model.config.input_shape, manifest_dir(eval_manifest));

            const auto outfits = complete_outfits(records);
            EvalPairSet pairset;
            for (const auto& o : fold.test_outfits) {
                auto it = outfits.find(o);
                if (it == outfits.end()) continue;
                pairset.pairs.push_back({it->second[0], it->second[1]});
            }
            if (pairset.pairs.empty()) throw data_error("eval: no complete test outfits in fold");
            for (const auto& p : pairset.pairs) {
                for (const auto& id : {p.item_a, p.item_b}) {
                    auto e = embed(model, store.batch({id}));
                    pairset.embeddings[id] = std::vector<float>(e->data.begin(), e->data.end());
                }
            }
            auto ranks = rank_pairs(pairset);
            write_text(eval_out, results_json(ranks) + "\n");

            json summary;
            summary["out"] = eval_out;
            summary["map_normalized"] = compute_map(ranks, true);
            summary["n_pairs"] = ranks.per_pair.size();
            std::cout << summary.dump() << "\n";
        });
    }

    if (embed_cmd->parsed()) {
        return run_guarded(false, [&]() {
            auto model = load_checkpoint(embed_ckpt);
            auto records = load_manifest(embed_manifest);
            ImageStore store(records, model.config.input_shape, manifest_dir(embed_manifest));
            std::vector<std::tuple<std::string, Category, std::vector<float>>> rows;
            for (const auto& rec : records) {
                auto e = embed(model, store.batch({rec.item_id}));
                rows.emplace_back(rec.item_id, rec.category,
                                  std::vector<float>(e->data.begin(), e->data.end()));
            }
            save_embeddings(embed_out, rows);
            std::cout << embed_out << "\n";
        });
    }

    if (retrieve_cmd->parsed()) {
        return run_guarded(false, [&]() {
            auto rows = load_embeddings(retr_embeddings);
            std::map<std::string, std::vector<float>> embeddings;
            std::map<std::string, Category> categories;
            for (const auto& [id, cat, vec] : rows) {
                embeddings[id] = vec;
                categories[id] = cat;
            }
            auto q = categories.find(retr_query);
            if (q == categories.end()) throw data_error("unknown query id \"" + retr_query + "\"");
            // candidates are the items complementary to the query's category
            std::set<std::string> candidates;
            for (const auto& [id, cat] : categories) {
                if (cat != q->second) candidates.insert(id);
            }
            if (candidates.empty()) throw data_error("no complementary items for \"" + retr_query + "\"");
            auto top = retrieve(retr_query, candidates, embeddings, retr_k);
            for (const auto& [id, dist] : top) {
                json line;
                line["item_id"] = id;
                line["distance"] = dist;
                std::cout << line.dump() << "\n";
            }
        });
    }

    if (exp_cmd->parsed()) {
        return run_guarded(false, [&]() {
            auto cfg = load_cli_config(exp_config);
            const int k = exp_k > 0 ? exp_k : cfg.k_folds;
            std::vector<uint32_t> seeds;
            for (size_t pos = 0; pos < exp_seeds.size();) {
                const size_t comma = exp_seeds.find(',', pos);
                const auto token = exp_seeds.substr(pos, comma == std::string::npos ? comma : comma - pos);
                try {
                    seeds.push_back(static_cast<uint32_t>(std::stoul(token)));
                } catch (const std::exception&) {
                    throw config_error("experiment: bad seed \"" + token + "\"");
                }
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            auto records = load_manifest(exp_manifest);
            auto result = run_experiment(cfg, records, manifest_dir(exp_manifest), seeds, k, exp_jobs);

            std::cout << format_results_table(result);
            if (!exp_out.empty()) {
                json j;
                j["seeds"] = result.seeds;
                j["baseline_per_seed"] = result.baseline_per_seed;
                j["hybrid_per_seed"] = result.hybrid_per_seed;
                j["baseline_mean"] = result.baseline_mean;
                j["hybrid_mean"] = result.hybrid_mean;
                j["improvement_per_seed"] = result.improvement_per_seed;
                j["improvement_mean"] = result.improvement_mean;
                write_text(exp_out, j.dump() + "\n");
            }
        });
    }

    return 2;
}
