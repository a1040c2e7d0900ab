#include "stylesiam/cli_config.hpp"

#include <fstream>

#include <json.hpp>

#include "stylesiam/exceptions.hpp"

namespace stylesiam {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::vector<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw config_error("config: unknown key \"" + it.key() + "\" in " + where);
        }
    }
}

LossParams parse_loss(const json& j) {
    reject_unknown(j, {"alpha", "k", "k_l_policy", "k_l_value", "w1", "w2", "style_mode", "distance"},
                   "loss");
    LossParams p;
    try {
        if (j.contains("alpha")) p.alpha = j.at("alpha").get<float>();
        if (j.contains("k")) p.k_const = j.at("k").get<float>();
        if (j.contains("k_l_policy")) {
            const auto s = j.at("k_l_policy").get<std::string>();
            if (s == "equal_to_m_l") {
                p.k_l.equal_to_m_l = true;
            } else if (s == "constant") {
                p.k_l.equal_to_m_l = false;
            } else {
                throw config_error("config: k_l_policy must be equal_to_m_l or constant");
            }
        }
        if (j.contains("k_l_value")) p.k_l.constant = j.at("k_l_value").get<float>();
        if (j.contains("w1")) p.w1 = j.at("w1").get<float>();
        if (j.contains("w2")) p.w2 = j.at("w2").get<float>();
        if (j.contains("style_mode")) {
            const auto s = j.at("style_mode").get<std::string>();
            if (s == "aux_vector") {
                p.style_mode = StyleMode::aux_vector;
            } else if (s == "raw_gram") {
                p.style_mode = StyleMode::raw_gram;
            } else {
                throw config_error("config: style_mode must be aux_vector or raw_gram");
            }
        }
        if (j.contains("distance")) {
            const auto s = j.at("distance").get<std::string>();
            if (s == "euclidean") {
                p.distance = DistanceKind::euclidean;
            } else if (s == "squared_euclidean") {
                p.distance = DistanceKind::squared_euclidean;
            } else {
                throw config_error("config: distance must be euclidean or squared_euclidean");
            }
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("config: loss section: ") + e.what());
    }
    p.validate();
    return p;
}

Schedule parse_schedule(const json& j) {
    reject_unknown(j, {"kind", "base_lr", "drop_factor", "every_n_epochs", "gamma_per_epoch"},
                   "train.schedule");
    Schedule s;
    try {
        if (j.contains("kind")) {
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "step_decay") {
                s.kind = Schedule::Kind::step_decay;
            } else if (kind == "exponential_decay") {
                s.kind = Schedule::Kind::exponential_decay;
            } else {
                throw config_error("config: schedule kind must be step_decay or exponential_decay");
            }
        }
        if (j.contains("base_lr")) s.base_lr = j.at("base_lr").get<double>();
        if (j.contains("drop_factor")) s.drop_factor = j.at("drop_factor").get<double>();
        if (j.contains("every_n_epochs")) s.every_n_epochs = j.at("every_n_epochs").get<int>();
        if (j.contains("gamma_per_epoch")) s.gamma_per_epoch = j.at("gamma_per_epoch").get<double>();
    } catch (const json::exception& e) {
        throw config_error(std::string("config: schedule section: ") + e.what());
    }
    s.validate();
    return s;
}

}  // namespace

TrainConfig parse_cli_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(j, {"model", "loss", "train"}, "the top level");

    TrainConfig cfg;
    if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model").dump());
    if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t,
                       {"epochs", "batch_size", "triplets_per_epoch", "seed", "k_folds",
                        "grad_clip_norm", "schedule", "checkpoint_dir", "log_path"},
                       "train");
        try {
            if (t.contains("epochs")) cfg.epochs = t.at("epochs").get<int>();
            if (t.contains("batch_size")) cfg.batch_size = t.at("batch_size").get<int>();
            if (t.contains("triplets_per_epoch")) {
                cfg.triplets_per_epoch = t.at("triplets_per_epoch").get<int>();
            }
            if (t.contains("seed")) cfg.seed = t.at("seed").get<uint32_t>();
            if (t.contains("k_folds")) cfg.k_folds = t.at("k_folds").get<int>();
            if (t.contains("grad_clip_norm")) cfg.grad_clip_norm = t.at("grad_clip_norm").get<float>();
            if (t.contains("schedule")) cfg.schedule = parse_schedule(t.at("schedule"));
            if (t.contains("checkpoint_dir")) cfg.checkpoint_dir = t.at("checkpoint_dir").get<std::string>();
            if (t.contains("log_path")) cfg.log_path = t.at("log_path").get<std::string>();
        } catch (const json::exception& e) {
            throw config_error(std::string("config: train section: ") + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_cli_config(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_cli_config(text);
}

}  // namespace stylesiam
