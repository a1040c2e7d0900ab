#include "stylesiam/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "stylesiam/exceptions.hpp"

namespace stylesiam {

using nlohmann::json;

void EvalPairSet::validate() const {
    if (pairs.empty()) throw data_error("eval pair set is empty");
    std::set<std::string> seen;
    size_t dim = 0;
    for (const auto& p : pairs) {
        for (const auto& id : {p.item_a, p.item_b}) {
            if (!seen.insert(id).second) {
                throw data_error("item \"" + id + "\" appears in more than one eval pair");
            }
            auto it = embeddings.find(id);
            if (it == embeddings.end()) {
                throw data_error("eval pair item \"" + id + "\" has no embedding");
            }
            if (dim == 0) dim = it->second.size();
            if (it->second.size() != dim) {
                throw data_error("embedding dimension mismatch on \"" + id + "\"");
            }
        }
    }
}

namespace {

double sq_distance(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

// rank of target among candidates by ascending distance to query, ties by id
int rank_of(const std::vector<float>& query, const std::string& target_id,
            const std::vector<std::pair<std::string, const std::vector<float>*>>& candidates,
            const std::map<std::string, std::vector<float>>& embeddings) {
    const double target_d = sq_distance(query, embeddings.at(target_id));
    int rank = 1;
    for (const auto& [id, vec] : candidates) {
        if (id == target_id) continue;
        const double d = sq_distance(query, *vec);
        if (d < target_d || (d == target_d && id < target_id)) ++rank;
    }
    return rank;
}

}  // namespace

RankResult rank_pairs(const EvalPairSet& pairset) {
    pairset.validate();
    std::vector<std::pair<std::string, const std::vector<float>*>> a_items, b_items;
    for (const auto& p : pairset.pairs) {
        a_items.emplace_back(p.item_a, &pairset.embeddings.at(p.item_a));
        b_items.emplace_back(p.item_b, &pairset.embeddings.at(p.item_b));
    }
    RankResult result;
    for (const auto& p : pairset.pairs) {
        RankResult::PairRanks r;
        r.item_a = p.item_a;
        r.item_b = p.item_b;
        r.rank_b = rank_of(pairset.embeddings.at(p.item_a), p.item_b, b_items, pairset.embeddings);
        r.rank_a = rank_of(pairset.embeddings.at(p.item_b), p.item_a, a_items, pairset.embeddings);
        result.per_pair.push_back(std::move(r));
    }
    return result;
}

double compute_map(const RankResult& ranks, bool normalize) {
    if (ranks.per_pair.empty()) throw data_error("compute_map needs at least one pair");
    double acc = 0.0;
    for (const auto& r : ranks.per_pair) {
        acc += 1.0 / r.rank_b + 1.0 / r.rank_a;
    }
    acc *= 0.5;
    if (normalize) acc /= static_cast<double>(ranks.per_pair.size());
    return acc;
}

std::vector<std::pair<std::string, double>> retrieve(
    const std::string& query_id, const std::set<std::string>& candidates,
    const std::map<std::string, std::vector<float>>& embeddings, int k) {
    auto q = embeddings.find(query_id);
    if (q == embeddings.end()) throw data_error("unknown query id \"" + query_id + "\"");
    if (k <= 0 || k > static_cast<int>(candidates.size())) {
        throw data_error("retrieve: k=" + std::to_string(k) + " out of range for " +
                         std::to_string(candidates.size()) + " candidates");
    }
    std::vector<std::pair<double, std::string>> order;
    for (const auto& id : candidates) {
        auto it = embeddings.find(id);
        if (it == embeddings.end()) throw data_error("candidate \"" + id + "\" has no embedding");
        order.emplace_back(std::sqrt(sq_distance(q->second, it->second)), id);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::pair<std::string, double>> out;
    for (int i = 0; i < k; ++i) out.emplace_back(order[i].second, order[i].first);
    return out;
}

void save_embeddings(const std::string& path,
                     const std::vector<std::tuple<std::string, Category, std::vector<float>>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write embeddings: " + path);
    for (const auto& [id, cat, vec] : rows) {
        json j;
        j["item_id"] = id;
        j["category"] = category_name(cat);
        j["vector"] = vec;
        out << j.dump() << "\n";
    }
    if (!out) throw io_error("short write on embeddings: " + path);
}

std::vector<std::tuple<std::string, Category, std::vector<float>>> load_embeddings(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open embeddings: " + path);
    std::vector<std::tuple<std::string, Category, std::vector<float>>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            rows.emplace_back(j.at("item_id").get<std::string>(),
                              category_from_name(j.at("category").get<std::string>()),
                              j.at("vector").get<std::vector<float>>());
        } catch (const json::exception& e) {
            throw data_error("embeddings parse error at line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

std::string results_json(const RankResult& ranks) {
    json j;
    j["map_normalized"] = compute_map(ranks, true);
    j["map_paper_formula"] = compute_map(ranks, false);
    j["n_pairs"] = ranks.per_pair.size();
    j["per_pair"] = json::array();
    for (const auto& r : ranks.per_pair) {
        j["per_pair"].push_back({{"item_a", r.item_a},
                                 {"item_b", r.item_b},
                                 {"rank_a", r.rank_a},
                                 {"rank_b", r.rank_b}});
    }
    return j.dump();
}

}  // namespace stylesiam
