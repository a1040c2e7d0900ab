#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "stylesiam/datapipe.hpp"

namespace stylesiam {

// Ground-truth compatible pairs over one evaluation pool. Each item appears
// in exactly one pair; every item must be embedded.
struct EvalPairSet {
    struct Pair {
        std::string item_a;  // typeA
        std::string item_b;  // typeB
    };
    std::vector<Pair> pairs;
    std::map<std::string, std::vector<float>> embeddings;

    void validate() const;  // throws data_error
};

// 1-based ranks of the true counterpart in each direction, ties broken by
// ascending item id.
struct RankResult {
    struct PairRanks {
        std::string item_a;
        std::string item_b;
        int rank_a = 0;  // rank of the typeA item among all typeA, queried by item_b
        int rank_b = 0;  // rank of the typeB item among all typeB, queried by item_a
    };
    std::vector<PairRanks> per_pair;
};

RankResult rank_pairs(const EvalPairSet& pairset);

// Mean of reciprocal ranks over both directions. normalize=true divides by
// 2N (the score used everywhere here); normalize=false keeps the bare sum
// of (1/R_b + 1/R_a)/2 over pairs.
double compute_map(const RankResult& ranks, bool normalize = true);

// top-k candidates by ascending euclidean distance to the query, ties by id
std::vector<std::pair<std::string, double>> retrieve(
    const std::string& query_id, const std::set<std::string>& candidates,
    const std::map<std::string, std::vector<float>>& embeddings, int k);

// Embeddings file: one JSON object per line {item_id, category, vector}.
void save_embeddings(const std::string& path,
                     const std::vector<std::tuple<std::string, Category, std::vector<float>>>& rows);
std::vector<std::tuple<std::string, Category, std::vector<float>>> load_embeddings(
    const std::string& path);

// Results object: {map_normalized, map_paper_formula, n_pairs, per_pair}.
std::string results_json(const RankResult& ranks);

}  // namespace stylesiam
