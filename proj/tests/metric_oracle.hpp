#pragma once

// Brute-force IR metrics written independently of the library: every metric
// is recomputed from the positions of relevant items in the ranking.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "techembed/eval.hpp"
#include "techembed/util.hpp"

namespace techembed::testing {

struct OracleMetrics {
    double map = 0.0;
    double mrr = 0.0;
    std::map<std::size_t, double> precision;
    std::map<std::size_t, double> recall;
};

inline std::vector<std::size_t> relevant_positions(const std::vector<std::string>& ranked,
                                                   const std::set<std::string>& rel) {
    std::vector<std::size_t> pos;  // 1-based
    for (const auto& r : rel) {
        const auto it = std::find(ranked.begin(), ranked.end(), r);
        if (it != ranked.end()) pos.push_back(static_cast<std::size_t>(it - ranked.begin()) + 1);
    }
    std::sort(pos.begin(), pos.end());
    return pos;
}

inline OracleMetrics oracle_metrics(const RunFile& run, const Qrels& qrels, const std::vector<std::size_t>& ks) {
    OracleMetrics m;
    for (const auto k : ks) {
        m.precision[k] = 0.0;
        m.recall[k] = 0.0;
    }
    for (const auto& [qid, items] : run) {
        std::vector<std::string> ranked;
        for (const auto& it : items) ranked.push_back(it.target_id);
        const auto& rel = qrels.at(qid);
        const auto pos = relevant_positions(ranked, rel);
        double ap = 0.0;
        for (std::size_t i = 0; i < pos.size(); ++i) ap += static_cast<double>(i + 1) / static_cast<double>(pos[i]);
        m.map += ap / static_cast<double>(rel.size());
        m.mrr += pos.empty() ? 0.0 : 1.0 / static_cast<double>(pos.front());
        for (const auto k : ks) {
            const auto within = static_cast<double>(std::count_if(pos.begin(), pos.end(), [&](std::size_t p) { return p <= k; }));
            m.precision[k] += within / static_cast<double>(k);
            m.recall[k] += within / static_cast<double>(rel.size());
        }
    }
    const auto n = static_cast<double>(run.size());
    m.map /= n;
    m.mrr /= n;
    for (auto& [_, v] : m.precision) v /= n;
    for (auto& [_, v] : m.recall) v /= n;
    return m;
}

struct RandomInstance {
    RunFile run;
    Qrels qrels;
};

/// Up to 50 queries over up to 200 targets. With `single_relevant` every query
/// has exactly one relevant target.
inline RandomInstance random_instance(std::uint64_t seed, bool single_relevant = false) {
    Rng rng(seed);
    RandomInstance inst;
    const std::size_t n_targets = 1 + rng.uniform_index(200);
    const std::size_t n_queries = 1 + rng.uniform_index(50);
    for (std::size_t q = 0; q < n_queries; ++q) {
        const std::string qid = "q" + std::to_string(q);
        std::vector<std::size_t> perm(n_targets);
        for (std::size_t i = 0; i < n_targets; ++i) perm[i] = i;
        rng.shuffle(perm);
        const std::size_t depth = rng.uniform_index(std::min<std::size_t>(n_targets, 40) + 1);
        double score = 1.0;
        for (std::size_t i = 0; i < depth; ++i) {
            score -= rng.uniform() * 0.01;
            inst.run[qid].push_back({"t" + std::to_string(perm[i]), score});
        }
        inst.run[qid];  // queries may retrieve nothing
        const std::size_t n_rel = single_relevant ? 1 : 1 + rng.uniform_index(std::min<std::size_t>(n_targets, 6));
        rng.shuffle(perm);
        for (std::size_t i = 0; i < n_rel; ++i) inst.qrels[qid].insert("t" + std::to_string(perm[i]));
    }
    return inst;
}

}  // namespace techembed::testing
