#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace techembed {

/// Whether qrels name chunks or whole documents.
enum class JudgmentLevel { chunk, document };

std::string to_string(JudgmentLevel level);
JudgmentLevel judgment_level_from_string(const std::string& s);

/// query_id -> relevant target ids.
using Qrels = std::map<std::string, std::set<std::string>>;

struct RankedItem {
    std::string target_id;
    double score = 0.0;

    friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

/// query_id -> ranked targets, best first.
using RunFile = std::map<std::string, std::vector<RankedItem>>;

/// (1/|relevant|) * sum over relevant ranks r of precision@r. Throws
/// ConfigError when `relevant` is empty.
double average_precision(std::span<const std::string> ranked, const std::set<std::string>& relevant);
/// 1/rank of the first relevant item, 0 when none is retrieved.
double reciprocal_rank(std::span<const std::string> ranked, const std::set<std::string>& relevant);
/// |relevant in top K| / K. Short lists are not padded. Throws ConfigError when K < 1.
double precision_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k);
/// |relevant in top K| / |relevant|.
double recall_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k);

/// Maps ranked chunk ids to document ids, keeping each document at the rank of
/// its best chunk.
std::vector<std::string> aggregate_to_documents(std::span<const std::string> chunk_ids);

struct QueryMetrics {
    std::string query_id;
    double average_precision = 0.0;
    double reciprocal_rank = 0.0;
    std::vector<double> precision;  // one per K
    std::vector<double> recall;     // one per K
    std::size_t relevant = 0;
    std::size_t retrieved = 0;
};

struct MetricsReport {
    std::vector<std::size_t> ks;
    JudgmentLevel level = JudgmentLevel::chunk;
    double map = 0.0;
    double mrr = 0.0;
    std::vector<double> precision;  // mean precision@K, one per K
    std::vector<double> recall;     // mean recall@K, one per K
    std::vector<QueryMetrics> per_query;
    /// Extra fields echoed into the report's "config" object.
    nlohmann::json echo = nlohmann::json::object();

    /// Mean recall at cutoff k; throws ConfigError when k was not requested.
    double recall_at(std::size_t k) const;
    double precision_at(std::size_t k) const;
};

inline const std::vector<std::size_t> kDefaultCutoffs{5, 10, 15, 20};
/// Cutoff of the headline "precision@10" / "recall@10" figures.
constexpr std::size_t kHeadlineCutoff = 10;

/// Scores every query of the run (unweighted means, queries in id order).
/// Throws ConfigError listing run queries absent from the qrels. At document
/// level the run's chunk ids are aggregated with aggregate_to_documents.
MetricsReport evaluate(const RunFile& run, const Qrels& qrels, std::span<const std::size_t> ks,
                       JudgmentLevel level = JudgmentLevel::chunk);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
void write_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

/// TREC qrels: "query_id 0 target_id relevance"; relevance > 0 is relevant.
Qrels read_qrels(std::istream& in);
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, std::ostream& out);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

/// TREC run: "query_id Q0 target_id rank score tag". Throws FormatError on
/// duplicate targets or increasing scores within a query.
RunFile read_run(std::istream& in);
RunFile read_run(const std::filesystem::path& path);
void write_run(const RunFile& run, std::ostream& out, const std::string& tag);
void write_run(const RunFile& run, const std::filesystem::path& path, const std::string& tag);

/// Throws FormatError when a query's list has duplicates or increasing scores.
void validate_run(const RunFile& run);

}  // namespace techembed
