#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "techembed/corpus.hpp"
#include "techembed/eval.hpp"
#include "techembed/querygen.hpp"

namespace techembed {

/// Shape of the generated retrieval benchmark.
struct BenchSpec {
    std::size_t documents = 60;
    std::size_t topics_per_document = 5;
    /// Share of queries that only document-level context can answer.
    double context_share = 0.3;
    /// Probability that a section never names the tool.
    double tool_free_share = 0.75;
    double test_share = 0.2;
    std::uint64_t seed = 42;
    ChunkingParams chunking{64, 16};
};

/// Synthetic technical manuals, one per invented tool. Every section has a
/// parameter name unique to its document. The tool name appears in the
/// introduction and in some sections. "Fact" queries name a parameter;
/// "context" queries name the tool and the topic of a tool-free section, so the
/// tool name is absent from the target chunk.
struct BenchData {
    std::vector<Document> documents;
    std::vector<SyntheticQuery> train_queries;
    std::vector<SyntheticQuery> test_queries;
    /// Chunk-level judgments for every query: chunks fully containing the
    /// query's target sentence.
    Qrels qrels;
    std::set<std::string> context_queries;
};

BenchData generate_bench(const BenchSpec& spec);

/// Writes corpus.jsonl, train_queries.jsonl, test_queries.jsonl, qrels.txt
/// and context_queries.txt into `dir`.
void write_bench(const BenchData& data, const std::filesystem::path& dir);

}  // namespace techembed
