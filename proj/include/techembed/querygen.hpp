#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "techembed/corpus.hpp"
#include "techembed/textgen.hpp"

namespace techembed {

enum class Provenance { real, llm, template_engine };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct SyntheticQuery {
    std::string query_id;
    std::string text;
    std::string source_chunk_id;
    Provenance provenance = Provenance::template_engine;
};

/// Eight question shapes: definition, how-to, parameter, error, comparison,
/// listing, location, constraint. Slots: {kw1}, {kw2}, {keyword}.
const std::vector<std::string>& default_query_templates();

/// Top-n content tokens of a text by frequency, ties alphabetical. Content
/// tokens are word tokens of at least 3 characters that are neither stopwords
/// nor pure numbers.
std::vector<std::string> top_keywords(std::string_view text, std::size_t n);

struct QueryGenOptions {
    std::size_t n_per_chunk = 2;
    std::uint64_t seed = 0;
    /// Chunk index to start from (resume cursor of an aborted run).
    std::size_t resume_from = 0;
    /// Concurrent requests in flight. Output order does not depend on it.
    std::size_t parallelism = 1;
    /// When set, each chunk's queries are written as JSONL as soon as they and
    /// all preceding chunks are complete.
    std::ostream* sink = nullptr;
};

/// Raised when the backend fails mid-run. Everything before resume_cursor has
/// been written to the sink.
class GenerationAborted : public Error {
public:
    GenerationAborted(const std::string& what, std::size_t resume_cursor)
        : Error(what), resume_cursor_(resume_cursor) {}
    [[nodiscard]] std::size_t resume_cursor() const { return resume_cursor_; }

private:
    std::size_t resume_cursor_;
};

/// Exactly n_per_chunk queries per chunk, ordered by (chunk, query ordinal).
std::vector<SyntheticQuery> generate_queries(const Corpus& corpus, GenBackend& backend,
                                             const QueryGenOptions& options);

/// Shannon entropy (bits) of the token unigram distribution of the text.
/// Throws ConfigError when the text has no tokens.
double query_entropy(std::string_view text);
inline double query_entropy(const SyntheticQuery& q) { return query_entropy(q.text); }

/// Mean per-query entropy over the sequence. Throws ConfigError when empty.
double diversity(std::span<const SyntheticQuery> queries);

/// Distinct token bigrams / total token bigrams across all queries. Reported
/// next to diversity() as an inter-query variety measure; 0 when no bigrams.
double distinct_bigram_ratio(std::span<const SyntheticQuery> queries);

void write_query(const SyntheticQuery& q, std::ostream& out);
void write_queries_jsonl(std::span<const SyntheticQuery> queries, std::ostream& out);
std::vector<SyntheticQuery> read_queries_jsonl(std::istream& in);
std::vector<SyntheticQuery> read_queries_jsonl(const std::filesystem::path& path);

/// Throws FormatError naming the first query whose source chunk is unknown.
void check_sources(std::span<const SyntheticQuery> queries, const Corpus& corpus);

}  // namespace techembed
