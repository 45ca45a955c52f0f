#include "techembed/querygen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "techembed/util.hpp"

namespace techembed {
namespace {

using json = nlohmann::json;

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words{
        "the",   "and",   "for",   "are",   "but",   "not",   "you",   "all",   "any",
        "can",   "has",   "had",   "her",   "was",   "one",   "our",   "out",   "use",
        "used",  "uses",  "using", "its",   "into",  "this",  "that",  "these", "those",
        "with",  "from",  "have",  "been",  "will",  "when",  "what",  "which", "where",
        "while", "then",  "than",  "them",  "they",  "there", "their", "each",  "also",
        "only",  "such",  "some",  "more",  "most",  "other", "over",  "under", "about",
        "after", "before", "both", "does",  "done",  "must",  "should", "would", "could",
        "may",   "might", "shall", "very",  "via",   "per",   "who",   "how",   "why",
        "set",   "sets",  "value", "values", "see",  "same",  "like",  "can't", "yes"};
    return words;
}

bool is_content_token(const std::string& s) {
    if (s.size() < 3) return false;
    const auto c0 = static_cast<unsigned char>(s[0]);
    // punctuation tokens start with a punctuation byte
    const bool word = c0 >= 0x80 || std::isalnum(c0) || c0 == '_';
    if (!word) return false;
    if (std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) return false;
    return !stopwords().contains(s);
}

std::string first_line_trimmed(const std::string& s) {
    const auto nl = s.find('\n');
    std::string line = s.substr(0, nl);
    const auto b = line.find_first_not_of(" \t\r\"");
    if (b == std::string::npos) return {};
    const auto e = line.find_last_not_of(" \t\r\"");
    return line.substr(b, e - b + 1);
}

const char* kSystemPrompt = "You write search queries for technical documentation.";

struct ChunkResult {
    std::vector<SyntheticQuery> queries;
    std::string error;
};

ChunkResult queries_for_chunk(const Chunk& chunk, GenBackend& backend, const QueryGenOptions& opt) {
    ChunkResult result;
    auto kws = top_keywords(chunk.text, 2);
    if (kws.empty()) {
        const auto toks = split_surfaces(chunk.text);
        kws.push_back(toks.empty() ? std::string("topic") : toks.front());
    }
    if (kws.size() == 1) kws.push_back(kws.front());
    const Provenance prov =
        backend.kind() == BackendKind::remote ? Provenance::llm : Provenance::template_engine;

    GenRequest req;
    req.system_prompt = kSystemPrompt;
    req.user_prompt =
        "Write one question a user might ask that can be answered from the passage below. "
        "Reply with the question only.\n\nPassage:\n" + chunk.text;
    req.max_tokens = 64;
    req.temperature = 0.7;
    req.slots = {{"kw1", {kws[0]}}, {"kw2", {kws[1]}}, {"keyword", {kws[0], kws[1]}}};

    std::set<std::string> seen;
    try {
        for (std::size_t q = 0; q < opt.n_per_chunk; ++q) {
            std::string text;
            // a few reseeded attempts to avoid exact duplicates within a chunk
            for (std::size_t attempt = 0; attempt < 4; ++attempt) {
                req.seed = derive_seed(opt.seed, chunk.chunk_id, q + attempt * opt.n_per_chunk);
                text = first_line_trimmed(backend.generate(req));
                if (!seen.contains(text)) break;
            }
            if (text.empty()) {
                throw BackendError("backend returned an empty query for " + chunk.chunk_id, 200);
            }
            seen.insert(text);
            result.queries.push_back(
                {chunk.chunk_id + "/q" + std::to_string(q), text, chunk.chunk_id, prov});
        }
    } catch (const std::exception& e) {
        result.queries.clear();
        result.error = e.what();
    }
    return result;
}

}  // namespace

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::real: return "real";
        case Provenance::llm: return "llm";
        case Provenance::template_engine: return "template";
    }
    return "template";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "real") return Provenance::real;
    if (s == "llm") return Provenance::llm;
    if (s == "template") return Provenance::template_engine;
    throw FormatError("unknown provenance '" + s + "'");
}

const std::vector<std::string>& default_query_templates() {
    static const std::vector<std::string> templates{
        "What is {kw1} in the context of {kw2}?",
        "How do I configure {kw1} for {kw2}?",
        "Which parameter controls {kw1} {kw2}?",
        "What causes an error involving {kw1} and {kw2}?",
        "What is the difference between {kw1} and {kw2}?",
        "List the options related to {keyword}.",
        "Where is {kw1} {kw2} described?",
        "What constraints apply to {kw1} {kw2}?",
    };
    return templates;
}

std::vector<std::string> top_keywords(std::string_view text, std::size_t n) {
    std::map<std::string, std::size_t> counts;
    for (auto& s : split_surfaces(text)) {
        if (is_content_token(s)) ++counts[std::move(s)];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < n; ++i) out.push_back(ranked[i].first);
    return out;
}

std::vector<SyntheticQuery> generate_queries(const Corpus& corpus, GenBackend& backend,
                                             const QueryGenOptions& opt) {
    if (opt.n_per_chunk < 1) throw ConfigError("n_per_chunk must be at least 1");
    const auto& chunks = corpus.chunks();
    if (opt.resume_from > chunks.size()) throw ConfigError("resume cursor is past the last chunk");
    const std::size_t window = std::max<std::size_t>(1, opt.parallelism);

    std::vector<SyntheticQuery> out;
    out.reserve((chunks.size() - opt.resume_from) * opt.n_per_chunk);
    for (std::size_t start = opt.resume_from; start < chunks.size(); start += window) {
        const std::size_t end = std::min(chunks.size(), start + window);
        std::vector<ChunkResult> results(end - start);
        if (window == 1) {
            results[0] = queries_for_chunk(chunks[start], backend, opt);
        } else {
            std::vector<std::future<ChunkResult>> pending;
            for (std::size_t i = start; i < end; ++i) {
                pending.push_back(std::async(std::launch::async, [&, i] {
                    return queries_for_chunk(chunks[i], backend, opt);
                }));
            }
            for (std::size_t i = 0; i < pending.size(); ++i) results[i] = pending[i].get();
        }
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (!results[i].error.empty()) {
                if (opt.sink != nullptr) opt.sink->flush();
                throw GenerationAborted("query generation failed at chunk " +
                                            chunks[start + i].chunk_id + ": " + results[i].error,
                                        start + i);
            }
            for (auto& q : results[i].queries) {
                if (opt.sink != nullptr) write_query(q, *opt.sink);
                out.push_back(std::move(q));
            }
        }
    }
    if (opt.sink != nullptr) opt.sink->flush();
    return out;
}

double query_entropy(std::string_view text) {
    std::map<std::string, std::size_t> counts;
    std::size_t total = 0;
    for (auto& s : split_surfaces(text)) {
        ++counts[std::move(s)];
        ++total;
    }
    if (total == 0) throw ConfigError("query has no tokens");
    double h = 0.0;
    for (const auto& [surface, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h == 0.0 ? 0.0 : h;
}

double diversity(std::span<const SyntheticQuery> queries) {
    if (queries.empty()) throw ConfigError("diversity of an empty query set is undefined");
    double sum = 0.0;
    for (const auto& q : queries) sum += query_entropy(q);
    return sum / static_cast<double>(queries.size());
}

double distinct_bigram_ratio(std::span<const SyntheticQuery> queries) {
    std::set<std::pair<std::string, std::string>> distinct;
    std::size_t total = 0;
    for (const auto& q : queries) {
        const auto toks = split_surfaces(q.text);
        for (std::size_t i = 1; i < toks.size(); ++i) {
            distinct.emplace(toks[i - 1], toks[i]);
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(distinct.size()) / static_cast<double>(total);
}

void write_query(const SyntheticQuery& q, std::ostream& out) {
    const json obj = {{"query_id", q.query_id},
                      {"text", q.text},
                      {"source_chunk_id", q.source_chunk_id},
                      {"provenance", to_string(q.provenance)}};
    out << obj.dump() << '\n';
}

void write_queries_jsonl(std::span<const SyntheticQuery> queries, std::ostream& out) {
    for (const auto& q : queries) write_query(q, out);
}

std::vector<SyntheticQuery> read_queries_jsonl(std::istream& in) {
    std::vector<SyntheticQuery> out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = "line " + std::to_string(line_no) + ": ";
        try {
            const auto obj = json::parse(line);
            SyntheticQuery q;
            q.query_id = obj.at("query_id").get<std::string>();
            q.text = obj.at("text").get<std::string>();
            q.source_chunk_id = obj.value("source_chunk_id", std::string());
            q.provenance = provenance_from_string(obj.value("provenance", std::string("real")));
            if (q.query_id.empty() || q.query_id.find_first_of(" \t") != std::string::npos) {
                throw FormatError("query_id must be non-empty and free of whitespace");
            }
            if (split_surfaces(q.text).empty()) throw FormatError("query text is empty");
            if (q.provenance != Provenance::real && q.source_chunk_id.empty()) {
                throw FormatError("synthetic query without source_chunk_id");
            }
            if (!ids.insert(q.query_id).second) {
                throw FormatError("duplicate query_id '" + q.query_id + "'");
            }
            out.push_back(std::move(q));
        } catch (const json::exception& e) {
            throw FormatError(where + e.what());
        } catch (const FormatError& e) {
            throw FormatError(where + e.what());
        }
    }
    return out;
}

std::vector<SyntheticQuery> read_queries_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open queries " + path.string());
    try {
        return read_queries_jsonl(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void check_sources(std::span<const SyntheticQuery> queries, const Corpus& corpus) {
    for (const auto& q : queries) {
        if (q.provenance != Provenance::real && corpus.find_chunk(q.source_chunk_id) == nullptr) {
            throw FormatError("query '" + q.query_id + "' refers to unknown chunk '" +
                              q.source_chunk_id + "'");
        }
    }
}

}  // namespace techembed
