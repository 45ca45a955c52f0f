#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "techembed/checkpoint.hpp"
#include "techembed/corpus.hpp"
#include "techembed/summarizer.hpp"

namespace techembed {

struct SearchHit {
    std::string chunk_id;
    double score = 0.0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Exact dense index over unit vectors, in insertion order.
class VectorIndex {
public:
    explicit VectorIndex(std::size_t dim = 0, std::string fingerprint = {}, bool use_summaries = false);

    /// Throws DimensionError on a wrong length, ConfigError on a non-unit
    /// vector (tolerance 1e-9) or a duplicate id.
    void add(std::string chunk_id, std::vector<double> vector);

    /// The k best entries by dot product, score descending, ties by chunk_id
    /// ascending. k larger than the index returns every entry.
    std::vector<SearchHit> search(std::span<const double> query, std::size_t k) const;

    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t size() const { return ids_.size(); }
    [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }
    [[nodiscard]] std::span<const double> vector(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    [[nodiscard]] const std::string& fingerprint() const { return fingerprint_; }
    [[nodiscard]] bool use_summaries() const { return use_summaries_; }

    friend bool operator==(const VectorIndex&, const VectorIndex&) = default;

private:
    std::size_t dim_;
    std::string fingerprint_;
    bool use_summaries_;
    std::vector<std::string> ids_;
    std::unordered_set<std::string> id_set_;
    std::vector<double> data_;
};

/// "TIDX" container. Vectors are stored as f64 so unit norms survive exactly.
std::string serialize_index(const VectorIndex& index);
VectorIndex deserialize_index(std::string_view bytes, const std::string& what = "index");
void save_index(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load_index(const std::filesystem::path& path);

/// Throws ConfigError when the index was built with another encoder, unless
/// `allow_mismatch` is set.
void require_fingerprint(const VectorIndex& index, const std::string& fingerprint, bool allow_mismatch);

/// Query and document embeddings as the pipeline computes them: prompts are
/// applied only when the checkpoint's prompts have been tuned.
std::vector<double> embed_query_text(const Checkpoint& ckpt, const Tokenizer& tokenizer, std::string_view text);
std::vector<double> embed_document_text(const Checkpoint& ckpt, const Tokenizer& tokenizer, std::string_view text);

/// Embeds every chunk (contextualized with its document summary when
/// `use_summaries`) in corpus order. Throws ConfigError naming a document
/// without a summary.
VectorIndex build_index(const Corpus& corpus, std::span<const Summary> summaries, const Checkpoint& ckpt,
                        const std::string& fingerprint, bool use_summaries, std::size_t parallelism = 1);

}  // namespace techembed
