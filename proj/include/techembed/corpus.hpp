#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace techembed {

struct Document {
    std::string doc_id;
    std::string title;
    std::string text;
    std::map<std::string, std::string> metadata;
};

/// A token window of a document. chunk_id is "<doc_id>#<ordinal>".
struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::string text;
    std::size_t token_start = 0;
    std::size_t token_end = 0;
    std::size_t ordinal = 0;
};

struct Token {
    std::string surface;
    std::uint32_t id = 0;
    // Byte span of the token in the source text.
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Known surfaces mapped to dense ids. Ids are the line order of the vocabulary file.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> surfaces);

    /// Most frequent surfaces first, ties alphabetical, truncated to capacity.
    static Vocabulary build(std::span<const Document> docs, std::size_t capacity);
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    [[nodiscard]] std::size_t size() const { return surfaces_.size(); }
    [[nodiscard]] const std::vector<std::string>& surfaces() const { return surfaces_; }
    /// Returns -1 for surfaces not in the vocabulary.
    [[nodiscard]] std::int64_t find(std::string_view surface) const;

private:
    std::vector<std::string> surfaces_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

/// Rule-based word/punctuation splitter with a hashed out-of-vocabulary band.
///
/// Text is lowercased and split on Unicode whitespace and on boundaries between
/// word characters and punctuation; a run of punctuation is one token. '_' is a
/// word character. Known surfaces take ids from the vocabulary; everything else
/// hashes into the top quarter of the id space.
class Tokenizer {
public:
    explicit Tokenizer(std::uint32_t vocab_size = 8192, Vocabulary vocab = {});

    [[nodiscard]] std::vector<Token> tokenize(std::string_view text) const;
    [[nodiscard]] std::vector<std::uint32_t> ids(std::string_view text) const;

    [[nodiscard]] std::uint32_t vocab_size() const { return vocab_size_; }
    /// First id of the OOV band.
    [[nodiscard]] std::uint32_t oov_base() const { return oov_base_; }
    [[nodiscard]] const Vocabulary& vocabulary() const { return vocab_; }

    /// Number of in-vocabulary ids available below the OOV band.
    static std::uint32_t vocab_capacity(std::uint32_t vocab_size);

private:
    std::uint32_t vocab_size_;
    std::uint32_t oov_base_;
    Vocabulary vocab_;
};

/// Surfaces only, no vocabulary lookup.
std::vector<std::string> split_surfaces(std::string_view text);

struct ChunkingParams {
    std::size_t chunk_size = 256;
    std::size_t overlap = 32;
};

/// Splits a document into fixed-size token windows with the final window
/// anchored to the end of the document. Throws ConfigError on bad params.
std::vector<Chunk> chunk_document(const Document& doc, const Tokenizer& tokenizer,
                                  const ChunkingParams& params);

/// Documents in input order plus their chunks in (document, ordinal) order.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Document> docs);

    /// Replaces the chunk list by chunking every document.
    void chunk(const Tokenizer& tokenizer, const ChunkingParams& params);

    [[nodiscard]] const std::vector<Document>& documents() const { return docs_; }
    [[nodiscard]] const std::vector<Chunk>& chunks() const { return chunks_; }
    [[nodiscard]] const Document* find_document(std::string_view doc_id) const;
    [[nodiscard]] const Chunk* find_chunk(std::string_view chunk_id) const;

private:
    std::vector<Document> docs_;
    std::vector<Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> doc_index_;
    std::unordered_map<std::string, std::size_t> chunk_index_;
};

/// Parses corpus JSONL. Errors name the 1-based line number or the duplicate id.
Corpus ingest(std::istream& in);
Corpus ingest(const std::filesystem::path& path);

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out);
void write_chunks_jsonl(const Corpus& corpus, std::ostream& out);

/// "<doc_id>#<n>" -> "<doc_id>".
std::string doc_id_of_chunk(std::string_view chunk_id);

}  // namespace techembed
