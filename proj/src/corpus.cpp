#include "techembed/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

using json = nlohmann::json;

struct CodePoint {
    char32_t value;
    std::size_t begin;
    std::size_t end;
};

// Invalid bytes decode to themselves (as Latin-1) so tokenization never fails.
std::vector<CodePoint> decode_utf8(std::string_view text) {
    std::vector<CodePoint> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto b0 = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        char32_t cp = b0;
        if (b0 >= 0xC0 && b0 < 0xE0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if (b0 >= 0xE0 && b0 < 0xF0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if (b0 >= 0xF0 && b0 < 0xF8) {
            len = 4;
            cp = b0 & 0x07;
        }
        bool valid = len == 1 ? b0 < 0x80 : i + len <= text.size();
        for (std::size_t k = 1; valid && k < len; ++k) {
            const auto b = static_cast<unsigned char>(text[i + k]);
            if ((b & 0xC0) != 0x80) {
                valid = false;
            } else {
                cp = (cp << 6) | (b & 0x3F);
            }
        }
        if (!valid) {
            len = 1;
            cp = b0;
        }
        out.push_back({cp, i, i + len});
        i += len;
    }
    return out;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Unicode White_Space property.
bool is_space(char32_t c) {
    return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
           c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
    if (c < 0x80) {
        return c != '_' && ((c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
                            (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E));
    }
    return (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB2 && c != 0xB3 && c != 0xB5 &&
            c != 0xB9 && c != 0xBA && c != 0xBC && c != 0xBD && c != 0xBE) ||
           c == 0xD7 || c == 0xF7 || (c >= 0x2010 && c <= 0x2027) ||
           (c >= 0x2030 && c <= 0x205E) || (c >= 0x2190 && c <= 0x21FF) ||
           (c >= 0x2200 && c <= 0x22FF) || (c >= 0x3001 && c <= 0x3003) ||
           (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F) ||
           (c >= 0xFF1A && c <= 0xFF20);
}

char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 0x20;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
    if (c >= 0x410 && c <= 0x42F) return c + 0x20;
    if (c >= 0x400 && c <= 0x40F) return c + 0x50;
    return c;
}

enum class CharClass { space, punct, word };

CharClass classify(char32_t c) {
    if (is_space(c)) return CharClass::space;
    if (is_punct(c)) return CharClass::punct;
    return CharClass::word;
}

struct RawToken {
    std::string surface;
    std::size_t begin;
    std::size_t end;
};

std::vector<RawToken> split_raw(std::string_view text) {
    std::vector<RawToken> out;
    const auto cps = decode_utf8(text);
    std::size_t i = 0;
    while (i < cps.size()) {
        const CharClass cls = classify(cps[i].value);
        if (cls == CharClass::space) {
            ++i;
            continue;
        }
        RawToken tok{{}, cps[i].begin, cps[i].end};
        while (i < cps.size() && classify(cps[i].value) == cls) {
            append_utf8(tok.surface, to_lower(cps[i].value));
            tok.end = cps[i].end;
            ++i;
        }
        out.push_back(std::move(tok));
    }
    return out;
}

bool has_non_space(std::string_view text) {
    for (const auto& cp : decode_utf8(text)) {
        if (!is_space(cp.value)) return true;
    }
    return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> surfaces) : surfaces_(std::move(surfaces)) {
    ids_.reserve(surfaces_.size());
    for (std::size_t i = 0; i < surfaces_.size(); ++i) {
        if (!ids_.emplace(surfaces_[i], static_cast<std::uint32_t>(i)).second) {
            throw FormatError("duplicate vocabulary entry '" + surfaces_[i] + "'");
        }
    }
}

Vocabulary Vocabulary::build(std::span<const Document> docs, std::size_t capacity) {
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& doc : docs) {
        for (auto& tok : split_raw(doc.text)) {
            ++counts[std::move(tok.surface)];
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > capacity) ranked.resize(capacity);
    std::vector<std::string> surfaces;
    surfaces.reserve(ranked.size());
    for (auto& [s, n] : ranked) surfaces.push_back(std::move(s));
    return Vocabulary(std::move(surfaces));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary " + path.string());
    std::vector<std::string> surfaces;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) throw FormatError("empty vocabulary line " + std::to_string(surfaces.size() + 1));
        surfaces.push_back(line);
    }
    return Vocabulary(std::move(surfaces));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::string bytes;
    for (const auto& s : surfaces_) {
        bytes += s;
        bytes += '\n';
    }
    write_file(path, bytes);
}

std::int64_t Vocabulary::find(std::string_view surface) const {
    const auto it = ids_.find(std::string(surface));
    return it == ids_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

// ---------------------------------------------------------------------------
// Tokenizer

std::uint32_t Tokenizer::vocab_capacity(std::uint32_t vocab_size) {
    return vocab_size - vocab_size / 4;
}

Tokenizer::Tokenizer(std::uint32_t vocab_size, Vocabulary vocab)
    : vocab_size_(vocab_size), oov_base_(vocab_capacity(vocab_size)), vocab_(std::move(vocab)) {
    if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4");
    if (vocab_.size() > oov_base_) {
        throw ConfigError("vocabulary of " + std::to_string(vocab_.size()) +
                          " entries exceeds in-vocabulary capacity " + std::to_string(oov_base_));
    }
}

std::vector<Token> Tokenizer::tokenize(std::string_view text) const {
    auto raw = split_raw(text);
    std::vector<Token> out;
    out.reserve(raw.size());
    const std::uint32_t band = vocab_size_ - oov_base_;
    for (auto& r : raw) {
        const auto known = vocab_.find(r.surface);
        const std::uint32_t id = known >= 0 ? static_cast<std::uint32_t>(known)
                                            : oov_base_ + static_cast<std::uint32_t>(fnv1a64(r.surface) % band);
        out.push_back({std::move(r.surface), id, r.begin, r.end});
    }
    return out;
}

std::vector<std::uint32_t> Tokenizer::ids(std::string_view text) const {
    std::vector<std::uint32_t> out;
    for (const auto& t : tokenize(text)) out.push_back(t.id);
    return out;
}

std::vector<std::string> split_surfaces(std::string_view text) {
    std::vector<std::string> out;
    for (auto& r : split_raw(text)) out.push_back(std::move(r.surface));
    return out;
}

// ---------------------------------------------------------------------------
// Chunking

std::vector<Chunk> chunk_document(const Document& doc, const Tokenizer& tokenizer,
                                  const ChunkingParams& params) {
    if (params.chunk_size < 8) {
        throw ConfigError("chunk_size must be at least 8, got " + std::to_string(params.chunk_size));
    }
    if (params.overlap >= params.chunk_size) {
        throw ConfigError("overlap (" + std::to_string(params.overlap) +
                          ") must be smaller than chunk_size (" +
                          std::to_string(params.chunk_size) + ")");
    }
    const auto tokens = tokenizer.tokenize(doc.text);
    if (tokens.empty()) {
        throw FormatError("document '" + doc.doc_id + "' has no tokens");
    }
    const std::size_t n = tokens.size();
    const std::size_t stride = params.chunk_size - params.overlap;

    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t start = 0;
    while (start + params.chunk_size < n) {
        spans.emplace_back(start, start + params.chunk_size);
        start += stride;
    }
    spans.emplace_back(n > params.chunk_size ? n - params.chunk_size : 0, n);

    std::vector<Chunk> chunks;
    chunks.reserve(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto [a, b] = spans[i];
        const std::size_t byte_begin = tokens[a].begin;
        const std::size_t byte_end = tokens[b - 1].end;
        chunks.push_back({doc.doc_id + "#" + std::to_string(i), doc.doc_id,
                          doc.text.substr(byte_begin, byte_end - byte_begin), a, b, i});
    }
    return chunks;
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (docs_[i].doc_id.empty()) {
            throw FormatError("document " + std::to_string(i) + " has an empty doc_id");
        }
        if (!doc_index_.emplace(docs_[i].doc_id, i).second) {
            throw FormatError("duplicate doc_id '" + docs_[i].doc_id + "'");
        }
    }
}

void Corpus::chunk(const Tokenizer& tokenizer, const ChunkingParams& params) {
    chunks_.clear();
    chunk_index_.clear();
    for (const auto& doc : docs_) {
        for (auto& c : chunk_document(doc, tokenizer, params)) {
            chunk_index_.emplace(c.chunk_id, chunks_.size());
            chunks_.push_back(std::move(c));
        }
    }
}

const Document* Corpus::find_document(std::string_view doc_id) const {
    const auto it = doc_index_.find(std::string(doc_id));
    return it == doc_index_.end() ? nullptr : &docs_[it->second];
}

const Chunk* Corpus::find_chunk(std::string_view chunk_id) const {
    const auto it = chunk_index_.find(std::string(chunk_id));
    return it == chunk_index_.end() ? nullptr : &chunks_[it->second];
}

Corpus ingest(std::istream& in) {
    std::vector<Document> docs;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!has_non_space(line)) continue;
        const auto where = "line " + std::to_string(line_no) + ": ";
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where + "invalid JSON (" + e.what() + ")");
        }
        if (!obj.is_object()) throw FormatError(where + "expected a JSON object");
        Document doc;
        if (!obj.contains("doc_id") || !obj["doc_id"].is_string()) {
            throw FormatError(where + "missing string field \"doc_id\"");
        }
        doc.doc_id = obj["doc_id"].get<std::string>();
        if (doc.doc_id.empty()) throw FormatError(where + "\"doc_id\" is empty");
        for (const auto& cp : decode_utf8(doc.doc_id)) {
            if (is_space(cp.value)) {
                throw FormatError(where + "\"doc_id\" contains whitespace");
            }
        }
        if (!obj.contains("text") || !obj["text"].is_string()) {
            throw FormatError(where + "missing string field \"text\"");
        }
        doc.text = obj["text"].get<std::string>();
        if (!has_non_space(doc.text)) throw FormatError(where + "\"text\" is blank");
        if (obj.contains("title")) {
            if (!obj["title"].is_string()) throw FormatError(where + "\"title\" must be a string");
            doc.title = obj["title"].get<std::string>();
        }
        if (obj.contains("metadata")) {
            const auto& meta = obj["metadata"];
            if (!meta.is_object()) throw FormatError(where + "\"metadata\" must be an object");
            for (const auto& [k, v] : meta.items()) {
                doc.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
            }
        }
        if (const auto [it, fresh] = seen.emplace(doc.doc_id, line_no); !fresh) {
            throw FormatError(where + "duplicate doc_id '" + doc.doc_id + "' (first seen on line " +
                              std::to_string(it->second) + ")");
        }
        docs.push_back(std::move(doc));
    }
    return Corpus(std::move(docs));
}

Corpus ingest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus " + path.string());
    try {
        return ingest(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out) {
    for (const auto& doc : corpus.documents()) {
        json obj = {{"doc_id", doc.doc_id}, {"text", doc.text}};
        if (!doc.title.empty()) obj["title"] = doc.title;
        if (!doc.metadata.empty()) obj["metadata"] = doc.metadata;
        out << obj.dump() << '\n';
    }
}

void write_chunks_jsonl(const Corpus& corpus, std::ostream& out) {
    for (const auto& c : corpus.chunks()) {
        const json obj = {{"chunk_id", c.chunk_id},       {"doc_id", c.doc_id},
                          {"ordinal", c.ordinal},         {"token_start", c.token_start},
                          {"token_end", c.token_end},     {"text", c.text}};
        out << obj.dump() << '\n';
    }
}

std::string doc_id_of_chunk(std::string_view chunk_id) {
    const auto pos = chunk_id.rfind('#');
    return std::string(pos == std::string_view::npos ? chunk_id : chunk_id.substr(0, pos));
}

}  // namespace techembed
