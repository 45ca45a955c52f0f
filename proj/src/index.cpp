#include "techembed/index.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <unordered_map>
#include <unordered_set>

#include "techembed/container.hpp"
#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

constexpr std::string_view kMagic = "TIDX";

bool hit_before(const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
}

std::vector<std::uint32_t> require_tokens(const Tokenizer& tokenizer, std::string_view text, const char* what) {
    auto ids = tokenizer.ids(text);
    if (ids.empty()) throw ConfigError(std::string(what) + " has no tokens");
    return ids;
}

}  // namespace

VectorIndex::VectorIndex(std::size_t dim, std::string fingerprint, bool use_summaries)
    : dim_(dim), fingerprint_(std::move(fingerprint)), use_summaries_(use_summaries) {}

void VectorIndex::add(std::string chunk_id, std::vector<double> vector) {
    if (vector.size() != dim_) {
        throw DimensionError("vector for " + chunk_id + " has length " + std::to_string(vector.size()) +
                             ", index dim is " + std::to_string(dim_));
    }
    const double norm = std::sqrt(dot(vector, vector));
    if (!(std::abs(norm - 1.0) <= 1e-9)) {
        throw ConfigError("vector for " + chunk_id + " is not unit norm (" + std::to_string(norm) + ")");
    }
    if (!id_set_.insert(chunk_id).second) {
        throw ConfigError("duplicate chunk id " + chunk_id + " in index");
    }
    ids_.push_back(std::move(chunk_id));
    data_.insert(data_.end(), vector.begin(), vector.end());
}

std::vector<SearchHit> VectorIndex::search(std::span<const double> query, std::size_t k) const {
    if (query.size() != dim_) {
        throw DimensionError("query has length " + std::to_string(query.size()) + ", index dim is " +
                             std::to_string(dim_));
    }
    std::vector<SearchHit> hits;
    hits.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) hits.push_back({ids_[i], dot(query, vector(i))});
    const std::size_t n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
    hits.resize(n);
    return hits;
}

std::string serialize_index(const VectorIndex& index) {
    Container c;
    c.meta["format"] = "techembed-index";
    c.meta["dim"] = index.dim();
    c.meta["fingerprint"] = index.fingerprint();
    c.meta["use_summaries"] = index.use_summaries();
    c.meta["chunk_ids"] = index.ids();
    TensorRecord t{"vectors", "vectors", DType::f64, {index.size(), index.dim()}, {}};
    t.data.reserve(index.size() * index.dim());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto v = index.vector(i);
        t.data.insert(t.data.end(), v.begin(), v.end());
    }
    c.tensors.push_back(std::move(t));
    return encode_container(kMagic, c);
}

VectorIndex deserialize_index(std::string_view bytes, const std::string& what) {
    const Container c = decode_container(kMagic, bytes, what);
    try {
        const auto dim = c.meta.at("dim").get<std::size_t>();
        VectorIndex index(dim, c.meta.at("fingerprint").get<std::string>(), c.meta.at("use_summaries").get<bool>());
        const auto ids = c.meta.at("chunk_ids").get<std::vector<std::string>>();
        const auto* t = c.find("vectors");
        if (!t || t->shape.size() != 2 || t->shape[0] != ids.size() || t->shape[1] != dim) {
            throw FormatError(what + ": vector table does not match " + std::to_string(ids.size()) + " ids of dim " +
                              std::to_string(dim));
        }
        for (std::size_t i = 0; i < ids.size(); ++i) {
            index.add(ids[i], std::vector<double>(t->data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                                  t->data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim)));
        }
        return index;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": malformed header: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(what + ": " + e.what());
    }
}

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
    write_file(path, serialize_index(index));
}

VectorIndex load_index(const std::filesystem::path& path) { return deserialize_index(read_file(path), path.string()); }

void require_fingerprint(const VectorIndex& index, const std::string& fingerprint, bool allow_mismatch) {
    if (index.fingerprint() != fingerprint && !allow_mismatch) {
        throw ConfigError("index was built with encoder " + index.fingerprint() + " but the checkpoint is " +
                          fingerprint + " (pass --allow-mismatch to search anyway)");
    }
}

std::vector<double> embed_query_text(const Checkpoint& ckpt, const Tokenizer& tokenizer, std::string_view text) {
    return encode_query(ckpt.model, ckpt.prompt, require_tokens(tokenizer, text, "query"), ckpt.prompt_tuned);
}

std::vector<double> embed_document_text(const Checkpoint& ckpt, const Tokenizer& tokenizer, std::string_view text) {
    return encode_document(ckpt.model, ckpt.prompt, require_tokens(tokenizer, text, "document"), ckpt.prompt_tuned);
}

VectorIndex build_index(const Corpus& corpus, std::span<const Summary> summaries, const Checkpoint& ckpt,
                        const std::string& fingerprint, bool use_summaries, std::size_t parallelism) {
    std::unordered_map<std::string_view, const Summary*> by_doc;
    for (const auto& s : summaries) by_doc.emplace(s.doc_id, &s);
    const auto& chunks = corpus.chunks();
    std::vector<std::string> texts(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const Summary* summary = nullptr;
        if (use_summaries) {
            const auto it = by_doc.find(chunks[i].doc_id);
            if (it == by_doc.end()) throw ConfigError("no summary for document '" + chunks[i].doc_id + "'");
            summary = it->second;
        }
        texts[i] = contextualize_chunk(chunks[i], summary);
    }

    const Tokenizer tokenizer = ckpt.tokenizer();
    std::vector<std::vector<double>> vectors(chunks.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, chunks.size()));
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) {
        jobs.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t i = w; i < chunks.size(); i += workers) {
                vectors[i] = embed_document_text(ckpt, tokenizer, texts[i]);
            }
        }));
    }
    for (auto& j : jobs) j.get();

    VectorIndex index(ckpt.model.config().dim, fingerprint, use_summaries);
    for (std::size_t i = 0; i < chunks.size(); ++i) index.add(chunks[i].chunk_id, std::move(vectors[i]));
    return index;
}

}  // namespace techembed
