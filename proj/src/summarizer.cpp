#include "techembed/summarizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "techembed/error.hpp"
#include "techembed/textgen.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> raw_segments(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    const auto flush = [&] {
        auto t = trim(cur);
        if (!t.empty()) out.push_back(std::move(t));
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            flush();
            continue;
        }
        cur += c;
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || is_space(text[i + 1]))) flush();
    }
    flush();
    return out;
}

const SoftPrompt& no_prompt() {
    static const SoftPrompt empty{};
    return empty;
}

std::vector<double> softmax(const std::vector<double>& scores) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) z += (out[i] = std::exp(scores[i] - mx));
    for (auto& v : out) v /= z;
    return out;
}

void round_weights(SummaryWeights& w) {
    round_to_float(w.w);
    for (auto& v : w.u) v = static_cast<double>(static_cast<float>(v));
}

Summary summary_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("doc_id") || !j["doc_id"].is_string() || !j.contains("text") ||
        !j["text"].is_string()) {
        throw FormatError(where + "summary needs string fields \"doc_id\" and \"text\"");
    }
    Summary s;
    s.doc_id = j["doc_id"].get<std::string>();
    s.text = j["text"].get<std::string>();
    if (j.contains("selected")) {
        if (!j["selected"].is_array()) throw FormatError(where + "\"selected\" must be an array");
        for (const auto& v : j["selected"]) {
            if (!v.is_number_unsigned()) throw FormatError(where + "\"selected\" holds a non-ordinal");
            s.selected.push_back(v.get<std::size_t>());
        }
    }
    return s;
}

}  // namespace

std::vector<Sentence> split_sentences(const Document& doc, const Tokenizer& tokenizer) {
    std::vector<std::string> merged;
    std::string pending;
    for (auto& seg : raw_segments(doc.text)) {
        if (split_surfaces(seg).size() < 3) {
            if (!merged.empty()) {
                merged.back() += " " + seg;
            } else {
                pending = pending.empty() ? seg : pending + " " + seg;
            }
            continue;
        }
        merged.push_back(pending.empty() ? seg : pending + " " + seg);
        pending.clear();
    }
    if (!pending.empty()) merged.push_back(pending);

    std::vector<Sentence> out;
    for (auto& text : merged) {
        Sentence s;
        s.doc_id = doc.doc_id;
        s.ordinal = out.size();
        s.token_ids = tokenizer.ids(text);
        s.text = std::move(text);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw ConfigError("document '" + doc.doc_id + "' has no sentences");
    return out;
}

SummaryWeights SummaryWeights::init(std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "summarizer"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    SummaryWeights w = zeros(dim);
    for (auto& v : w.w.values()) v = rng.normal() * scale;
    for (auto& v : w.u) v = rng.normal() * scale;
    round_weights(w);
    return w;
}

SummaryWeights SummaryWeights::zeros(std::size_t dim) { return {Matrix(dim, dim), std::vector<double>(dim, 0.0)}; }

void SummaryWeights::validate(std::size_t d) const {
    if (u.size() != d || w.rows() != d || w.cols() != d) {
        throw DimensionError("summarizer weights are W " + w.shape_string() + ", u " + std::to_string(u.size()) +
                             "; encoder dimension is " + std::to_string(d));
    }
}

std::vector<double> attention_weights(const Matrix& emb, const SummaryWeights& weights) {
    weights.validate(emb.cols());
    if (emb.rows() == 0) throw ConfigError("attention over zero sentences");
    const std::size_t d = emb.cols();
    std::vector<double> scores(emb.rows());
    for (std::size_t s = 0; s < emb.rows(); ++s) {
        double score = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double z = 0.0;
            for (std::size_t j = 0; j < d; ++j) z += weights.w(i, j) * emb(s, j);
            score += weights.u[i] * std::tanh(z);
        }
        scores[s] = score;
    }
    return softmax(scores);
}

Matrix embed_sentences(std::span<const Sentence> sentences, const EncoderModel& model) {
    Matrix out(sentences.size(), model.config().dim);
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto e = encode_document(model, no_prompt(), sentences[s].token_ids, false);
        std::copy(e.begin(), e.end(), out.row(s).begin());
    }
    return out;
}

std::vector<double> attention_scores(const Document& doc, const Tokenizer& tokenizer,
                                     const SummaryWeights& weights, const EncoderModel& model) {
    weights.validate(model.config().dim);
    const auto sentences = split_sentences(doc, tokenizer);
    return attention_weights(embed_sentences(sentences, model), weights);
}

Summary select_sentences(std::span<const Sentence> sentences, std::span<const double> weights, std::size_t m) {
    if (m == 0) throw ConfigError("summary length m must be at least 1");
    if (weights.size() != sentences.size()) {
        throw DimensionError(std::to_string(weights.size()) + " weights for " + std::to_string(sentences.size()) +
                             " sentences");
    }
    std::vector<std::size_t> order(sentences.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
    order.resize(std::min(m, order.size()));
    std::sort(order.begin(), order.end());

    Summary s;
    if (!sentences.empty()) s.doc_id = sentences.front().doc_id;
    for (const std::size_t i : order) {
        if (!s.text.empty()) s.text += ' ';
        s.text += sentences[i].text;
        s.selected.push_back(sentences[i].ordinal);
    }
    s.weights.assign(weights.begin(), weights.end());
    return s;
}

Summary extract_summary(const Document& doc, const Tokenizer& tokenizer, const SummaryWeights& weights,
                        const EncoderModel& model, std::size_t m) {
    weights.validate(model.config().dim);
    const auto sentences = split_sentences(doc, tokenizer);
    const auto w = attention_weights(embed_sentences(sentences, model), weights);
    auto s = select_sentences(sentences, w, m);
    s.doc_id = doc.doc_id;
    return s;
}

Summary abstractive_summary(const Document& doc, GenBackend& backend, std::uint64_t seed) {
    GenRequest req;
    req.system_prompt = "You summarize technical documents in at most three sentences. Keep product names.";
    req.seed = derive_seed(seed, doc.doc_id);
    req.slots["title"] = {doc.title.empty() ? doc.doc_id : doc.title};
    req.slots["document"] = {doc.text};
    if (backend.kind() == BackendKind::template_engine) {
        // Document text may contain braces; keep it out of the template itself.
        req.user_prompt = "{document}";
    } else {
        req.user_prompt = "Summarize the following document.\n\n" + doc.text;
    }
    Summary s;
    s.doc_id = doc.doc_id;
    s.text = trim(backend.generate(req));
    return s;
}

double summary_objective(std::span<const SummaryTrainingDoc> docs, const SummaryWeights& weights,
                         SummaryWeights* grad) {
    if (docs.empty()) throw ConfigError("summarizer objective over zero documents");
    const std::size_t d = weights.dim();
    weights.validate(d);
    if (grad) *grad = SummaryWeights::zeros(d);
    double total = 0.0;
    for (const auto& doc : docs) {
        const Matrix& e = doc.sentences;
        const std::size_t n = e.rows();
        if (n == 0 || e.cols() != d || doc.target.size() != d) {
            throw DimensionError("summarizer training document has shape " + e.shape_string() + ", target " +
                                 std::to_string(doc.target.size()) + ", weights " + std::to_string(d));
        }
        Matrix h(n, d);
        std::vector<double> scores(n, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t i = 0; i < d; ++i) {
                double z = 0.0;
                for (std::size_t j = 0; j < d; ++j) z += weights.w(i, j) * e(s, j);
                h(s, i) = std::tanh(z);
                scores[s] += weights.u[i] * h(s, i);
            }
        }
        const auto a = softmax(scores);
        std::vector<double> mix(d, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t j = 0; j < d; ++j) mix[j] += a[s] * e(s, j);
        }
        const double mix_norm = std::sqrt(dot(mix, mix));
        const double cosine = dot(mix, doc.target) / mix_norm;
        total += cosine;
        if (!grad) continue;

        // d cos / d mix = t/|m| - cos * m/|m|^2
        std::vector<double> g_mix(d);
        for (std::size_t j = 0; j < d; ++j) {
            g_mix[j] = (doc.target[j] - cosine * mix[j] / mix_norm) / mix_norm;
        }
        std::vector<double> g_a(n);
        double mean_g = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            g_a[s] = dot(g_mix, e.row(s));
            mean_g += a[s] * g_a[s];
        }
        for (std::size_t s = 0; s < n; ++s) {
            const double g_score = a[s] * (g_a[s] - mean_g);
            for (std::size_t i = 0; i < d; ++i) {
                grad->u[i] += g_score * h(s, i);
                const double g_z = g_score * weights.u[i] * (1.0 - h(s, i) * h(s, i));
                for (std::size_t j = 0; j < d; ++j) grad->w(i, j) += g_z * e(s, j);
            }
        }
    }
    const double scale = 1.0 / static_cast<double>(docs.size());
    if (grad) {
        for (auto& v : grad->w.values()) v *= scale;
        for (auto& v : grad->u) v *= scale;
    }
    return total * scale;
}

SummaryWeights train_summarizer(std::span<const SummaryTrainingDoc> docs, std::size_t dim,
                                const SummarizerSchedule& schedule, SummarizerReport* report) {
    if (!(schedule.learning_rate > 0.0)) throw ConfigError("summarizer learning rate must be positive");
    SummaryWeights w = SummaryWeights::init(dim, schedule.seed);
    if (report) *report = {};
    if (schedule.epochs == 0) return w;

    SummaryWeights g;
    double objective = summary_objective(docs, w, &g);
    if (report) report->initial_objective = objective;
    double lr = schedule.learning_rate;
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        const auto finite = [](double v) { return std::isfinite(v); };
        if (!std::all_of(g.w.values().begin(), g.w.values().end(), finite) ||
            !std::all_of(g.u.begin(), g.u.end(), finite)) {
            throw TrainingError("non-finite summarizer gradient at epoch " + std::to_string(epoch));
        }
        for (int attempt = 0; attempt < 40; ++attempt) {
            SummaryWeights cand = w;
            for (std::size_t i = 0; i < cand.w.size(); ++i) cand.w.values()[i] += lr * g.w.values()[i];
            for (std::size_t i = 0; i < dim; ++i) cand.u[i] += lr * g.u[i];
            round_weights(cand);
            const double value = summary_objective(docs, cand);
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite summarizer objective at epoch " + std::to_string(epoch));
            }
            if (value >= objective) {
                w = std::move(cand);
                objective = summary_objective(docs, w, &g);
                break;
            }
            lr *= 0.5;
        }
        if (report) report->epoch_objective.push_back(objective);
    }
    return w;
}

std::vector<SummaryTrainingDoc> prepare_summary_training(const Corpus& corpus, const Tokenizer& tokenizer,
                                                         const EncoderModel& model) {
    std::vector<SummaryTrainingDoc> out;
    for (const auto& doc : corpus.documents()) {
        const auto sentences = split_sentences(doc, tokenizer);
        SummaryTrainingDoc td;
        td.sentences = embed_sentences(sentences, model);
        td.target = encode_document(model, no_prompt(), tokenizer.ids(doc.text), false);
        out.push_back(std::move(td));
    }
    return out;
}

std::string contextualize_chunk(const Chunk& chunk, const Summary* summary) {
    if (!summary) return chunk.text;
    if (summary->doc_id != chunk.doc_id) {
        throw ConfigError("summary of '" + summary->doc_id + "' applied to chunk " + chunk.chunk_id);
    }
    return summary->text + "\n\n" + chunk.text;
}

void write_summaries_jsonl(std::span<const Summary> summaries, std::ostream& out) {
    for (const auto& s : summaries) {
        const nlohmann::json j = {{"doc_id", s.doc_id}, {"selected", s.selected}, {"text", s.text}};
        out << j.dump() << '\n';
    }
}

void write_summaries_jsonl(std::span<const Summary> summaries, const std::filesystem::path& path) {
    std::ostringstream out;
    write_summaries_jsonl(summaries, out);
    write_file(path, out.str());
}

std::vector<Summary> read_summaries_jsonl(std::istream& in) {
    std::vector<Summary> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(where + "invalid JSON: " + e.what());
        }
        out.push_back(summary_from_json(j, where));
    }
    return out;
}

std::vector<Summary> read_summaries_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open summaries file " + path.string());
    return read_summaries_jsonl(in);
}

}  // namespace techembed
