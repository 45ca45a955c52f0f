#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "techembed/corpus.hpp"
#include "techembed/encoder.hpp"
#include "techembed/tensor.hpp"

namespace techembed {

class GenBackend;

struct Sentence {
    std::string doc_id;
    std::size_t ordinal = 0;
    std::string text;
    std::vector<std::uint32_t> token_ids;
};

/// Splits on '.', '!' or '?' followed by whitespace or end of text, and on
/// newlines. Fragments under 3 tokens merge into the previous sentence (or the
/// next one when nothing precedes them). Throws ConfigError on a document
/// without tokens.
std::vector<Sentence> split_sentences(const Document& doc, const Tokenizer& tokenizer);

/// Additive attention parameters: score_s = u . tanh(W e_s).
struct SummaryWeights {
    Matrix w;              // d x d
    std::vector<double> u;  // d

    /// Seeded N(0, 1/d) entries rounded to float32.
    static SummaryWeights init(std::size_t dim, std::uint64_t seed);
    static SummaryWeights zeros(std::size_t dim);

    [[nodiscard]] std::size_t dim() const { return u.size(); }
    /// Throws DimensionError when shapes disagree with each other or `dim`.
    void validate(std::size_t dim) const;

    friend bool operator==(const SummaryWeights&, const SummaryWeights&) = default;
};

struct Summary {
    std::string doc_id;
    std::vector<std::size_t> selected;  // ascending ordinals
    std::string text;
    std::vector<double> weights;  // one per sentence; empty for abstractive summaries
};

/// softmax_s(u . tanh(W e_s)) over the rows of `sentence_embeddings`.
std::vector<double> attention_weights(const Matrix& sentence_embeddings, const SummaryWeights& weights);

/// Sentence embeddings from the base document encoder (no prompt), one row each.
Matrix embed_sentences(std::span<const Sentence> sentences, const EncoderModel& model);

/// Attention weights of every sentence of `doc`.
std::vector<double> attention_scores(const Document& doc, const Tokenizer& tokenizer,
                                     const SummaryWeights& weights, const EncoderModel& model);

/// Picks the m highest-weight sentences (ties to the lower ordinal) and joins
/// them in document order with single spaces.
Summary select_sentences(std::span<const Sentence> sentences, std::span<const double> weights, std::size_t m);

Summary extract_summary(const Document& doc, const Tokenizer& tokenizer, const SummaryWeights& weights,
                        const EncoderModel& model, std::size_t m = 3);

/// Summary written by a generation backend. `selected` and `weights` stay empty.
Summary abstractive_summary(const Document& doc, GenBackend& backend, std::uint64_t seed);

/// One document prepared for summarizer training: unit sentence embeddings
/// (n x d) and the unit embedding of the whole document.
struct SummaryTrainingDoc {
    Matrix sentences;
    std::vector<double> target;
};

/// Mean over documents of cos(sum_s a_s e_s, e_doc). When `grad` is given it
/// receives the gradient with respect to W and u.
double summary_objective(std::span<const SummaryTrainingDoc> docs, const SummaryWeights& weights,
                         SummaryWeights* grad = nullptr);

struct SummarizerSchedule {
    std::size_t epochs = 50;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
};

struct SummarizerReport {
    double initial_objective = 0.0;
    std::vector<double> epoch_objective;
};

/// Full-batch gradient ascent with step halving, so the objective never
/// decreases between epochs.
SummaryWeights train_summarizer(std::span<const SummaryTrainingDoc> docs, std::size_t dim,
                                const SummarizerSchedule& schedule, SummarizerReport* report = nullptr);

/// Embeds every document of the corpus for training.
std::vector<SummaryTrainingDoc> prepare_summary_training(const Corpus& corpus, const Tokenizer& tokenizer,
                                                         const EncoderModel& model);

/// summary.text + "\n\n" + chunk.text, or the chunk text alone when `summary`
/// is null. Throws ConfigError when the summary belongs to another document.
std::string contextualize_chunk(const Chunk& chunk, const Summary* summary);

void write_summaries_jsonl(std::span<const Summary> summaries, std::ostream& out);
void write_summaries_jsonl(std::span<const Summary> summaries, const std::filesystem::path& path);
std::vector<Summary> read_summaries_jsonl(std::istream& in);
std::vector<Summary> read_summaries_jsonl(const std::filesystem::path& path);

}  // namespace techembed
