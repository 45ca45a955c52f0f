#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

#include "techembed/autodiff.hpp"

namespace techembed {

struct EncoderConfig {
    std::size_t dim = 64;
    std::uint32_t vocab_size = 8192;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t max_seq = 320;
    std::size_t prompt_len = 8;
    double temperature = 0.05;
    std::uint64_t seed = 0;
    /// Feed-forward width as a multiple of dim.
    std::size_t ffn_mult = 4;
    /// When false the query and document towers get separate base weights.
    bool share_base = true;

    /// Throws ConfigError on inconsistent values.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

struct LayerWeights {
    Parameter ln1_gain, ln1_bias;
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln2_gain, ln2_bias;
    Parameter w1, b1, w2, b2;
};

/// One transformer tower: token embeddings, pre-norm layers, final norm.
struct Tower {
    Parameter token_embedding;
    std::vector<LayerWeights> layers;
    Parameter final_gain, final_bias;

    void for_each(const std::function<void(Parameter&)>& fn);
    void for_each(const std::function<void(const Parameter&)>& fn) const;
};

/// Base encoder weights (E_q and E_d). Frozen during prompt tuning.
class EncoderModel {
public:
    /// Seeded initialization.
    explicit EncoderModel(const EncoderConfig& config);
    EncoderModel(const EncoderModel& other);
    EncoderModel& operator=(const EncoderModel& other);

    [[nodiscard]] const EncoderConfig& config() const { return config_; }
    Tower& query_tower() { return query_; }
    Tower& document_tower() { return config_.share_base ? query_ : *document_; }
    [[nodiscard]] const Tower& query_tower() const { return query_; }
    [[nodiscard]] const Tower& document_tower() const { return config_.share_base ? query_ : *document_; }
    [[nodiscard]] const Matrix& positions() const { return positions_; }

    /// Every base tensor in a fixed order.
    std::vector<Parameter*> parameters();
    [[nodiscard]] std::vector<const Parameter*> parameters() const;
    [[nodiscard]] std::size_t parameter_count() const;

    /// Overlong inputs truncated so far.
    [[nodiscard]] std::uint64_t truncation_count() const { return truncations_.load(); }
    void note_truncation() const { truncations_.fetch_add(1); }

private:
    EncoderConfig config_;
    Tower query_;
    std::unique_ptr<Tower> document_;
    Matrix positions_;
    mutable std::atomic<std::uint64_t> truncations_{0};
};

/// Trainable prompt rows prepended to query (P_q) and document (P_d) inputs.
struct SoftPrompt {
    Parameter query;
    Parameter document;

    /// Seeded initialization, k x d each.
    static SoftPrompt init(const EncoderConfig& config);
};

enum class Side { query, document };
enum class TrainableSet { all, prompts_only };

/// Builds the pooled, L2-normalized embedding of one sequence on a tape.
Var encode_on_tape(Tape& tape, EncoderModel& model, SoftPrompt& prompt, Side side,
                   std::span<const std::uint32_t> tokens, bool use_prompt);

/// Unit-norm embedding. Inputs longer than max_seq are truncated and counted.
std::vector<double> encode(const EncoderModel& model, const SoftPrompt& prompt, Side side,
                           std::span<const std::uint32_t> tokens, bool use_prompt);

inline std::vector<double> encode_query(const EncoderModel& model, const SoftPrompt& prompt,
                                        std::span<const std::uint32_t> tokens, bool use_prompt) {
    return encode(model, prompt, Side::query, tokens, use_prompt);
}
inline std::vector<double> encode_document(const EncoderModel& model, const SoftPrompt& prompt,
                                           std::span<const std::uint32_t> tokens, bool use_prompt) {
    return encode(model, prompt, Side::document, tokens, use_prompt);
}

/// Dot product of two unit vectors. Throws DimensionError on length mismatch.
double similarity(std::span<const double> a, std::span<const double> b);

/// A (query, positive document) pair in token ids. doc_key identifies the
/// document so batches never hold the same positive twice.
struct TrainingPair {
    std::vector<std::uint32_t> query;
    std::vector<std::uint32_t> document;
    std::string doc_key;
};

/// In-batch negatives: every other pair's document is a negative.
struct TrainBatch {
    std::vector<const TrainingPair*> pairs;

    /// Throws ConfigError when B < 2 or two pairs share a document.
    void validate() const;
};

/// Mean over i of -log softmax_j(sim(q_i, d_j) / tau)[i] given the B x B
/// similarity matrix. Reference formula used by tests and diagnostics.
double contrastive_loss_from_similarities(const Matrix& sims, double temperature);

/// Loss of the batch. Gradients of every parameter in `trainable` accumulate
/// into Parameter::grad (zeroed first). Parameters outside the set are marked
/// non-trainable for the duration of the call and keep their grads untouched.
/// Throws TrainingError on a non-finite loss.
double contrastive_loss(const TrainBatch& batch, EncoderModel& model, SoftPrompt& prompt,
                        TrainableSet trainable, bool use_prompt);

struct TrainSchedule {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    std::size_t steps = 0;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8). After every step parameters are
/// rounded to float32 so that checkpoints store them losslessly.
class Adam {
public:
    Adam(std::vector<Parameter*> params, double learning_rate);
    void step();

private:
    struct Slot {
        Parameter* param;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    double lr_;
    std::uint64_t t_ = 0;
};

/// Shuffles pairs by seed and greedily packs batches of `batch_size` with
/// distinct documents. Batches smaller than 2 are dropped.
std::vector<TrainBatch> make_batches(std::span<const TrainingPair> pairs, std::size_t batch_size,
                                     std::uint64_t seed);

/// Observer called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Pre-training stage: all base parameters trained, prompts disabled.
/// Aborts with TrainingError when the epoch loss exceeds 10x the first
/// epoch's loss for two consecutive epochs.
TrainReport pretrain(EncoderModel& model, SoftPrompt& prompt, std::span<const TrainingPair> pairs,
                     const TrainSchedule& schedule, const EpochCallback& on_epoch = {});

/// Fine-tuning stage: only P_q and P_d are updated; base weights stay bitwise
/// identical.
TrainReport prompt_tune(EncoderModel& model, SoftPrompt& prompt, std::span<const TrainingPair> pairs,
                        const TrainSchedule& schedule, const EpochCallback& on_epoch = {});

/// Rounds every entry to the nearest float32.
void round_to_float(Matrix& m);

}  // namespace techembed
