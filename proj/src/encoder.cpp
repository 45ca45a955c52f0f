#include "techembed/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

Parameter normal_param(const std::string& name, std::size_t rows, std::size_t cols, double stddev,
                       std::uint64_t seed) {
    Rng rng(derive_seed(seed, name));
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = rng.normal() * stddev;
    round_to_float(m);
    return {name, std::move(m)};
}

Parameter const_param(const std::string& name, std::size_t rows, std::size_t cols, double value) {
    return {name, Matrix(rows, cols, value)};
}

Tower init_tower(const EncoderConfig& c, const std::string& prefix) {
    const std::size_t d = c.dim;
    const std::size_t f = c.dim * c.ffn_mult;
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double ffn_scale = 1.0 / std::sqrt(static_cast<double>(f));
    const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(c.layers));
    Tower t;
    t.token_embedding = normal_param(prefix + "token_embedding", c.vocab_size, d, 1.0, c.seed);
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string p = prefix + "layer" + std::to_string(l) + "/";
        LayerWeights w;
        w.ln1_gain = const_param(p + "ln1_gain", 1, d, 1.0);
        w.ln1_bias = const_param(p + "ln1_bias", 1, d, 0.0);
        w.wq = normal_param(p + "wq", d, d, in_scale, c.seed);
        w.bq = const_param(p + "bq", 1, d, 0.0);
        w.wk = normal_param(p + "wk", d, d, in_scale, c.seed);
        w.bk = const_param(p + "bk", 1, d, 0.0);
        w.wv = normal_param(p + "wv", d, d, in_scale, c.seed);
        w.bv = const_param(p + "bv", 1, d, 0.0);
        w.wo = normal_param(p + "wo", d, d, in_scale * residual_scale, c.seed);
        w.bo = const_param(p + "bo", 1, d, 0.0);
        w.ln2_gain = const_param(p + "ln2_gain", 1, d, 1.0);
        w.ln2_bias = const_param(p + "ln2_bias", 1, d, 0.0);
        w.w1 = normal_param(p + "w1", d, f, in_scale, c.seed);
        w.b1 = const_param(p + "b1", 1, f, 0.0);
        w.w2 = normal_param(p + "w2", f, d, ffn_scale * residual_scale, c.seed);
        w.b2 = const_param(p + "b2", 1, d, 0.0);
        t.layers.push_back(std::move(w));
    }
    t.final_gain = const_param(prefix + "final_gain", 1, d, 1.0);
    t.final_bias = const_param(prefix + "final_bias", 1, d, 0.0);
    return t;
}

template <typename TowerT, typename Fn>
void visit_tower(TowerT& t, Fn&& fn) {
    fn(t.token_embedding);
    for (auto& w : t.layers) {
        for (auto* p : {&w.ln1_gain, &w.ln1_bias, &w.wq, &w.bq, &w.wk, &w.bk, &w.wv, &w.bv, &w.wo,
                        &w.bo, &w.ln2_gain, &w.ln2_bias, &w.w1, &w.b1, &w.w2, &w.b2}) {
            fn(*p);
        }
    }
    fn(t.final_gain);
    fn(t.final_bias);
}

// Restores trainable flags on scope exit.
class TrainableGuard {
public:
    TrainableGuard(std::vector<Parameter*> params) : params_(std::move(params)) {
        for (auto* p : params_) saved_.push_back(p->trainable);
    }
    ~TrainableGuard() {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->trainable = saved_[i];
    }
    TrainableGuard(const TrainableGuard&) = delete;
    TrainableGuard& operator=(const TrainableGuard&) = delete;

private:
    std::vector<Parameter*> params_;
    std::vector<bool> saved_;
};

std::vector<Parameter*> all_parameters(EncoderModel& model, SoftPrompt& prompt) {
    auto params = model.parameters();
    params.push_back(&prompt.query);
    params.push_back(&prompt.document);
    return params;
}

TrainReport run_training(EncoderModel& model, SoftPrompt& prompt, std::span<const TrainingPair> pairs,
                         const TrainSchedule& schedule, TrainableSet set, bool use_prompt,
                         const EpochCallback& on_epoch) {
    if (schedule.batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(schedule.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    std::vector<Parameter*> updated;
    if (set == TrainableSet::all) {
        updated = model.parameters();
        if (use_prompt) {
            updated.push_back(&prompt.query);
            updated.push_back(&prompt.document);
        }
    } else {
        updated = {&prompt.query, &prompt.document};
    }
    Adam adam(updated, schedule.learning_rate);
    TrainReport report;
    std::size_t over_limit = 0;
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        const auto batches = make_batches(pairs, schedule.batch_size, derive_seed(schedule.seed, "epoch", epoch));
        if (batches.empty()) throw ConfigError("not enough distinct training pairs for one batch");
        double total = 0.0;
        for (const auto& batch : batches) {
            total += contrastive_loss(batch, model, prompt, set, use_prompt);
            adam.step();
            ++report.steps;
        }
        const double mean = total / static_cast<double>(batches.size());
        report.epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
        if (mean > 10.0 * report.epoch_loss.front()) {
            if (++over_limit >= 2) {
                throw TrainingError("training diverged: epoch " + std::to_string(epoch) + " loss " +
                                    std::to_string(mean) + " exceeds 10x initial loss " +
                                    std::to_string(report.epoch_loss.front()));
            }
        } else {
            over_limit = 0;
        }
    }
    return report;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void EncoderConfig::validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw ConfigError("encoder dim (" + std::to_string(dim) + ") must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
    }
    if (layers == 0) throw ConfigError("encoder needs at least one layer");
    if (vocab_size < 4) throw ConfigError("vocab_size too small");
    if (max_seq == 0) throw ConfigError("max_seq must be positive");
    if (prompt_len == 0) throw ConfigError("prompt_len must be positive");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
    if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"dim", c.dim},           {"vocab_size", c.vocab_size}, {"layers", c.layers},
         {"heads", c.heads},       {"max_seq", c.max_seq},       {"prompt_len", c.prompt_len},
         {"temperature", c.temperature}, {"seed", c.seed},       {"ffn_mult", c.ffn_mult},
         {"share_base", c.share_base}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    EncoderConfig d;
    c.dim = j.value("dim", d.dim);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.layers = j.value("layers", d.layers);
    c.heads = j.value("heads", d.heads);
    c.max_seq = j.value("max_seq", d.max_seq);
    c.prompt_len = j.value("prompt_len", d.prompt_len);
    c.temperature = j.value("temperature", d.temperature);
    c.seed = j.value("seed", d.seed);
    c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
    c.share_base = j.value("share_base", d.share_base);
}

// ---------------------------------------------------------------------------
// Model

void Tower::for_each(const std::function<void(Parameter&)>& fn) { visit_tower(*this, fn); }
void Tower::for_each(const std::function<void(const Parameter&)>& fn) const { visit_tower(*this, fn); }

EncoderModel::EncoderModel(const EncoderConfig& config) : config_(config) {
    config_.validate();
    query_ = init_tower(config_, config_.share_base ? "" : "query/");
    if (!config_.share_base) document_ = std::make_unique<Tower>(init_tower(config_, "document/"));
    positions_ = sinusoidal_positions(config_.max_seq, config_.dim);
}

EncoderModel::EncoderModel(const EncoderModel& other)
    : config_(other.config_),
      query_(other.query_),
      document_(other.document_ ? std::make_unique<Tower>(*other.document_) : nullptr),
      positions_(other.positions_),
      truncations_(other.truncations_.load()) {}

EncoderModel& EncoderModel::operator=(const EncoderModel& other) {
    if (this != &other) {
        config_ = other.config_;
        query_ = other.query_;
        document_ = other.document_ ? std::make_unique<Tower>(*other.document_) : nullptr;
        positions_ = other.positions_;
        truncations_ = other.truncations_.load();
    }
    return *this;
}

std::vector<Parameter*> EncoderModel::parameters() {
    std::vector<Parameter*> out;
    query_.for_each([&](Parameter& p) { out.push_back(&p); });
    if (document_) document_->for_each([&](Parameter& p) { out.push_back(&p); });
    return out;
}

std::vector<const Parameter*> EncoderModel::parameters() const {
    std::vector<const Parameter*> out;
    query_.for_each([&](const Parameter& p) { out.push_back(&p); });
    if (document_) document_->for_each([&](const Parameter& p) { out.push_back(&p); });
    return out;
}

std::size_t EncoderModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

SoftPrompt SoftPrompt::init(const EncoderConfig& config) {
    SoftPrompt sp;
    sp.query = normal_param("prompt_q", config.prompt_len, config.dim, 1.0, config.seed);
    sp.document = normal_param("prompt_d", config.prompt_len, config.dim, 1.0, config.seed);
    return sp;
}

// ---------------------------------------------------------------------------
// Encoding

Var encode_on_tape(Tape& tape, EncoderModel& model, SoftPrompt& prompt, Side side,
                   std::span<const std::uint32_t> tokens, bool use_prompt) {
    const auto& cfg = model.config();
    if (tokens.empty()) throw ConfigError("cannot encode an empty token sequence");
    if (tokens.size() > cfg.max_seq) {
        model.note_truncation();
        tokens = tokens.first(cfg.max_seq);
    }
    Tower& tower = side == Side::query ? model.query_tower() : model.document_tower();
    Parameter& prompt_rows = side == Side::query ? prompt.query : prompt.document;
    if (use_prompt && (prompt_rows.value.rows() != cfg.prompt_len || prompt_rows.value.cols() != cfg.dim)) {
        throw DimensionError("soft prompt is " + prompt_rows.value.shape_string() + ", expected " +
                             std::to_string(cfg.prompt_len) + "x" + std::to_string(cfg.dim));
    }

    Matrix pos(tokens.size(), cfg.dim);
    std::copy_n(model.positions().data(), pos.size(), pos.data());
    Var x = ad::add_const(ad::embed(tape, tower.token_embedding, tokens), pos);
    if (use_prompt) x = ad::concat_rows(ad::rows_of(tape, prompt_rows), x);

    for (auto& w : tower.layers) {
        const Var h = ad::layer_norm(x, w.ln1_gain, w.ln1_bias);
        const Var q = ad::linear(h, w.wq, w.bq);
        const Var k = ad::linear(h, w.wk, w.bk);
        const Var v = ad::linear(h, w.wv, w.bv);
        const Var attn = ad::multi_head_attention(q, k, v, cfg.heads);
        x = ad::add(x, ad::linear(attn, w.wo, w.bo));
        const Var h2 = ad::layer_norm(x, w.ln2_gain, w.ln2_bias);
        const Var ff = ad::linear(ad::gelu(ad::linear(h2, w.w1, w.b1)), w.w2, w.b2);
        x = ad::add(x, ff);
    }
    x = ad::layer_norm(x, tower.final_gain, tower.final_bias);
    const Var pooled = ad::mean_rows(x, use_prompt ? cfg.prompt_len : 0);
    return ad::l2_normalize_rows(pooled);
}

std::vector<double> encode(const EncoderModel& model, const SoftPrompt& prompt, Side side,
                           std::span<const std::uint32_t> tokens, bool use_prompt) {
    // A tape without gradients never writes to parameters.
    Tape tape(false);
    const Var out = encode_on_tape(tape, const_cast<EncoderModel&>(model), const_cast<SoftPrompt&>(prompt),
                                   side, tokens, use_prompt);
    return out.value().values();
}

double similarity(std::span<const double> a, std::span<const double> b) { return dot(a, b); }

// ---------------------------------------------------------------------------
// Loss

void TrainBatch::validate() const {
    if (pairs.size() < 2) throw ConfigError("a contrastive batch needs at least 2 pairs");
    std::unordered_set<std::string> keys;
    for (const auto* p : pairs) {
        if (!keys.insert(p->doc_key).second) {
            throw ConfigError("batch holds document '" + p->doc_key + "' twice");
        }
    }
}

double contrastive_loss_from_similarities(const Matrix& sims, double temperature) {
    const std::size_t n = sims.rows();
    if (n == 0 || sims.cols() < n) throw DimensionError("similarity matrix must be B x B");
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < sims.cols(); ++j) mx = std::max(mx, sims(i, j) / temperature);
        double z = 0.0;
        for (std::size_t j = 0; j < sims.cols(); ++j) z += std::exp(sims(i, j) / temperature - mx);
        loss += mx + std::log(z) - sims(i, i) / temperature;
    }
    return loss / static_cast<double>(n);
}

double contrastive_loss(const TrainBatch& batch, EncoderModel& model, SoftPrompt& prompt,
                        TrainableSet trainable, bool use_prompt) {
    batch.validate();
    const auto params = all_parameters(model, prompt);
    TrainableGuard guard(params);
    for (auto* p : model.parameters()) p->trainable = trainable == TrainableSet::all;
    prompt.query.trainable = use_prompt;
    prompt.document.trainable = use_prompt;
    for (auto* p : params) {
        if (p->trainable) p->zero_grad();
    }

    Tape tape(true);
    std::vector<Var> queries, docs;
    for (const auto* pair : batch.pairs) {
        queries.push_back(encode_on_tape(tape, model, prompt, Side::query, pair->query, use_prompt));
        docs.push_back(encode_on_tape(tape, model, prompt, Side::document, pair->document, use_prompt));
    }
    const Var sims = ad::matmul_nt(ad::stack_rows(queries), ad::stack_rows(docs));
    const Var logits = ad::scale(sims, 1.0 / model.config().temperature);
    const Var loss = ad::softmax_cross_entropy_diagonal(logits);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) {
        std::string ids;
        for (const auto* p : batch.pairs) ids += " " + p->doc_key;
        throw TrainingError("non-finite contrastive loss on batch of " + std::to_string(batch.pairs.size()) +
                            " pairs (documents:" + ids + ")");
    }
    if (tape.needs_grad(loss)) tape.backward(loss);
    return value;
}

// ---------------------------------------------------------------------------
// Optimization

void round_to_float(Matrix& m) {
    for (auto& v : m.values()) v = static_cast<double>(static_cast<float>(v));
}

Adam::Adam(std::vector<Parameter*> params, double learning_rate) : lr_(learning_rate) {
    for (auto* p : params) {
        slots_.push_back({p, std::vector<double>(p->value.size(), 0.0), std::vector<double>(p->value.size(), 0.0)});
    }
}

void Adam::step() {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (auto& slot : slots_) {
        auto& p = *slot.param;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        double* w = p.value.data();
        const double* g = p.grad.data();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw TrainingError("non-finite gradient in " + p.name);
            }
            slot.m[i] = kBeta1 * slot.m[i] + (1.0 - kBeta1) * g[i];
            slot.v[i] = kBeta2 * slot.v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double mhat = slot.m[i] / c1;
            const double vhat = slot.v[i] / c2;
            w[i] = static_cast<double>(static_cast<float>(w[i] - lr_ * mhat / (std::sqrt(vhat) + kEps)));
        }
    }
}

std::vector<TrainBatch> make_batches(std::span<const TrainingPair> pairs, std::size_t batch_size,
                                     std::uint64_t seed) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<TrainBatch> batches;
    std::vector<std::size_t> remaining = std::move(order);
    while (!remaining.empty()) {
        TrainBatch batch;
        std::unordered_set<std::string_view> keys;
        std::vector<std::size_t> rest;
        for (const std::size_t idx : remaining) {
            const auto& pair = pairs[idx];
            if (batch.pairs.size() < batch_size && keys.insert(pair.doc_key).second) {
                batch.pairs.push_back(&pair);
            } else {
                rest.push_back(idx);
            }
        }
        if (batch.pairs.size() >= 2) batches.push_back(std::move(batch));
        if (rest.size() == remaining.size()) break;
        remaining = std::move(rest);
    }
    return batches;
}

TrainReport pretrain(EncoderModel& model, SoftPrompt& prompt, std::span<const TrainingPair> pairs,
                     const TrainSchedule& schedule, const EpochCallback& on_epoch) {
    return run_training(model, prompt, pairs, schedule, TrainableSet::all, false, on_epoch);
}

TrainReport prompt_tune(EncoderModel& model, SoftPrompt& prompt, std::span<const TrainingPair> pairs,
                        const TrainSchedule& schedule, const EpochCallback& on_epoch) {
    return run_training(model, prompt, pairs, schedule, TrainableSet::prompts_only, true, on_epoch);
}

}  // namespace techembed
