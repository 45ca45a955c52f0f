#include <doctest.h>
#include <cstring>

#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>

#include "gradcheck.hpp"
#include "techembed/encoder.hpp"
#include "techembed/error.hpp"
#include "techembed/util.hpp"

using namespace techembed;
using techembed::testing::GradCheckResult;

namespace {

Parameter random_param(const std::string& name, std::size_t r, std::size_t c, std::uint64_t seed,
                       double stddev = 1.0) {
    Rng rng(derive_seed(seed, name));
    Matrix m(r, c);
    for (auto& v : m.values()) v = rng.normal() * stddev;
    return {name, std::move(m)};
}

/// Checks d(sum(R * f(params)))/d(params) against central differences.
double op_gradcheck(std::vector<Parameter*> params, const std::function<Var(Tape&)>& f, double h = 1e-5) {
    Matrix weights;
    {
        Tape probe(false);
        const Matrix& out = f(probe).value();
        weights = Matrix(out.rows(), out.cols());
        Rng rng(99);
        for (auto& w : weights.values()) w = rng.normal();
    }
    for (auto* p : params) {
        p->trainable = true;
        p->zero_grad();
    }
    Tape tape(true);
    tape.backward(f(tape), weights);
    const auto loss = [&] {
        Tape t(false);
        const Matrix& out = f(t).value();
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * weights.values()[i];
        return s;
    };
    GradCheckResult res;
    for (auto* p : params) {
        const Matrix analytic = p->grad;
        techembed::testing::check_entries(*p, analytic, techembed::testing::all_entries(*p), h, loss, res);
    }
    INFO(res.worst);
    return res.max_rel_error;
}

EncoderConfig tiny_config(bool share = true) {
    EncoderConfig c;
    c.dim = 8;
    c.heads = 2;
    c.layers = 2;
    c.vocab_size = 32;
    c.max_seq = 16;
    c.prompt_len = 2;
    c.seed = 7;
    c.share_base = share;
    return c;
}

std::vector<TrainingPair> tiny_pairs(std::size_t n, std::uint32_t vocab, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainingPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
        TrainingPair p;
        const std::size_t lq = 2 + rng.uniform_index(4);
        const std::size_t ld = 3 + rng.uniform_index(6);
        for (std::size_t j = 0; j < lq; ++j) p.query.push_back(static_cast<std::uint32_t>(rng.uniform_index(vocab)));
        for (std::size_t j = 0; j < ld; ++j) p.document.push_back(static_cast<std::uint32_t>(rng.uniform_index(vocab)));
        p.doc_key = "doc" + std::to_string(i);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

double norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

}  // namespace

TEST_CASE("autodiff ops match finite differences") {
    auto a = random_param("a", 3, 4, 1);
    auto b = random_param("b", 3, 4, 2);
    auto w = random_param("w", 4, 6, 3);
    auto bias = random_param("bias", 1, 6, 4);
    auto gain = random_param("gain", 1, 4, 5);
    auto lnb = random_param("lnb", 1, 4, 6);
    auto table = random_param("table", 5, 4, 7);
    const std::vector<std::uint32_t> ids{3, 1, 3, 0};

    CHECK(op_gradcheck({&a, &b}, [&](Tape& t) { return ad::add(ad::rows_of(t, a), ad::rows_of(t, b)); }) < 1e-7);
    CHECK(op_gradcheck({&a}, [&](Tape& t) { return ad::scale(ad::add_const(ad::rows_of(t, a), b.value), -2.5); }) <
          1e-7);
    CHECK(op_gradcheck({&a, &b}, [&](Tape& t) { return ad::concat_rows(ad::rows_of(t, a), ad::rows_of(t, b)); }) <
          1e-7);
    CHECK(op_gradcheck({&table}, [&](Tape& t) { return ad::embed(t, table, ids); }) < 1e-7);
    CHECK(op_gradcheck({&a, &w, &bias}, [&](Tape& t) { return ad::linear(ad::rows_of(t, a), w, bias); }) < 1e-7);
    CHECK(op_gradcheck({&a, &gain, &lnb}, [&](Tape& t) { return ad::layer_norm(ad::rows_of(t, a), gain, lnb); }) <
          1e-6);
    CHECK(op_gradcheck({&a}, [&](Tape& t) { return ad::gelu(ad::rows_of(t, a)); }) < 1e-6);
    CHECK(op_gradcheck({&a}, [&](Tape& t) { return ad::mean_rows(ad::rows_of(t, a), 1); }) < 1e-7);
    CHECK(op_gradcheck({&a}, [&](Tape& t) { return ad::l2_normalize_rows(ad::rows_of(t, a)); }) < 1e-6);
    CHECK(op_gradcheck({&a, &b}, [&](Tape& t) { return ad::matmul_nt(ad::rows_of(t, a), ad::rows_of(t, b)); }) <
          1e-7);
    CHECK(op_gradcheck({&a, &b},
                       [&](Tape& t) {
                           const Var ra = ad::rows_of(t, a);
                           const Var rb = ad::rows_of(t, b);
                           return ad::multi_head_attention(ra, rb, ad::add(ra, rb), 2);
                       }) < 1e-6);
    CHECK(op_gradcheck({&a}, [&](Tape& t) { return ad::softmax_cross_entropy_diagonal(ad::rows_of(t, a)); }) <
          1e-6);
    CHECK(op_gradcheck({&a, &b},
                       [&](Tape& t) {
                           const std::vector<Var> rows{ad::mean_rows(ad::rows_of(t, a), 0),
                                                       ad::mean_rows(ad::rows_of(t, b), 2)};
                           return ad::stack_rows(rows);
                       }) < 1e-7);
}

TEST_CASE("autodiff rejects shape errors") {
    auto a = random_param("a", 3, 4, 1);
    auto w = random_param("w", 5, 2, 3);
    auto bias = random_param("bias", 1, 2, 4);
    auto table = random_param("table", 5, 4, 7);
    Tape t;
    CHECK_THROWS_AS(ad::linear(ad::rows_of(t, a), w, bias), DimensionError);
    const std::vector<std::uint32_t> bad{9};
    CHECK_THROWS_AS(ad::embed(t, table, bad), DimensionError);
    CHECK_THROWS_AS(ad::multi_head_attention(ad::rows_of(t, a), ad::rows_of(t, a), ad::rows_of(t, a), 3),
                    DimensionError);
}

TEST_CASE("similarity examples") {
    const std::vector<double> q{1.0, 0.0};
    const std::vector<double> d{std::sqrt(2.0) / 2.0, std::sqrt(2.0) / 2.0};
    CHECK(similarity(q, d) == doctest::Approx(0.7071).epsilon(1e-4));
    CHECK(similarity(q, q) == 1.0);
    CHECK(similarity(q, std::vector<double>{0.0, 1.0}) == 0.0);
    CHECK(similarity(q, d) == similarity(d, q));
    CHECK_THROWS_AS(similarity(q, std::vector<double>{1.0, 0.0, 0.0}), DimensionError);
}

TEST_CASE("contrastive loss reference values") {
    Matrix uniform(2, 2, 0.3);
    CHECK(contrastive_loss_from_similarities(uniform, 0.05) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Matrix uniform5(5, 5, -0.2);
    CHECK(contrastive_loss_from_similarities(uniform5, 0.05) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    // Logits after division by tau: [2, 0] for the positive row.
    Matrix one(1, 2);
    one(0, 0) = 2.0;
    one(0, 1) = 0.0;
    CHECK(contrastive_loss_from_similarities(one, 1.0) == doctest::Approx(0.126928).epsilon(1e-6));
    CHECK(-std::log(std::exp(2.0) / (std::exp(2.0) + 1.0)) == doctest::Approx(0.126928).epsilon(1e-6));

    Tape t(false);
    const Var v = ad::softmax_cross_entropy_diagonal(t.constant(uniform));
    CHECK(v.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("contrastive loss agrees with the reference formula and is non-negative") {
    const auto cfg = tiny_config();
    EncoderModel model(cfg);
    auto prompt = SoftPrompt::init(cfg);
    const auto pairs = tiny_pairs(4, cfg.vocab_size, 3);
    TrainBatch batch;
    for (const auto& p : pairs) batch.pairs.push_back(&p);
    for (const bool use_prompt : {false, true}) {
        const double loss = contrastive_loss(batch, model, prompt, TrainableSet::all, use_prompt);
        Matrix sims(4, 4);
        for (std::size_t i = 0; i < 4; ++i) {
            const auto q = encode_query(model, prompt, pairs[i].query, use_prompt);
            for (std::size_t j = 0; j < 4; ++j) {
                sims(i, j) = similarity(q, encode_document(model, prompt, pairs[j].document, use_prompt));
            }
        }
        CHECK(loss == doctest::Approx(contrastive_loss_from_similarities(sims, cfg.temperature)).epsilon(1e-10));
        CHECK(loss >= 0.0);
    }
}

TEST_CASE("batch validation") {
    const auto pairs = tiny_pairs(3, 32, 1);
    TrainBatch batch;
    batch.pairs.push_back(&pairs[0]);
    CHECK_THROWS_AS(batch.validate(), ConfigError);
    TrainingPair dup = pairs[1];
    dup.doc_key = pairs[0].doc_key;
    batch.pairs.push_back(&dup);
    CHECK_THROWS_AS(batch.validate(), ConfigError);
}

TEST_CASE("gradient check on a d=8, k=2, B=3 instance") {
    for (const bool share : {true, false}) {
        const auto cfg = tiny_config(share);
        EncoderModel model(cfg);
        auto prompt = SoftPrompt::init(cfg);
        const auto pairs = tiny_pairs(3, cfg.vocab_size, 11);
        TrainBatch batch;
        for (const auto& p : pairs) batch.pairs.push_back(&p);

        SUBCASE("prompts only") {
            contrastive_loss(batch, model, prompt, TrainableSet::prompts_only, true);
            const Matrix gq = prompt.query.grad;
            const Matrix gd = prompt.document.grad;
            const auto loss = [&] {
                return contrastive_loss(batch, model, prompt, TrainableSet::prompts_only, true);
            };
            GradCheckResult res;
            techembed::testing::check_entries(prompt.query, gq, techembed::testing::all_entries(prompt.query),
                                              1e-3, loss, res);
            techembed::testing::check_entries(prompt.document, gd,
                                              techembed::testing::all_entries(prompt.document), 1e-3, loss, res);
            INFO(res.worst);
            CHECK(res.checked == 2 * cfg.prompt_len * cfg.dim);
            CHECK(res.max_rel_error < 1e-4);
        }
        // Some GELU-path entries carry ~3e-4 truncation error at h=1e-3, and key
        // biases have an exactly zero gradient, so compare those absolutely.
        SUBCASE("full training, every parameter at h=1e-4") {
            contrastive_loss(batch, model, prompt, TrainableSet::all, true);
            std::vector<std::pair<Parameter*, Matrix>> grads;
            for (auto* p : model.parameters()) grads.emplace_back(p, p->grad);
            grads.emplace_back(&prompt.query, prompt.query.grad);
            grads.emplace_back(&prompt.document, prompt.document.grad);
            const auto loss = [&] { return contrastive_loss(batch, model, prompt, TrainableSet::all, true); };
            GradCheckResult res;
            for (auto& [p, g] : grads) {
                techembed::testing::check_entries(*p, g, techembed::testing::all_entries(*p), 1e-4, loss, res, 1e-6);
            }
            INFO(res.worst);
            MESSAGE("max relative error over " << res.checked << " entries: " << res.max_rel_error);
            CHECK(res.max_rel_error < 1e-4);
        }
        SUBCASE("full training samples 1% of base parameters") {
            contrastive_loss(batch, model, prompt, TrainableSet::all, true);
            std::vector<std::pair<Parameter*, Matrix>> grads;
            for (auto* p : model.parameters()) grads.emplace_back(p, p->grad);
            grads.emplace_back(&prompt.query, prompt.query.grad);
            grads.emplace_back(&prompt.document, prompt.document.grad);
            const auto loss = [&] { return contrastive_loss(batch, model, prompt, TrainableSet::all, true); };
            GradCheckResult res;
            for (auto& [p, g] : grads) {
                const bool is_prompt = p == &prompt.query || p == &prompt.document;
                const auto entries = is_prompt ? techembed::testing::all_entries(*p)
                                               : techembed::testing::sample_entries(*p, 0.01, 5);
                techembed::testing::check_entries(*p, g, entries, 1e-3, loss, res);
            }
            INFO(res.worst);
            CHECK(res.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("prompts only leaves base gradients untouched") {
    const auto cfg = tiny_config();
    EncoderModel model(cfg);
    auto prompt = SoftPrompt::init(cfg);
    const auto pairs = tiny_pairs(3, cfg.vocab_size, 2);
    TrainBatch batch;
    for (const auto& p : pairs) batch.pairs.push_back(&p);
    for (auto* p : model.parameters()) p->grad = Matrix();
    contrastive_loss(batch, model, prompt, TrainableSet::prompts_only, true);
    for (auto* p : model.parameters()) CHECK(p->grad.empty());
    for (auto* p : model.parameters()) CHECK(p->trainable);
}

TEST_CASE("encoder contracts") {
    const auto cfg = tiny_config();
    EncoderModel model(cfg);
    auto prompt = SoftPrompt::init(cfg);
    const std::vector<std::uint32_t> tokens{1, 5, 9, 2, 30};

    SUBCASE("unit norm") {
        Rng rng(4);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<std::uint32_t> seq(1 + rng.uniform_index(cfg.max_seq));
            for (auto& id : seq) id = static_cast<std::uint32_t>(rng.uniform_index(cfg.vocab_size));
            for (const bool use_prompt : {false, true}) {
                CHECK(std::abs(norm(encode_query(model, prompt, seq, use_prompt)) - 1.0) <= 1e-9);
                CHECK(std::abs(norm(encode_document(model, prompt, seq, use_prompt)) - 1.0) <= 1e-9);
            }
        }
    }
    SUBCASE("prompt bypass") {
        const auto before_q = encode_query(model, prompt, tokens, false);
        const auto before_d = encode_document(model, prompt, tokens, false);
        auto other = prompt;
        for (auto& v : other.query.value.values()) v *= -3.0;
        for (auto& v : other.document.value.values()) v += 1.0;
        CHECK(encode_query(model, other, tokens, false) == before_q);
        CHECK(encode_document(model, other, tokens, false) == before_d);
        CHECK(encode_query(model, other, tokens, true) != encode_query(model, prompt, tokens, true));
    }
    SUBCASE("determinism") {
        EncoderModel again(cfg);
        const auto p2 = SoftPrompt::init(cfg);
        CHECK(encode_query(model, prompt, tokens, true) == encode_query(again, p2, tokens, true));
        CHECK(encode_document(model, prompt, tokens, false) == encode_document(again, p2, tokens, false));
    }
    SUBCASE("query and document sides use different prompts") {
        CHECK(encode_query(model, prompt, tokens, true) != encode_document(model, prompt, tokens, true));
        CHECK(encode_query(model, prompt, tokens, false) == encode_document(model, prompt, tokens, false));
    }
    SUBCASE("truncation is counted, not an error") {
        std::vector<std::uint32_t> longer(cfg.max_seq + 5, 3);
        const auto n0 = model.truncation_count();
        const auto v = encode_query(model, prompt, longer, false);
        CHECK(model.truncation_count() == n0 + 1);
        longer.resize(cfg.max_seq);
        CHECK(v == encode_query(model, prompt, longer, false));
    }
    SUBCASE("empty input") { CHECK_THROWS_AS(encode_query(model, prompt, {}, false), ConfigError); }
}

TEST_CASE("config validation and parameter count") {
    EncoderConfig c = tiny_config();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.temperature = 0.0;
    CHECK_THROWS_AS(EncoderModel{c}, ConfigError);

    c = tiny_config();
    const std::size_t d = c.dim, f = c.dim * c.ffn_mult;
    const std::size_t per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
    const std::size_t expected = c.vocab_size * d + c.layers * per_layer + 2 * d;
    CHECK(EncoderModel(c).parameter_count() == expected);
    c.share_base = false;
    CHECK(EncoderModel(c).parameter_count() == 2 * expected);

    nlohmann::json j = tiny_config();
    CHECK(j.get<EncoderConfig>() == tiny_config());
}

TEST_CASE("initial parameters are finite float32 values") {
    EncoderModel model(tiny_config());
    for (const auto* p : model.parameters()) {
        for (const double v : p->value.values()) {
            CHECK(std::isfinite(v));
            CHECK(static_cast<double>(static_cast<float>(v)) == v);
        }
    }
}

TEST_CASE("make_batches packs distinct documents") {
    auto pairs = tiny_pairs(40, 32, 9);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].doc_key = "doc" + std::to_string(i % 7);
    const auto batches = make_batches(pairs, 5, 1);
    std::size_t total = 0;
    for (const auto& b : batches) {
        CHECK_NOTHROW(b.validate());
        CHECK(b.pairs.size() <= 5);
        total += b.pairs.size();
    }
    CHECK(total >= pairs.size() - 1);
    const auto again = make_batches(pairs, 5, 1);
    REQUIRE(again.size() == batches.size());
    for (std::size_t i = 0; i < batches.size(); ++i) CHECK(again[i].pairs == batches[i].pairs);
}

TEST_CASE("training") {
    auto cfg = tiny_config();
    cfg.vocab_size = 64;
    const auto pairs = tiny_pairs(24, cfg.vocab_size, 21);

    SUBCASE("epochs=0 keeps the seeded init") {
        EncoderModel model(cfg);
        auto prompt = SoftPrompt::init(cfg);
        TrainSchedule s;
        s.epochs = 0;
        const auto report = pretrain(model, prompt, pairs, s);
        CHECK(report.steps == 0);
        const EncoderModel fresh(cfg);
        const auto a = model.parameters();
        const auto b = fresh.parameters();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
    }
    SUBCASE("pretraining lowers the loss and is deterministic") {
        TrainSchedule s;
        s.epochs = 15;
        s.batch_size = 8;
        s.learning_rate = 1e-2;
        s.seed = 3;
        EncoderModel m1(cfg), m2(cfg);
        auto p1 = SoftPrompt::init(cfg), p2 = SoftPrompt::init(cfg);
        std::vector<double> seen;
        const auto r1 = pretrain(m1, p1, pairs, s, [&](std::size_t, double l) { seen.push_back(l); });
        const auto r2 = pretrain(m2, p2, pairs, s);
        CHECK(r1.epoch_loss.back() < r1.epoch_loss.front());
        CHECK(seen == r1.epoch_loss);
        CHECK(r1.epoch_loss == r2.epoch_loss);
        const auto a = m1.parameters();
        const auto b = m2.parameters();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
        CHECK(p1.query.value == SoftPrompt::init(cfg).query.value);
    }
    SUBCASE("prompt tuning freezes base weights") {
        EncoderModel model(cfg);
        auto prompt = SoftPrompt::init(cfg);
        const EncoderModel before = model;
        const SoftPrompt prompt_before = prompt;
        TrainSchedule s;
        s.epochs = 3;
        s.batch_size = 6;
        s.learning_rate = 1e-2;
        prompt_tune(model, prompt, pairs, s);
        const auto a = model.parameters();
        const auto b = before.parameters();
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(std::memcmp(a[i]->value.data(), b[i]->value.data(), a[i]->value.size() * sizeof(double)) == 0);
        }
        CHECK(prompt.query.value != prompt_before.query.value);
        CHECK(prompt.document.value != prompt_before.document.value);
    }
    SUBCASE("bad schedule") {
        EncoderModel model(cfg);
        auto prompt = SoftPrompt::init(cfg);
        TrainSchedule s;
        s.batch_size = 1;
        CHECK_THROWS_AS(pretrain(model, prompt, pairs, s), ConfigError);
    }
}
