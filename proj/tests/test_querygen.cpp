#include <doctest.h>

#include <atomic>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "entropy_oracle.hpp"
#include "techembed/querygen.hpp"
#include "techembed/util.hpp"

using namespace techembed;

namespace {

Corpus three_chunk_corpus() {
    Corpus corpus({{"d1", "", "Timing constraints bound the clock period. Timing paths need constraints.", {}},
                   {"d2", "", "The router assigns tracks to nets and avoids congestion in dense regions.", {}},
                   {"d3", "", "Placement spreads cells to reduce wirelength and congestion of the die.", {}}});
    corpus.chunk(Tokenizer(), {64, 8});
    return corpus;
}

class FlakyBackend final : public GenBackend {
public:
    explicit FlakyBackend(int fail_at) : fail_at_(fail_at) {}
    [[nodiscard]] BackendKind kind() const override { return BackendKind::remote; }
    std::string generate(const GenRequest& req) override {
        if (++calls_ == fail_at_) throw BackendError("boom", 503);
        return "What about " + req.slots.at("kw1").front() + " " + std::to_string(calls_) + "?";
    }

private:
    int fail_at_;
    std::atomic<int> calls_{0};
};

}  // namespace

TEST_CASE("query_entropy: closed-form cases") {
    CHECK(query_entropy("alpha beta gamma delta") == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(query_entropy("a a a") == 0.0);
    CHECK(query_entropy("a a b b") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(query_entropy("single") == 0.0);
    CHECK_THROWS_AS(query_entropy("  "), ConfigError);
}

TEST_CASE("diversity: mean of entropies, duplication and permutation invariant") {
    const std::vector<SyntheticQuery> qs{{"q1", "w x y z", "c", Provenance::real},
                                         {"q2", "a a b b", "c", Provenance::real}};
    CHECK(diversity(qs) == doctest::Approx(1.5).epsilon(1e-12));
    auto doubled = qs;
    doubled.insert(doubled.end(), qs.begin(), qs.end());
    CHECK(diversity(doubled) == doctest::Approx(diversity(qs)).epsilon(1e-15));
    std::vector<SyntheticQuery> reversed(qs.rbegin(), qs.rend());
    CHECK(diversity(reversed) == doctest::Approx(diversity(qs)).epsilon(1e-15));
    CHECK_THROWS_AS(diversity(std::vector<SyntheticQuery>{}), ConfigError);
}

TEST_CASE("query_entropy: bounded by log2 of token count") {
    Rng rng(5);
    const std::vector<std::string> words{"clk", "reset", "pll", "skew", "net", "via", "=", "?"};
    for (int t = 0; t < 200; ++t) {
        std::string text;
        const std::size_t n = 1 + rng.uniform_index(12);
        for (std::size_t i = 0; i < n; ++i) text += words[rng.uniform_index(words.size())] + " ";
        const double h = query_entropy(text);
        CHECK(h >= 0.0);
        CHECK(h <= std::log2(static_cast<double>(split_surfaces(text).size())) + 1e-12);
    }
}

TEST_CASE("top_keywords: frequency then alphabetical, content tokens only") {
    CHECK(top_keywords("Timing constraints bound the clock. Timing paths need constraints.", 2) ==
          std::vector<std::string>{"constraints", "timing"});
    CHECK(top_keywords("the and 1234 ==", 2).empty());
}

TEST_CASE("generate_queries: counts, ordering and provenance") {
    const auto corpus = three_chunk_corpus();
    REQUIRE(corpus.chunks().size() == 3);
    TemplateBackend backend(default_query_templates());
    QueryGenOptions opt;
    opt.n_per_chunk = 2;
    opt.seed = 3;
    const auto qs = generate_queries(corpus, backend, opt);
    REQUIRE(qs.size() == 6);
    for (std::size_t i = 0; i < qs.size(); ++i) {
        CHECK(qs[i].source_chunk_id == corpus.chunks()[i / 2].chunk_id);
        CHECK(qs[i].provenance == Provenance::template_engine);
        CHECK(!qs[i].text.empty());
    }
    CHECK_NOTHROW(check_sources(qs, corpus));
}

TEST_CASE("generate_queries: keyword template mentions the chunk's keywords") {
    const auto corpus = three_chunk_corpus();
    TemplateBackend backend(default_query_templates());
    QueryGenOptions opt;
    opt.n_per_chunk = 4;
    for (const auto& q : generate_queries(corpus, backend, opt)) {
        if (q.source_chunk_id != "d1#0") continue;
        const bool mentions = q.text.find("timing") != std::string::npos ||
                              q.text.find("constraints") != std::string::npos;
        CHECK(mentions);
    }
}

TEST_CASE("generate_queries: identical files for the same seed, independent of parallelism") {
    const auto corpus = three_chunk_corpus();
    TemplateBackend backend(default_query_templates());
    std::ostringstream a, b, c;
    QueryGenOptions opt;
    opt.seed = 42;
    opt.sink = &a;
    (void)generate_queries(corpus, backend, opt);
    opt.sink = &b;
    (void)generate_queries(corpus, backend, opt);
    opt.sink = &c;
    opt.parallelism = 3;
    (void)generate_queries(corpus, backend, opt);
    CHECK(a.str() == b.str());
    CHECK(a.str() == c.str());
}

TEST_CASE("generate_queries: backend failure flushes partial output and resumes") {
    const auto corpus = three_chunk_corpus();
    FlakyBackend flaky(4);  // fails on chunk 1, second query
    std::ostringstream partial;
    QueryGenOptions opt;
    opt.sink = &partial;
    std::size_t cursor = 99;
    try {
        (void)generate_queries(corpus, flaky, opt);
        FAIL("expected abort");
    } catch (const GenerationAborted& e) {
        cursor = e.resume_cursor();
    }
    CHECK(cursor == 1);
    std::istringstream back(partial.str());
    const auto written = read_queries_jsonl(back);
    CHECK(written.size() == 2);

    opt.resume_from = cursor;
    std::ostringstream rest;
    opt.sink = &rest;
    const auto remaining = generate_queries(corpus, flaky, opt);
    CHECK(remaining.size() == 4);
    CHECK(remaining.front().source_chunk_id == "d2#0");
    CHECK(remaining.front().provenance == Provenance::llm);
}

TEST_CASE("entropy oracle: 50 template queries") {
    Rng rng(50);
    const std::vector<std::string> vocab{"timing", "clock", "skew", "router", "net", "via",
                                         "drc",    "lef",   "def",  "pin",    "cell", "slack"};
    TemplateBackend backend(default_query_templates());
    std::vector<SyntheticQuery> qs;
    double sum = 0.0;
    for (int i = 0; i < 50; ++i) {
        GenRequest req;
        req.seed = rng.next_u64();
        const auto& k1 = vocab[rng.uniform_index(vocab.size())];
        const auto& k2 = vocab[rng.uniform_index(vocab.size())];
        req.slots = {{"kw1", {k1}}, {"kw2", {k2}}, {"keyword", {k1, k2}}};
        qs.push_back({"q" + std::to_string(i), backend.generate(req), "c", Provenance::template_engine});
        const double expect = techembed::testing::oracle_entropy(qs.back().text);
        CHECK(std::abs(query_entropy(qs.back()) - expect) < 1e-9);
        sum += expect;
    }
    CHECK(std::abs(diversity(qs) - sum / 50.0) < 1e-9);
}

TEST_CASE("query JSONL round trip and validation") {
    const std::vector<SyntheticQuery> qs{{"a/q0", "what is x?", "a#0", Provenance::template_engine},
                                         {"r1", "how?", "", Provenance::real}};
    std::stringstream ss;
    write_queries_jsonl(qs, ss);
    const auto back = read_queries_jsonl(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].source_chunk_id == "a#0");
    CHECK(back[1].provenance == Provenance::real);

    std::istringstream dup(R"({"query_id":"x","text":"a"})"
                           "\n"
                           R"({"query_id":"x","text":"b"})");
    CHECK_THROWS_WITH_AS(read_queries_jsonl(dup), doctest::Contains("line 2"), FormatError);
}

TEST_CASE("distinct bigram ratio") {
    const std::vector<SyntheticQuery> qs{{"1", "a b c", "", Provenance::real},
                                         {"2", "a b d", "", Provenance::real}};
    CHECK(distinct_bigram_ratio(qs) == doctest::Approx(3.0 / 4.0));
}
