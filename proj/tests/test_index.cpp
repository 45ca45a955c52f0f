#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "techembed/error.hpp"
#include "techembed/index.hpp"
#include "techembed/util.hpp"

using namespace techembed;

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    for (auto& x : v) n += (x = rng.normal()) * x;
    for (auto& x : v) x /= std::sqrt(n);
    return v;
}

VectorIndex random_index(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    VectorIndex index(d, "fp");
    for (std::size_t i = 0; i < n; ++i) index.add("c" + std::to_string(rng.next_u64() % 100000) + "_" + std::to_string(i), random_unit(rng, d));
    return index;
}

// Full sort of every entry, written without partial_sort.
std::vector<SearchHit> oracle(const VectorIndex& index, const std::vector<double>& q, std::size_t k) {
    std::vector<SearchHit> all;
    for (std::size_t i = 0; i < index.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) s += q[j] * index.vector(i)[j];
        all.push_back({index.ids()[i], s});
    }
    std::sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
        return a.score > b.score || (a.score == b.score && a.chunk_id < b.chunk_id);
    });
    if (all.size() > k) all.resize(k);
    return all;
}

Document doc(std::string id, std::string text) { return {std::move(id), "", std::move(text), {}}; }

EncoderConfig small_config() {
    EncoderConfig c;
    c.dim = 8;
    c.heads = 2;
    c.layers = 1;
    c.vocab_size = 128;
    c.max_seq = 64;
    c.prompt_len = 2;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("search equals the linear-scan oracle") {
    const auto index = random_index(1000, 16, 1);
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto q = random_unit(rng, 16);
        CHECK(index.search(q, 10) == oracle(index, q, 10));
    }
}

TEST_CASE("search contracts") {
    VectorIndex index(2);
    index.add("b", {1.0, 0.0});
    index.add("a", {1.0, 0.0});
    index.add("c", {0.0, 1.0});
    const std::vector<double> q{1.0, 0.0};
    const auto all = index.search(q, 10);
    REQUIRE(all.size() == 3);
    CHECK(all[0].chunk_id == "a");
    CHECK(all[1].chunk_id == "b");
    CHECK(all[0].score == 1.0);
    CHECK(all[2].chunk_id == "c");
    CHECK(index.search(q, 0).empty());
    CHECK_THROWS_AS(index.search(std::vector<double>{1.0}, 1), DimensionError);
    CHECK_THROWS_AS(index.add("d", {1.0}), DimensionError);
    CHECK_THROWS_AS(index.add("d", {1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(index.add("a", {0.0, 1.0}), ConfigError);
}

TEST_CASE("stored vector ranks itself first and prefixes are consistent") {
    const auto index = random_index(200, 8, 5);
    const std::vector<double> q(index.vector(17).begin(), index.vector(17).end());
    const auto full = index.search(q, index.size());
    CHECK(full.front().chunk_id == index.ids()[17]);
    CHECK(full.front().score == doctest::Approx(1.0).epsilon(1e-12));
    std::set<std::string> seen;
    for (std::size_t i = 0; i < full.size(); ++i) {
        CHECK(seen.insert(full[i].chunk_id).second);
        if (i > 0) CHECK((full[i - 1].score > full[i].score ||
                          (full[i - 1].score == full[i].score && full[i - 1].chunk_id < full[i].chunk_id)));
    }
    for (const std::size_t k : {1, 5, 50, 199}) {
        const auto prefix = index.search(q, k);
        CHECK(std::equal(prefix.begin(), prefix.end(), full.begin()));
    }
}

TEST_CASE("index files") {
    const auto path = std::filesystem::temp_directory_path() / "techembed_test_index.bin";
    SUBCASE("round trip") {
        const auto index = random_index(50, 8, 9);
        save_index(index, path);
        const auto back = load_index(path);
        CHECK(back == index);
        CHECK(serialize_index(back) == read_file(path));
    }
    SUBCASE("empty index") {
        const VectorIndex empty(8, "abc", true);
        save_index(empty, path);
        const auto back = load_index(path);
        CHECK(back.size() == 0);
        CHECK(back.dim() == 8);
        CHECK(back.use_summaries());
        CHECK(back.search(std::vector<double>(8, 0.0), 5).empty());
    }
    SUBCASE("corrupt and truncated") {
        auto bytes = serialize_index(random_index(5, 4, 1));
        CHECK_THROWS_AS(deserialize_index(bytes.substr(0, bytes.size() - 3)), FormatError);
        bytes[1] = '?';
        CHECK_THROWS_AS(deserialize_index(bytes), FormatError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("fingerprint check") {
    const VectorIndex index(4, "aaaa");
    CHECK_NOTHROW(require_fingerprint(index, "aaaa", false));
    CHECK_THROWS_WITH_AS(require_fingerprint(index, "bbbb", false), doctest::Contains("allow-mismatch"), ConfigError);
    CHECK_NOTHROW(require_fingerprint(index, "bbbb", true));
}

TEST_CASE("build_index over a corpus") {
    std::vector<Document> docs;
    for (int i = 0; i < 4; ++i) {
        docs.push_back(doc("d" + std::to_string(i),
                           "Document number " + std::to_string(i) + " covers the setting alpha beta gamma delta " +
                               "with epsilon zeta eta theta iota kappa lambda mu and nu xi."));
    }
    Corpus corpus(docs);
    Checkpoint ckpt(small_config());
    corpus.chunk(ckpt.tokenizer(), {8, 2});
    REQUIRE(corpus.chunks().size() >= 10);

    std::vector<Summary> summaries;
    for (const auto& d : corpus.documents()) summaries.push_back({d.doc_id, {0}, "Summary of " + d.doc_id + ".", {}});

    const auto plain = build_index(corpus, summaries, ckpt, "fp", false, 1);
    REQUIRE(plain.size() == corpus.chunks().size());
    const auto tok = ckpt.tokenizer();
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(plain.ids()[i] == corpus.chunks()[i].chunk_id);
        const auto v = plain.vector(i);
        CHECK(std::abs(std::sqrt(dot(v, v)) - 1.0) <= 1e-9);
        const auto direct = embed_document_text(ckpt, tok, corpus.chunks()[i].text);
        CHECK(std::equal(v.begin(), v.end(), direct.begin()));
    }

    const auto ctx1 = build_index(corpus, summaries, ckpt, "fp", true, 1);
    const auto ctx4 = build_index(corpus, summaries, ckpt, "fp", true, 4);
    CHECK(serialize_index(ctx1) == serialize_index(ctx4));
    CHECK_FALSE(ctx1 == plain);
    const auto expect = embed_document_text(ckpt, tok, contextualize_chunk(corpus.chunks()[0], &summaries[0]));
    CHECK(std::equal(expect.begin(), expect.end(), ctx1.vector(0).begin()));

    summaries.pop_back();
    CHECK_THROWS_WITH_AS(build_index(corpus, summaries, ckpt, "fp", true, 1), doctest::Contains("d3"), ConfigError);
    CHECK_NOTHROW(build_index(corpus, summaries, ckpt, "fp", false, 1));
}

TEST_CASE("prompts apply only once tuned") {
    Checkpoint ckpt(small_config());
    const auto tok = ckpt.tokenizer();
    const auto before = embed_query_text(ckpt, tok, "reset the timing constraint");
    CHECK(before == encode_query(ckpt.model, ckpt.prompt, tok.ids("reset the timing constraint"), false));
    ckpt.prompt_tuned = true;
    CHECK(embed_query_text(ckpt, tok, "reset the timing constraint") != before);
    CHECK_THROWS_AS(embed_query_text(ckpt, tok, "   "), ConfigError);
}
