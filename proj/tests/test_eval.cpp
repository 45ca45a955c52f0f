#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "metric_oracle.hpp"
#include "techembed/error.hpp"
#include "techembed/eval.hpp"

using namespace techembed;

namespace {

std::vector<std::string> v(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }
std::set<std::string> s(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

}  // namespace

TEST_CASE("average precision examples") {
    CHECK(average_precision(v({"a", "x", "b"}), s({"a", "b"})) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(std::abs(average_precision(v({"a", "x", "b"}), s({"a", "b"})) - 0.8333) < 1e-4);
    CHECK(average_precision(v({"a", "x"}), s({"a"})) == 1.0);
    CHECK(average_precision(v({"x", "y"}), s({"a"})) == 0.0);
    CHECK_THROWS_AS(average_precision(v({"a"}), {}), ConfigError);
}

TEST_CASE("reciprocal rank examples") {
    CHECK(std::abs(reciprocal_rank(v({"x", "y", "a"}), s({"a"})) - 1.0 / 3.0) <= 1e-9);
    CHECK(reciprocal_rank(v({"a"}), s({"a"})) == 1.0);
    CHECK(reciprocal_rank(v({"x"}), s({"a"})) == 0.0);
    CHECK_THROWS_AS(reciprocal_rank(v({"a"}), {}), ConfigError);
}

TEST_CASE("precision and recall at K") {
    CHECK(recall_at_k(v({"a", "x", "y", "z", "w"}), s({"a", "b"}), 5) == 0.5);
    CHECK(precision_at_k(v({"a", "b", "c", "x", "y", "z", "w", "u", "t", "s"}), s({"a", "b", "c"}), 10) ==
          doctest::Approx(0.3));
    CHECK(precision_at_k(v({"a", "b", "x", "y"}), s({"a", "b"}), 10) == doctest::Approx(0.2));
    CHECK_THROWS_AS(precision_at_k(v({"a"}), s({"a"}), 0), ConfigError);
    CHECK_THROWS_AS(recall_at_k(v({"a"}), s({"a"}), 0), ConfigError);
}

TEST_CASE("evaluate matches the brute-force oracle on random instances") {
    const std::vector<std::size_t> ks{1, 5, 10, 20};
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto inst = testing::random_instance(seed);
        const auto got = evaluate(inst.run, inst.qrels, ks);
        const auto want = testing::oracle_metrics(inst.run, inst.qrels, ks);
        CHECK(std::abs(got.map - want.map) <= 1e-9);
        CHECK(std::abs(got.mrr - want.mrr) <= 1e-9);
        for (const auto k : ks) {
            CHECK(std::abs(got.precision_at(k) - want.precision.at(k)) <= 1e-9);
            CHECK(std::abs(got.recall_at(k) - want.recall.at(k)) <= 1e-9);
        }
    }
}

TEST_CASE("MAP equals MRR bitwise with one relevant target per query") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto inst = testing::random_instance(seed, true);
        const auto r = evaluate(inst.run, inst.qrels, kDefaultCutoffs);
        CHECK(std::memcmp(&r.map, &r.mrr, sizeof(double)) == 0);
    }
}

TEST_CASE("evaluate properties") {
    const auto inst = testing::random_instance(7);
    const auto r = evaluate(inst.run, inst.qrels, kDefaultCutoffs);
    for (const auto& q : r.per_query) {
        for (std::size_t i = 1; i < q.recall.size(); ++i) CHECK(q.recall[i] >= q.recall[i - 1]);
        for (const double x : q.recall) CHECK((x >= 0.0 && x <= 1.0));
        for (const double x : q.precision) CHECK((x >= 0.0 && x <= 1.0));
    }
    CHECK((r.map >= 0.0 && r.map <= 1.0));

    SUBCASE("perfect ranking") {
        RunFile run{{"q", {{"a", 0.9}, {"b", 0.8}, {"c", 0.1}}}};
        Qrels qrels{{"q", s({"a", "b"})}};
        const std::vector<std::size_t> ks{2, 5};
        const auto p = evaluate(run, qrels, ks);
        CHECK(p.map == 1.0);
        CHECK(p.mrr == 1.0);
        CHECK(p.recall_at(2) == 1.0);
        CHECK(p.recall_at(5) == 1.0);
        CHECK_THROWS_AS(p.recall_at(3), ConfigError);
    }
    SUBCASE("unjudged queries are listed") {
        RunFile run{{"q1", {{"a", 1.0}}}, {"q9", {{"a", 1.0}}}};
        Qrels qrels{{"q1", s({"a"})}};
        CHECK_THROWS_WITH_AS(evaluate(run, qrels, kDefaultCutoffs), doctest::Contains("q9"), ConfigError);
    }
}

TEST_CASE("document-level aggregation uses the best chunk") {
    CHECK(aggregate_to_documents(v({"d1#2", "d2#0", "d1#0", "d3#1", "d2#4"})) == v({"d1", "d2", "d3"}));
    RunFile run{{"q", {{"d2#0", 0.9}, {"d2#1", 0.8}, {"d1#3", 0.7}}}};
    Qrels qrels{{"q", s({"d1"})}};
    const std::vector<std::size_t> ks{1, 2};
    const auto r = evaluate(run, qrels, ks, JudgmentLevel::document);
    CHECK(r.mrr == 0.5);
    CHECK(r.per_query[0].retrieved == 2);
    CHECK(r.recall_at(2) == 1.0);
}

TEST_CASE("evaluate is permutation invariant over query order") {
    auto inst = testing::random_instance(3);
    const auto a = evaluate(inst.run, inst.qrels, kDefaultCutoffs);
    RunFile reordered;
    for (auto it = inst.run.rbegin(); it != inst.run.rend(); ++it) reordered.insert(*it);
    const auto b = evaluate(reordered, inst.qrels, kDefaultCutoffs);
    CHECK(a.map == b.map);
    CHECK(report_to_json(a) == report_to_json(b));
}

TEST_CASE("TREC run and qrels round trips") {
    const auto inst = testing::random_instance(11);
    std::stringstream run_io, qrels_io;
    write_run(inst.run, run_io, "test");
    write_qrels(inst.qrels, qrels_io);
    RunFile run = read_run(run_io);
    for (auto& [q, items] : inst.run) {
        if (items.empty()) run[q];
    }
    CHECK(run == inst.run);
    CHECK(read_qrels(qrels_io) == inst.qrels);

    std::stringstream dup("q Q0 a 1 0.5 t\nq Q0 a 2 0.4 t\n");
    CHECK_THROWS_AS(read_run(dup), FormatError);
    std::stringstream rising("q Q0 a 1 0.5 t\nq Q0 b 2 0.6 t\n");
    CHECK_THROWS_AS(read_run(rising), FormatError);
    std::stringstream shortline("q Q0 a 1\n");
    CHECK_THROWS_WITH_AS(read_run(shortline), doctest::Contains("line 1"), FormatError);
    std::stringstream badrel("q 0 a yes\n");
    CHECK_THROWS_AS(read_qrels(badrel), FormatError);
    std::stringstream zero("q 0 a 0\nr 0 b 1\n");
    CHECK_THROWS_WITH_AS(read_qrels(zero), doctest::Contains("query q"), FormatError);
}

TEST_CASE("report JSON") {
    const auto inst = testing::random_instance(5);
    auto r = evaluate(inst.run, inst.qrels, kDefaultCutoffs);
    r.echo["use_summaries"] = true;
    const auto j = report_to_json(r);
    CHECK(j["metrics"].contains("precision@10"));
    CHECK(j["metrics"].contains("recall@20"));
    CHECK(j["config"]["headline"] == "precision@10");
    CHECK(j["config"]["use_summaries"] == true);
    CHECK(j["config"]["ks"].size() == 4);
    const auto back = report_from_json(j);
    CHECK(report_to_json(back) == j);
    CHECK_THROWS_AS(report_from_json(nlohmann::json::object()), FormatError);
}
