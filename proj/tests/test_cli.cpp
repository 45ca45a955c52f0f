#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include "pipeline_fixture.hpp"
#include "techembed/pipeline.hpp"
#include "techembed/util.hpp"

using namespace techembed;
namespace fs = std::filesystem;

namespace {

struct Result {
    int status = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(TECHEMBED_CLI) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (const auto n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (const char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run("").status == 1);
    CHECK(run("frobnicate").status == 1);
    CHECK(run("ingest").status == 1);  // --config is required
    CHECK(run("--help").status == 0);
}

TEST_CASE("config errors exit with 1 and name the field") {
    const auto dir = testing::scratch_dir("cli_config");
    write_file(dir / "bad.json", R"({"seed": 1, "paths": {"train_queries": "a", "test_queries": "b", "qrels": "c", "output": "o"}})");
    const auto r = run("ingest --config " + q(dir / "bad.json"));
    CHECK(r.status == 1);
    CHECK(r.out.find("/paths/corpus") != std::string::npos);

    write_file(dir / "broken.json", "{ not json");
    CHECK(run("ingest --config " + q(dir / "broken.json")).status == 1);
}

TEST_CASE("runtime errors exit with 2") {
    const auto dir = testing::scratch_dir("cli_runtime");
    const auto cfg = testing::tiny_experiment(dir);
    write_file(dir / "corpus.jsonl", "{\"doc_id\": \"a\"}\n");  // no text field
    CHECK(run("ingest --config " + q(cfg)).status == 2);
}

TEST_CASE("stage by stage on a three-chunk corpus") {
    const auto dir = testing::scratch_dir("cli_stages");
    const auto cfg = testing::tiny_experiment(dir);
    // Replace the corpus with a single short document of three chunks.
    const std::string text =
        "The timing constraint sets the clock period of the design. Reset the timing constraint after synthesis "
        "when the clock changes. Placement reads the constraint file before routing starts. Routing uses the "
        "placement result to connect every net. The final report lists slack for each path in the design. "
        "Timing closure repeats placement and routing until every path meets the clock period. Engineers review "
        "the slack histogram and tighten the constraint file for the next run of the flow.";
    write_file(dir / "corpus.jsonl", nlohmann::json({{"doc_id", "manual"}, {"text", text}}).dump() + "\n");
    write_file(dir / "train_queries.jsonl",
               R"({"query_id": "t1", "text": "reset the timing constraint", "source_chunk_id": "manual#0"})" "\n"
               R"({"query_id": "t2", "text": "routing every net", "source_chunk_id": "manual#1"})" "\n");
    write_file(dir / "test_queries.jsonl",
               R"({"query_id": "e1", "text": "slack report", "source_chunk_id": "manual#2"})" "\n");
    write_file(dir / "qrels.txt", "e1 0 manual#2 1\n");

    const std::string c = " --config " + q(cfg);
    for (const char* stage : {"ingest", "genqueries", "pretrain", "summarize", "tune", "index"}) {
        const auto r = run(std::string(stage) + c);
        CHECK_MESSAGE(r.status == 0, stage, ": ", r.out);
    }
    const Workspace ws{dir / "out"};
    const auto chunks = read_file(ws.chunks());
    REQUIRE(count_lines(chunks) == 3);

    const auto s = run("search" + c + " --k 3 \"reset the timing constraint\"");
    CHECK(s.status == 0);
    CHECK(count_lines(s.out) == 3);
    for (const char* id : {"manual#0", "manual#1", "manual#2"}) CHECK(s.out.find(id) != std::string::npos);
    CHECK(s.out.rfind("1\t", 0) == 0);

    const auto e = run("eval" + c);
    CHECK_MESSAGE(e.status == 0, e.out);
    CHECK(e.out.find("recall@5") != std::string::npos);
    CHECK(fs::exists(ws.run()));

    const auto rep = run("report " + q(ws.report()) + " --svg " + q(dir / "r.svg"));
    CHECK(rep.status == 0);
    CHECK(rep.out.find("precision@1") != std::string::npos);
    CHECK(read_file(dir / "r.svg").find("<svg") == 0);

    // The pretrain checkpoint did not build this index.
    const auto mismatch = run("search" + c + " --checkpoint " + q(ws.pretrain_checkpoint()) + " x");
    CHECK(mismatch.status == 1);
    CHECK(mismatch.out.find("--allow-mismatch") != std::string::npos);
    CHECK(run("search" + c + " --allow-mismatch --checkpoint " + q(ws.pretrain_checkpoint()) + " timing").status == 0);

    // Outputs can be redirected; inputs are never rewritten.
    const auto before = read_file(dir / "corpus.jsonl");
    CHECK(run("ingest" + c + " --out " + q(dir / "elsewhere")).status == 0);
    CHECK(fs::exists(dir / "elsewhere" / "vocab.txt"));
    CHECK(read_file(dir / "corpus.jsonl") == before);
}
