#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "techembed/checkpoint.hpp"
#include "techembed/corpus.hpp"
#include "techembed/encoder.hpp"
#include "techembed/eval.hpp"
#include "techembed/index.hpp"
#include "techembed/querygen.hpp"
#include "techembed/summarizer.hpp"
#include "techembed/textgen.hpp"

namespace techembed {

/// One experiment, read from a single JSON document.
struct PipelineConfig {
    std::uint64_t seed = 0;
    struct Paths {
        std::filesystem::path corpus;
        std::filesystem::path train_queries;
        std::filesystem::path test_queries;
        std::filesystem::path qrels;
        std::filesystem::path output;
    } paths;
    EncoderConfig encoder;
    ChunkingParams chunking;
    std::size_t summary_sentences = 3;
    SummarizerSchedule summarizer;
    std::size_t queries_per_chunk = 2;
    std::string backend = "template";
    std::size_t parallelism = 1;
    TrainSchedule pretrain{10, 16, 1e-3, 0};
    TrainSchedule tune{10, 16, 1e-2, 0};
    std::vector<std::size_t> ks = kDefaultCutoffs;
    JudgmentLevel level = JudgmentLevel::chunk;
    /// Results kept per query in the run file (at least max(ks)).
    std::size_t depth = 100;
    bool use_summaries = true;
    bool allow_mismatch = false;

    /// Parses and validates. Relative paths resolve against `base_dir`.
    /// Schema errors are ConfigErrors naming the JSON pointer, e.g. "/paths/corpus".
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::filesystem::path& path);
    [[nodiscard]] nlohmann::json to_json() const;

    /// Throws ConfigError on inconsistent values; with `check_inputs` also
    /// when an input file is missing.
    void validate(bool check_inputs = true) const;
};

/// Artifact locations of one pipeline run.
struct Workspace {
    std::filesystem::path dir;

    [[nodiscard]] std::filesystem::path vocabulary() const { return dir / "vocab.txt"; }
    [[nodiscard]] std::filesystem::path chunks() const { return dir / "chunks.jsonl"; }
    [[nodiscard]] std::filesystem::path synthetic_queries() const { return dir / "synthetic_queries.jsonl"; }
    [[nodiscard]] std::filesystem::path pretrain_checkpoint() const { return dir / "pretrain.ckpt"; }
    [[nodiscard]] std::filesystem::path pretrain_log() const { return dir / "pretrain_log.json"; }
    [[nodiscard]] std::filesystem::path summarizer_checkpoint() const { return dir / "summarizer.ckpt"; }
    [[nodiscard]] std::filesystem::path summaries() const { return dir / "summaries.jsonl"; }
    [[nodiscard]] std::filesystem::path tuned_checkpoint() const { return dir / "tuned.ckpt"; }
    [[nodiscard]] std::filesystem::path tune_log() const { return dir / "tune_log.json"; }
    [[nodiscard]] std::filesystem::path index() const { return dir / "index.tidx"; }
    [[nodiscard]] std::filesystem::path run() const { return dir / "run.trec"; }
    [[nodiscard]] std::filesystem::path report() const { return dir / "report.json"; }
};

/// Progress lines from long stages.
using LogFn = std::function<void(const std::string&)>;

/// Reads the corpus and chunks it with the stored (or freshly built) vocabulary.
Corpus load_corpus(const PipelineConfig& cfg, const Tokenizer& tokenizer);
Tokenizer load_tokenizer(const PipelineConfig& cfg);

std::unique_ptr<GenBackend> make_backend(const std::string& name);

/// ingest: builds the vocabulary and writes vocab.txt and chunks.jsonl.
void run_ingest(const PipelineConfig& cfg, const LogFn& log = {});
/// genqueries: n synthetic queries per chunk.
void run_genqueries(const PipelineConfig& cfg, GenBackend& backend, const LogFn& log = {});
/// pretrain: all base weights on (query, raw chunk) pairs. With `real_only`
/// the synthetic queries are left out.
TrainReport run_pretrain(const PipelineConfig& cfg, const Workspace& out, bool real_only, const LogFn& log = {});
/// summarize: trains the summarizer on the pre-trained base and writes
/// summaries plus a checkpoint carrying the summarizer weights.
void run_summarize(const PipelineConfig& cfg, const Workspace& out, const LogFn& log = {});
/// tune: prompts only, on (query, summary + chunk) pairs.
TrainReport run_tune(const PipelineConfig& cfg, const Workspace& out, bool real_only, const LogFn& log = {});
/// index: embeds every chunk with `checkpoint`.
void run_index(const PipelineConfig& cfg, const std::filesystem::path& checkpoint,
               const std::filesystem::path& summaries, bool use_summaries, const std::filesystem::path& index_out);

/// Encodes the test queries, searches the index, writes the run file and the
/// report. Every input path is checked before any computation.
MetricsReport run_experiment(const PipelineConfig& cfg, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& index, const std::filesystem::path& run_out,
                             const std::filesystem::path& report_out, const std::string& tag = "techembed");

/// All stages of the full model into the output directory.
MetricsReport run_pipeline(const PipelineConfig& cfg, const LogFn& log = {});

struct AblationArm {
    std::string name;
    std::string label;
    MetricsReport report;
};

/// The four arms: no prompt tuning, real queries only, no summaries, full.
/// Writes per-arm artifacts under <output>/ablation and ablation.json.
std::vector<AblationArm> run_ablation(const PipelineConfig& cfg, const LogFn& log = {});

nlohmann::json ablation_to_json(const std::vector<AblationArm>& arms);
std::vector<AblationArm> ablation_from_json(const nlohmann::json& j);

/// Aligned plain-text tables.
std::string render_report_table(const MetricsReport& report);
std::string render_ablation_table(const std::vector<AblationArm>& arms);
/// Grouped bar chart of recall@K, one group per arm (a single report is one arm).
std::string render_recall_svg(const std::vector<AblationArm>& arms);

}  // namespace techembed
