// Command-line front end: one subcommand per pipeline stage.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "techembed/error.hpp"
#include "techembed/pipeline.hpp"
#include "techembed/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace techembed;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::size_t> ks;
    std::optional<bool> use_summaries;
    std::string backend;
    std::string out;
    bool allow_mismatch = false;
    std::string checkpoint;
    std::string query;
    std::string input;
    std::string svg;
};

PipelineConfig load_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    const fs::path path(o.config);
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (o.seed) j["seed"] = *o.seed;
    if (!o.out.empty()) j["paths"]["output"] = fs::absolute(o.out).string();
    if (!o.backend.empty()) j["querygen"]["backend"] = o.backend;
    if (!o.ks.empty()) j["eval"]["ks"] = o.ks;
    if (o.use_summaries) j["index"]["use_summaries"] = *o.use_summaries;
    if (o.allow_mismatch) j["allow_mismatch"] = true;
    auto cfg = PipelineConfig::from_json(j, path.parent_path());
    cfg.validate();
    fs::create_directories(cfg.paths.output);
    return cfg;
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

fs::path checkpoint_for(const Options& o, const Workspace& ws) {
    return o.checkpoint.empty() ? ws.tuned_checkpoint() : fs::path(o.checkpoint);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval with prompt-tuned transformer embeddings and document summaries"};
    app.require_subcommand(1);
    Options o;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
        sub->add_option("--seed", o.seed, "Override the global seed");
        sub->add_option("--out", o.out, "Override the output directory");
    };
    const auto eval_flags = [&](CLI::App* sub) {
        sub->add_option("--k", o.ks, "Cutoffs, e.g. 5,10,20")->delimiter(',');
        sub->add_flag("--allow-mismatch", o.allow_mismatch, "Serve an index built by another checkpoint");
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint to use (default: tuned.ckpt)");
    };

    auto* ingest = app.add_subcommand("ingest", "Build the vocabulary and chunk the corpus");
    common(ingest);
    auto* genqueries = app.add_subcommand("genqueries", "Generate synthetic queries per chunk");
    common(genqueries);
    genqueries->add_option("--backend", o.backend, "Generation backend")->check(CLI::IsMember({"template", "remote"}));
    auto* pretrain = app.add_subcommand("pretrain", "Train the base encoder");
    common(pretrain);
    auto* summarize = app.add_subcommand("summarize", "Train the summarizer and write document summaries");
    common(summarize);
    auto* tune = app.add_subcommand("tune", "Tune the soft prompts on a frozen base");
    common(tune);
    auto* index = app.add_subcommand("index", "Embed every chunk into a vector index");
    common(index);
    index->add_option("--use-summaries", o.use_summaries, "Prepend document summaries to chunks");
    index->add_option("--checkpoint", o.checkpoint, "Checkpoint to use (default: tuned.ckpt)");
    auto* search = app.add_subcommand("search", "Print the top-k chunks for one query");
    common(search);
    eval_flags(search);
    search->add_option("query", o.query, "Query text")->required();
    auto* eval = app.add_subcommand("eval", "Run the test queries and write run.trec and report.json");
    common(eval);
    eval_flags(eval);
    auto* ablate = app.add_subcommand("ablate", "Run every stage plus the ablation arms");
    common(ablate);
    ablate->add_option("--backend", o.backend, "Generation backend")->check(CLI::IsMember({"template", "remote"}));
    ablate->add_option("--k", o.ks, "Cutoffs, e.g. 5,10,20")->delimiter(',');
    auto* report = app.add_subcommand("report", "Render a report or ablation JSON as a table");
    report->add_option("input", o.input, "report.json or ablation.json")->required()->check(CLI::ExistingFile);
    report->add_option("--svg", o.svg, "Also write a recall@K bar chart");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (report->parsed()) {
            const json j = json::parse(read_file(o.input));
            std::vector<AblationArm> arms;
            if (j.contains("arms")) {
                arms = ablation_from_json(j);
                std::cout << render_ablation_table(arms);
            } else {
                arms.push_back({"report", fs::path(o.input).stem().string(), report_from_json(j)});
                std::cout << render_report_table(arms.front().report);
            }
            if (!o.svg.empty()) write_file(o.svg, render_recall_svg(arms));
            return 0;
        }

        const PipelineConfig cfg = load_config(o);
        const Workspace ws{cfg.paths.output};
        if (ingest->parsed()) {
            run_ingest(cfg, log_line);
        } else if (genqueries->parsed()) {
            auto backend = make_backend(cfg.backend);
            run_genqueries(cfg, *backend, log_line);
        } else if (pretrain->parsed()) {
            run_pretrain(cfg, ws, false, log_line);
        } else if (summarize->parsed()) {
            run_summarize(cfg, ws, log_line);
        } else if (tune->parsed()) {
            run_tune(cfg, ws, false, log_line);
        } else if (index->parsed()) {
            run_index(cfg, checkpoint_for(o, ws), ws.summaries(), cfg.use_summaries, ws.index());
        } else if (search->parsed()) {
            const fs::path ckpt_path = checkpoint_for(o, ws);
            for (const auto& p : {ckpt_path, ws.index()}) {
                if (!fs::exists(p)) throw ConfigError("missing artifact " + p.string());
            }
            const std::string bytes = read_file(ckpt_path);
            const Checkpoint ckpt = deserialize_checkpoint(bytes, ckpt_path.string());
            require_compatible(ckpt.model.config(), cfg.encoder);
            const VectorIndex idx = load_index(ws.index());
            require_fingerprint(idx, fingerprint_bytes(bytes), cfg.allow_mismatch);
            const std::size_t k = o.ks.empty() ? 10 : o.ks.front();
            const auto hits = idx.search(embed_query_text(ckpt, ckpt.tokenizer(), o.query), k);
            for (std::size_t i = 0; i < hits.size(); ++i) {
                std::printf("%zu\t%s\t%.6f\n", i + 1, hits[i].chunk_id.c_str(), hits[i].score);
            }
        } else if (eval->parsed()) {
            const auto r = run_experiment(cfg, checkpoint_for(o, ws), ws.index(), ws.run(), ws.report());
            std::cout << render_report_table(r);
        } else if (ablate->parsed()) {
            const auto arms = run_ablation(cfg, log_line);
            std::cout << render_ablation_table(arms);
            write_file(ws.dir / "ablation" / "recall.svg", render_recall_svg(arms));
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
