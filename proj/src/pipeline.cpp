#include "techembed/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>

#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config schema

class SchemaReader {
public:
    explicit SchemaReader(const json& root) : root_(root) {}

    const json* find(const std::string& pointer) const {
        const json::json_pointer p(pointer);
        return root_.contains(p) ? &root_.at(p) : nullptr;
    }

    const json& require(const std::string& pointer) const {
        const auto* v = find(pointer);
        if (!v) throw ConfigError("config: missing required field " + pointer);
        return *v;
    }

    void object(const std::string& pointer, std::initializer_list<const char*> keys) const {
        const auto* v = pointer.empty() ? &root_ : find(pointer);
        if (!v) return;
        if (!v->is_object()) throw ConfigError("config: " + (pointer.empty() ? "/" : pointer) + " must be an object");
        const std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [k, _] : v->items()) {
            if (!allowed.count(k)) throw ConfigError("config: unknown field " + pointer + "/" + k);
        }
    }

    std::uint64_t uint(const std::string& pointer, std::uint64_t def, bool required = false) const {
        const auto* v = required ? &require(pointer) : find(pointer);
        if (!v) return def;
        if (!v->is_number_integer() || v->get<std::int64_t>() < 0) {
            throw ConfigError("config: " + pointer + " must be a non-negative integer");
        }
        return v->get<std::uint64_t>();
    }

    double real(const std::string& pointer, double def) const {
        const auto* v = find(pointer);
        if (!v) return def;
        if (!v->is_number()) throw ConfigError("config: " + pointer + " must be a number");
        return v->get<double>();
    }

    bool boolean(const std::string& pointer, bool def) const {
        const auto* v = find(pointer);
        if (!v) return def;
        if (!v->is_boolean()) throw ConfigError("config: " + pointer + " must be true or false");
        return v->get<bool>();
    }

    std::string string(const std::string& pointer, const std::string& def, bool required = false) const {
        const auto* v = required ? &require(pointer) : find(pointer);
        if (!v) return def;
        if (!v->is_string() || v->get<std::string>().empty()) {
            throw ConfigError("config: " + pointer + " must be a non-empty string");
        }
        return v->get<std::string>();
    }

private:
    const json& root_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

json schedule_json(const TrainSchedule& s) {
    return {{"epochs", s.epochs}, {"batch_size", s.batch_size}, {"learning_rate", s.learning_rate}};
}

// ---------------------------------------------------------------------------
// Stage helpers

void say(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

void require_file(const fs::path& p, const std::string& produced_by) {
    if (!fs::exists(p)) {
        throw ConfigError("missing artifact " + p.string() + (produced_by.empty() ? "" : " (run " + produced_by + " first)"));
    }
}

std::vector<SyntheticQuery> training_queries(const PipelineConfig& cfg, const Workspace& main, bool real_only) {
    auto queries = read_queries_jsonl(cfg.paths.train_queries);
    if (!real_only) {
        require_file(main.synthetic_queries(), "genqueries");
        auto synthetic = read_queries_jsonl(main.synthetic_queries());
        queries.insert(queries.end(), std::make_move_iterator(synthetic.begin()),
                       std::make_move_iterator(synthetic.end()));
    }
    return queries;
}

std::vector<TrainingPair> build_pairs(const Corpus& corpus, const Tokenizer& tokenizer,
                                      std::span<const SyntheticQuery> queries, std::span<const Summary> summaries) {
    check_sources(queries, corpus);
    std::unordered_map<std::string_view, const Summary*> by_doc;
    for (const auto& s : summaries) by_doc.emplace(s.doc_id, &s);
    std::unordered_map<std::string, std::vector<std::uint32_t>> doc_tokens;
    std::vector<TrainingPair> pairs;
    pairs.reserve(queries.size());
    for (const auto& q : queries) {
        TrainingPair p;
        p.query = tokenizer.ids(q.text);
        if (p.query.empty()) throw ConfigError("query " + q.query_id + " has no tokens");
        auto& doc = doc_tokens[q.source_chunk_id];
        if (doc.empty()) {
            const Chunk& chunk = *corpus.find_chunk(q.source_chunk_id);
            const Summary* summary = nullptr;
            if (!summaries.empty()) {
                const auto it = by_doc.find(chunk.doc_id);
                if (it == by_doc.end()) throw ConfigError("no summary for document '" + chunk.doc_id + "'");
                summary = it->second;
            }
            doc = tokenizer.ids(contextualize_chunk(chunk, summary));
        }
        p.document = doc;
        p.doc_key = q.source_chunk_id;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void write_train_log(const fs::path& path, const TrainReport& r, std::size_t pairs) {
    write_file(path, json({{"epoch_loss", r.epoch_loss}, {"steps", r.steps}, {"pairs", pairs}}).dump(2) + "\n");
}

std::string fixed(double v, int decimals = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    const SchemaReader r(j);
    r.object("", {"seed", "paths", "encoder", "chunking", "summarizer", "querygen", "pretrain", "tune", "eval",
                  "index", "parallelism", "allow_mismatch"});
    r.object("/paths", {"corpus", "train_queries", "test_queries", "qrels", "output"});
    r.object("/encoder", {"dim", "vocab_size", "layers", "heads", "max_seq", "prompt_len", "temperature",
                          "ffn_mult", "share_base"});
    r.object("/chunking", {"chunk_size", "overlap"});
    r.object("/summarizer", {"sentences", "epochs", "learning_rate"});
    r.object("/querygen", {"n_per_chunk", "backend"});
    r.object("/pretrain", {"epochs", "batch_size", "learning_rate"});
    r.object("/tune", {"epochs", "batch_size", "learning_rate"});
    r.object("/eval", {"ks", "level", "depth"});
    r.object("/index", {"use_summaries"});

    PipelineConfig c;
    c.seed = r.uint("/seed", 0, true);
    r.require("/paths");
    c.paths.corpus = resolve(base_dir, r.string("/paths/corpus", "", true));
    c.paths.train_queries = resolve(base_dir, r.string("/paths/train_queries", "", true));
    c.paths.test_queries = resolve(base_dir, r.string("/paths/test_queries", "", true));
    c.paths.qrels = resolve(base_dir, r.string("/paths/qrels", "", true));
    c.paths.output = resolve(base_dir, r.string("/paths/output", "", true));

    const EncoderConfig e;
    c.encoder.dim = r.uint("/encoder/dim", e.dim);
    c.encoder.vocab_size = static_cast<std::uint32_t>(r.uint("/encoder/vocab_size", e.vocab_size));
    c.encoder.layers = r.uint("/encoder/layers", e.layers);
    c.encoder.heads = r.uint("/encoder/heads", e.heads);
    c.encoder.max_seq = r.uint("/encoder/max_seq", e.max_seq);
    c.encoder.prompt_len = r.uint("/encoder/prompt_len", e.prompt_len);
    c.encoder.temperature = r.real("/encoder/temperature", e.temperature);
    c.encoder.ffn_mult = r.uint("/encoder/ffn_mult", e.ffn_mult);
    c.encoder.share_base = r.boolean("/encoder/share_base", e.share_base);
    c.encoder.seed = c.seed;

    c.chunking.chunk_size = r.uint("/chunking/chunk_size", c.chunking.chunk_size);
    c.chunking.overlap = r.uint("/chunking/overlap", c.chunking.overlap);
    c.summary_sentences = r.uint("/summarizer/sentences", c.summary_sentences);
    c.summarizer.epochs = r.uint("/summarizer/epochs", c.summarizer.epochs);
    c.summarizer.learning_rate = r.real("/summarizer/learning_rate", c.summarizer.learning_rate);
    c.summarizer.seed = derive_seed(c.seed, "summarizer");
    c.queries_per_chunk = r.uint("/querygen/n_per_chunk", c.queries_per_chunk);
    c.backend = r.string("/querygen/backend", c.backend);
    c.parallelism = r.uint("/parallelism", c.parallelism);
    for (auto* s : {&c.pretrain, &c.tune}) {
        const std::string base = s == &c.pretrain ? "/pretrain" : "/tune";
        s->epochs = r.uint(base + "/epochs", s->epochs);
        s->batch_size = r.uint(base + "/batch_size", s->batch_size);
        s->learning_rate = r.real(base + "/learning_rate", s->learning_rate);
        s->seed = derive_seed(c.seed, base);
    }
    if (const auto* ks = r.find("/eval/ks")) {
        if (!ks->is_array() || ks->empty()) throw ConfigError("config: /eval/ks must be a non-empty array");
        c.ks.clear();
        for (std::size_t i = 0; i < ks->size(); ++i) c.ks.push_back(r.uint("/eval/ks/" + std::to_string(i), 0));
    }
    c.level = judgment_level_from_string(r.string("/eval/level", to_string(c.level)));
    c.depth = r.uint("/eval/depth", c.depth);
    c.use_summaries = r.boolean("/index/use_summaries", c.use_summaries);
    c.allow_mismatch = r.boolean("/allow_mismatch", c.allow_mismatch);
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

json PipelineConfig::to_json() const {
    json enc = encoder;
    enc.erase("seed");
    return {{"seed", seed},
            {"paths",
             {{"corpus", paths.corpus.string()},
              {"train_queries", paths.train_queries.string()},
              {"test_queries", paths.test_queries.string()},
              {"qrels", paths.qrels.string()},
              {"output", paths.output.string()}}},
            {"encoder", enc},
            {"chunking", {{"chunk_size", chunking.chunk_size}, {"overlap", chunking.overlap}}},
            {"summarizer",
             {{"sentences", summary_sentences},
              {"epochs", summarizer.epochs},
              {"learning_rate", summarizer.learning_rate}}},
            {"querygen", {{"n_per_chunk", queries_per_chunk}, {"backend", backend}}},
            {"pretrain", schedule_json(pretrain)},
            {"tune", schedule_json(tune)},
            {"eval", {{"ks", ks}, {"level", to_string(level)}, {"depth", depth}}},
            {"index", {{"use_summaries", use_summaries}}},
            {"parallelism", parallelism},
            {"allow_mismatch", allow_mismatch}};
}

void PipelineConfig::validate(bool check_inputs) const {
    encoder.validate();
    if (chunking.chunk_size < 8 || chunking.overlap >= chunking.chunk_size) {
        throw ConfigError("config: /chunking needs chunk_size >= 8 and overlap < chunk_size");
    }
    if (summary_sentences < 1) throw ConfigError("config: /summarizer/sentences must be at least 1");
    if (queries_per_chunk < 1) throw ConfigError("config: /querygen/n_per_chunk must be at least 1");
    if (backend != "template" && backend != "remote") {
        throw ConfigError("config: /querygen/backend must be \"template\" or \"remote\"");
    }
    for (const auto* s : {&pretrain, &tune}) {
        if (s->batch_size < 2) throw ConfigError("config: batch_size must be at least 2");
        if (!(s->learning_rate > 0.0)) throw ConfigError("config: learning_rate must be positive");
    }
    for (const auto k : ks) {
        if (k < 1) throw ConfigError("config: /eval/ks entries must be at least 1");
    }
    if (depth < *std::max_element(ks.begin(), ks.end())) throw ConfigError("config: /eval/depth must cover every K");
    if (check_inputs) {
        const std::pair<const char*, const fs::path*> inputs[] = {{"/paths/corpus", &paths.corpus},
                                                                  {"/paths/train_queries", &paths.train_queries},
                                                                  {"/paths/test_queries", &paths.test_queries},
                                                                  {"/paths/qrels", &paths.qrels}};
        for (const auto& [pointer, p] : inputs) {
            if (!fs::exists(*p)) throw ConfigError(std::string("config: ") + pointer + " does not exist: " + p->string());
        }
    }
}

// ---------------------------------------------------------------------------
// Stages

Tokenizer load_tokenizer(const PipelineConfig& cfg) {
    const Workspace ws{cfg.paths.output};
    require_file(ws.vocabulary(), "ingest");
    return Tokenizer(cfg.encoder.vocab_size, Vocabulary::load(ws.vocabulary()));
}

Corpus load_corpus(const PipelineConfig& cfg, const Tokenizer& tokenizer) {
    Corpus corpus = ingest(cfg.paths.corpus);
    corpus.chunk(tokenizer, cfg.chunking);
    return corpus;
}

std::unique_ptr<GenBackend> make_backend(const std::string& name) {
    if (name == "template") return std::make_unique<TemplateBackend>(default_query_templates());
    if (name == "remote") return std::make_unique<RemoteBackend>(RemoteConfig::from_env());
    throw ConfigError("unknown backend '" + name + "' (expected template or remote)");
}

void run_ingest(const PipelineConfig& cfg, const LogFn& log) {
    const Workspace ws{cfg.paths.output};
    Corpus corpus = ingest(cfg.paths.corpus);
    auto vocab = Vocabulary::build(corpus.documents(), Tokenizer::vocab_capacity(cfg.encoder.vocab_size));
    vocab.save(ws.vocabulary());
    const Tokenizer tokenizer(cfg.encoder.vocab_size, vocab);
    corpus.chunk(tokenizer, cfg.chunking);
    std::ostringstream chunks;
    write_chunks_jsonl(corpus, chunks);
    write_file(ws.chunks(), chunks.str());
    say(log, "ingest: " + std::to_string(corpus.documents().size()) + " documents, " +
                 std::to_string(corpus.chunks().size()) + " chunks, " + std::to_string(vocab.size()) +
                 " vocabulary entries");
}

void run_genqueries(const PipelineConfig& cfg, GenBackend& backend, const LogFn& log) {
    const Workspace ws{cfg.paths.output};
    const Corpus corpus = load_corpus(cfg, load_tokenizer(cfg));
    QueryGenOptions opt;
    opt.n_per_chunk = cfg.queries_per_chunk;
    opt.seed = derive_seed(cfg.seed, "queries");
    opt.parallelism = cfg.parallelism;
    const auto queries = generate_queries(corpus, backend, opt);
    std::ostringstream out;
    write_queries_jsonl(queries, out);
    write_file(ws.synthetic_queries(), out.str());
    char line[128];
    std::snprintf(line, sizeof line, "genqueries: %zu queries, diversity %.4f bits, distinct bigrams %.4f",
                  queries.size(), diversity(queries), distinct_bigram_ratio(queries));
    say(log, line);
}

TrainReport run_pretrain(const PipelineConfig& cfg, const Workspace& out, bool real_only, const LogFn& log) {
    const Workspace main{cfg.paths.output};
    const Tokenizer tokenizer = load_tokenizer(cfg);
    const Corpus corpus = load_corpus(cfg, tokenizer);
    const auto pairs = build_pairs(corpus, tokenizer, training_queries(cfg, main, real_only), {});
    Checkpoint ckpt(cfg.encoder);
    ckpt.vocabulary = tokenizer.vocabulary();
    say(log, "pretrain: " + std::to_string(pairs.size()) + " pairs, " + std::to_string(ckpt.model.parameter_count()) +
                 " parameters");
    const auto report = pretrain(ckpt.model, ckpt.prompt, pairs, cfg.pretrain, [&](std::size_t e, double loss) {
        say(log, "pretrain: epoch " + std::to_string(e + 1) + " loss " + fixed(loss));
    });
    save_checkpoint(ckpt, out.pretrain_checkpoint());
    write_train_log(out.pretrain_log(), report, pairs.size());
    return report;
}

void run_summarize(const PipelineConfig& cfg, const Workspace& out, const LogFn& log) {
    require_file(out.pretrain_checkpoint(), "pretrain");
    Checkpoint ckpt = load_checkpoint(out.pretrain_checkpoint(), cfg.encoder);
    const Tokenizer tokenizer = ckpt.tokenizer();
    const Corpus corpus = load_corpus(cfg, tokenizer);
    const auto docs = prepare_summary_training(corpus, tokenizer, ckpt.model);
    SummarizerReport report;
    const auto weights = train_summarizer(docs, cfg.encoder.dim, cfg.summarizer, &report);
    say(log, "summarize: objective " + fixed(report.initial_objective) + " -> " +
                 fixed(report.epoch_objective.empty() ? report.initial_objective : report.epoch_objective.back()));
    std::vector<Summary> summaries;
    for (const auto& doc : corpus.documents()) {
        summaries.push_back(extract_summary(doc, tokenizer, weights, ckpt.model, cfg.summary_sentences));
    }
    write_summaries_jsonl(summaries, out.summaries());
    ckpt.summarizer = weights;
    save_checkpoint(ckpt, out.summarizer_checkpoint());
}

TrainReport run_tune(const PipelineConfig& cfg, const Workspace& out, bool real_only, const LogFn& log) {
    const Workspace main{cfg.paths.output};
    require_file(out.summarizer_checkpoint(), "summarize");
    require_file(out.summaries(), "summarize");
    Checkpoint ckpt = load_checkpoint(out.summarizer_checkpoint(), cfg.encoder);
    const Tokenizer tokenizer = ckpt.tokenizer();
    const Corpus corpus = load_corpus(cfg, tokenizer);
    const auto summaries = read_summaries_jsonl(out.summaries());
    const auto pairs = build_pairs(corpus, tokenizer, training_queries(cfg, main, real_only), summaries);
    say(log, "tune: " + std::to_string(pairs.size()) + " pairs, prompts " + std::to_string(2 * cfg.encoder.prompt_len) +
                 "x" + std::to_string(cfg.encoder.dim));
    const auto report = prompt_tune(ckpt.model, ckpt.prompt, pairs, cfg.tune, [&](std::size_t e, double loss) {
        say(log, "tune: epoch " + std::to_string(e + 1) + " loss " + fixed(loss));
    });
    ckpt.prompt_tuned = true;
    save_checkpoint(ckpt, out.tuned_checkpoint());
    write_train_log(out.tune_log(), report, pairs.size());
    return report;
}

void run_index(const PipelineConfig& cfg, const fs::path& checkpoint, const fs::path& summaries_path,
               bool use_summaries, const fs::path& index_out) {
    require_file(checkpoint, "");
    const std::string bytes = read_file(checkpoint);
    const Checkpoint ckpt = deserialize_checkpoint(bytes, checkpoint.string());
    require_compatible(ckpt.model.config(), cfg.encoder);
    const Corpus corpus = load_corpus(cfg, ckpt.tokenizer());
    std::vector<Summary> summaries;
    if (use_summaries) {
        require_file(summaries_path, "summarize");
        summaries = read_summaries_jsonl(summaries_path);
    }
    const auto index = build_index(corpus, summaries, ckpt, fingerprint_bytes(bytes), use_summaries, cfg.parallelism);
    save_index(index, index_out);
}

MetricsReport run_experiment(const PipelineConfig& cfg, const fs::path& checkpoint, const fs::path& index_path,
                             const fs::path& run_out, const fs::path& report_out, const std::string& tag) {
    for (const auto* p : {&checkpoint, &index_path, &cfg.paths.test_queries, &cfg.paths.qrels}) require_file(*p, "");
    const std::string bytes = read_file(checkpoint);
    const Checkpoint ckpt = deserialize_checkpoint(bytes, checkpoint.string());
    require_compatible(ckpt.model.config(), cfg.encoder);
    const std::string fp = fingerprint_bytes(bytes);
    const VectorIndex index = load_index(index_path);
    require_fingerprint(index, fp, cfg.allow_mismatch);
    const auto queries = read_queries_jsonl(cfg.paths.test_queries);
    const Qrels qrels = read_qrels(cfg.paths.qrels);
    const Tokenizer tokenizer = ckpt.tokenizer();

    RunFile run;
    for (const auto& q : queries) {
        const auto hits = index.search(embed_query_text(ckpt, tokenizer, q.text), cfg.depth);
        auto& items = run[q.query_id];
        for (const auto& h : hits) items.push_back({h.chunk_id, h.score});
    }
    write_run(run, run_out, tag);
    auto report = evaluate(run, qrels, cfg.ks, cfg.level);
    report.echo = {{"seed", cfg.seed},
                   {"use_summaries", index.use_summaries()},
                   {"prompt_tuned", ckpt.prompt_tuned},
                   {"checkpoint", fp},
                   {"tag", tag}};
    write_report(report, report_out);
    return report;
}

MetricsReport run_pipeline(const PipelineConfig& cfg, const LogFn& log) {
    cfg.validate();
    const Workspace ws{cfg.paths.output};
    run_ingest(cfg, log);
    auto backend = make_backend(cfg.backend);
    run_genqueries(cfg, *backend, log);
    run_pretrain(cfg, ws, false, log);
    run_summarize(cfg, ws, log);
    run_tune(cfg, ws, false, log);
    run_index(cfg, ws.tuned_checkpoint(), ws.summaries(), cfg.use_summaries, ws.index());
    return run_experiment(cfg, ws.tuned_checkpoint(), ws.index(), ws.run(), ws.report());
}

std::vector<AblationArm> run_ablation(const PipelineConfig& cfg, const LogFn& log) {
    cfg.validate();
    const Workspace main{cfg.paths.output};
    run_ingest(cfg, log);
    auto backend = make_backend(cfg.backend);
    run_genqueries(cfg, *backend, log);
    run_pretrain(cfg, main, false, log);
    run_summarize(cfg, main, log);
    run_tune(cfg, main, false, log);

    const fs::path root = main.dir / "ablation";
    const Workspace real_only{root / "no_queries"};
    say(log, "ablation: training on real queries only");
    run_pretrain(cfg, real_only, true, log);
    run_summarize(cfg, real_only, log);
    run_tune(cfg, real_only, true, log);

    struct Plan {
        const char* name;
        const char* label;
        fs::path checkpoint;
        fs::path summaries;
        bool use_summaries;
    };
    const Plan plans[] = {
        {"no_tuning", "w/o tuning", main.pretrain_checkpoint(), main.summaries(), true},
        {"no_queries", "w/o synthetic queries", real_only.tuned_checkpoint(), real_only.summaries(), true},
        {"no_summaries", "w/o summaries", main.tuned_checkpoint(), main.summaries(), false},
        {"full", "full model", main.tuned_checkpoint(), main.summaries(), true},
    };
    std::vector<AblationArm> arms;
    for (const auto& p : plans) {
        const Workspace ws{root / p.name};
        run_index(cfg, p.checkpoint, p.summaries, p.use_summaries, ws.index());
        auto report = run_experiment(cfg, p.checkpoint, ws.index(), ws.run(), ws.report(), p.name);
        say(log, std::string("ablation: ") + p.label + " recall@" + std::to_string(cfg.ks.back()) + " " +
                     fixed(report.recall.back()));
        arms.push_back({p.name, p.label, std::move(report)});
    }
    write_file(root / "ablation.json", ablation_to_json(arms).dump(2) + "\n");
    return arms;
}

// ---------------------------------------------------------------------------
// Rendering

json ablation_to_json(const std::vector<AblationArm>& arms) {
    json out = json::array();
    for (const auto& a : arms) out.push_back({{"arm", a.name}, {"label", a.label}, {"report", report_to_json(a.report)}});
    return {{"arms", out}};
}

std::vector<AblationArm> ablation_from_json(const json& j) {
    try {
        std::vector<AblationArm> arms;
        for (const auto& a : j.at("arms")) {
            arms.push_back({a.at("arm").get<std::string>(), a.at("label").get<std::string>(),
                            report_from_json(a.at("report"))});
        }
        return arms;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed ablation file: ") + e.what());
    }
}

std::string render_report_table(const MetricsReport& r) {
    std::ostringstream out;
    out << pad("metric", 16) << "value\n";
    out << pad("map", 16) << fixed(r.map) << '\n';
    out << pad("mrr", 16) << fixed(r.mrr) << '\n';
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        out << pad("precision@" + std::to_string(r.ks[i]), 16) << fixed(r.precision[i]) << '\n';
    }
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        out << pad("recall@" + std::to_string(r.ks[i]), 16) << fixed(r.recall[i]) << '\n';
    }
    out << pad("queries", 16) << r.per_query.size() << '\n';
    return out.str();
}

std::string render_ablation_table(const std::vector<AblationArm>& arms) {
    if (arms.empty()) return {};
    std::size_t width = 6;
    for (const auto& a : arms) width = std::max(width, a.label.size() + 2);
    std::ostringstream out;
    out << pad("arm", width);
    const auto& ks = arms.front().report.ks;
    for (const auto k : ks) out << pad("R@" + std::to_string(k), 9);
    out << pad("MAP", 9) << "MRR\n";
    for (const auto& a : arms) {
        out << pad(a.label, width);
        for (const auto k : ks) out << pad(fixed(a.report.recall_at(k)), 9);
        out << pad(fixed(a.report.map), 9) << fixed(a.report.mrr) << '\n';
    }
    return out.str();
}

std::string render_recall_svg(const std::vector<AblationArm>& arms) {
    const std::vector<std::size_t> ks = arms.empty() ? std::vector<std::size_t>{} : arms.front().report.ks;
    const double bar = 18.0, gap = 30.0, chart_h = 200.0, top = 30.0, left = 50.0;
    const double group = bar * static_cast<double>(ks.size()) + gap;
    const double width = left + group * static_cast<double>(arms.size()) + 20.0;
    static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\""
        << fixed(top + chart_h + 60.0, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<text x=\"" << fixed(left, 0) << "\" y=\"18\">recall@K</text>\n";
    out << "<line x1=\"" << fixed(left - 5, 0) << "\" y1=\"" << fixed(top + chart_h, 0) << "\" x2=\"" << fixed(width - 10, 0)
        << "\" y2=\"" << fixed(top + chart_h, 0) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = top + chart_h * (1.0 - t / 4.0);
        out << "<text x=\"" << fixed(left - 10, 0) << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">"
            << fixed(t / 4.0, 2) << "</text>\n";
    }
    for (std::size_t a = 0; a < arms.size(); ++a) {
        const double x0 = left + group * static_cast<double>(a);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            const double v = arms[a].report.recall_at(ks[i]);
            const double h = chart_h * v;
            out << "<rect x=\"" << fixed(x0 + bar * static_cast<double>(i), 1) << "\" y=\""
                << fixed(top + chart_h - h, 1) << "\" width=\"" << fixed(bar - 2, 1) << "\" height=\"" << fixed(h, 1)
                << "\" fill=\"" << colors[i % 6] << "\"><title>" << xml_escape(arms[a].label) << " recall@" << ks[i]
                << " = " << fixed(v) << "</title></rect>\n";
        }
        out << "<text x=\"" << fixed(x0, 1) << "\" y=\"" << fixed(top + chart_h + 16, 0) << "\">"
            << xml_escape(arms[a].label) << "</text>\n";
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double x = left + 70.0 * static_cast<double>(i);
        const double y = top + chart_h + 40;
        out << "<rect x=\"" << fixed(x, 0) << "\" y=\"" << fixed(y - 9, 0) << "\" width=\"10\" height=\"10\" fill=\""
            << colors[i % 6] << "\"/><text x=\"" << fixed(x + 14, 0) << "\" y=\"" << fixed(y, 0) << "\">K=" << ks[i]
            << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace techembed
