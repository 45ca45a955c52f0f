#include "techembed/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

struct Topic {
    const char* title;
    const char* phrase;
    const char* noun;
    const char* symptom;
    const char* effect;
};

const std::vector<Topic>& topics() {
    static const std::vector<Topic> t{
        {"Cache eviction", "cache eviction", "cache", "drops hot entries", "keep more entries resident"},
        {"Connection pooling", "connection pooling", "pool", "refuses new clients", "reuse idle connections"},
        {"Log rotation", "log rotation", "log volume", "fills the disk", "rotate files sooner"},
        {"Retry backoff", "retry backoff", "retry loop", "floods the upstream", "space out retries"},
        {"Memory budget", "memory budget", "heap", "triggers the out of memory killer", "cap resident memory"},
        {"Thread scheduling", "thread scheduling", "worker queue", "starves background tasks", "balance the workers"},
        {"Disk quota", "disk quota", "volume", "rejects writes", "reserve space per tenant"},
        {"Certificate renewal", "certificate renewal", "certificate", "expires in production", "renew certificates early"},
        {"Request timeout", "request timeout", "request", "hangs forever", "fail slow calls quickly"},
        {"Metrics export", "metrics export", "exporter", "drops samples", "push metrics more often"},
        {"Access control", "access control", "permission check", "blocks valid users", "grant scoped roles"},
        {"Snapshot compression", "snapshot compression", "snapshot", "grows without bound", "shrink stored snapshots"},
    };
    return t;
}

const std::vector<std::string> kCategories{"job scheduler", "message broker", "build cache", "log shipper",
                                           "key value store", "service mesh agent", "backup daemon",
                                           "metrics collector"};
const std::vector<std::string> kDomains{"data platform", "payments", "research", "mobile", "infrastructure",
                                        "analytics"};
const std::vector<int> kValues{16, 32, 64, 128, 256, 512, 1000, 2000, 4096};

std::string invent_word(Rng& rng, std::size_t syllables) {
    static const std::vector<std::string> onsets{"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s",
                                                 "t", "v", "z", "br", "dr", "gl", "kr", "pl", "st", "tr"};
    static const std::vector<std::string> vowels{"a", "e", "i", "o", "u"};
    static const std::vector<std::string> codas{"", "", "n", "r", "x", "k", "l", "t"};
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        w += onsets[rng.uniform_index(onsets.size())];
        w += vowels[rng.uniform_index(vowels.size())];
    }
    return w + codas[rng.uniform_index(codas.size())];
}

class NameSource {
public:
    explicit NameSource(std::uint64_t seed) : rng_(seed) {}
    std::string next(std::size_t syllables) {
        for (;;) {
            auto w = invent_word(rng_, syllables);
            if (w.size() >= 5 && used_.insert(w).second) return w;
        }
    }

private:
    Rng rng_;
    std::unordered_set<std::string> used_;
};

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Accumulates document text and remembers where sentences landed.
class DocBuilder {
public:
    Span sentence(const std::string& s) {
        if (!text_.empty() && text_.back() != '\n') text_ += ' ';
        const Span span{text_.size(), text_.size() + s.size()};
        text_ += s;
        return span;
    }
    void paragraph_break() { text_ += "\n\n"; }
    [[nodiscard]] const std::string& text() const { return text_; }

private:
    std::string text_;
};

struct PendingQuery {
    std::string id;
    std::string text;
    std::size_t doc = 0;
    Span target;
    bool context = false;
};

std::string join_phrases(const std::vector<std::string>& p) {
    std::string out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i > 0) out += i + 1 == p.size() ? " and " : ", ";
        out += p[i];
    }
    return out;
}

}  // namespace

BenchData generate_bench(const BenchSpec& spec) {
    if (spec.documents == 0 || spec.topics_per_document < 2 || spec.topics_per_document > topics().size()) {
        throw ConfigError("benchmark needs documents and 2.." + std::to_string(topics().size()) + " topics each");
    }
    if (!(spec.context_share >= 0.0 && spec.context_share < 1.0) || !(spec.test_share > 0.0 && spec.test_share < 1.0) ||
        !(spec.tool_free_share >= 0.0 && spec.tool_free_share <= 1.0)) {
        throw ConfigError("benchmark shares must lie in [0, 1)");
    }
    Rng rng(derive_seed(spec.seed, "bench"));
    NameSource names(derive_seed(spec.seed, "names"));
    BenchData data;

    std::vector<PendingQuery> fact;
    std::vector<PendingQuery> context_candidates;
    std::vector<std::string> tool_names;
    for (std::size_t d = 0; d < spec.documents; ++d) {
        const std::string tool = names.next(3);
        tool_names.push_back(tool);
        char id[32];
        std::snprintf(id, sizeof id, "doc%03zu", d);
        const std::string doc_id = id;

        std::vector<std::size_t> order(topics().size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        order.resize(spec.topics_per_document);
        std::vector<std::string> phrases;
        for (const auto t : order) phrases.emplace_back(topics()[t].phrase);

        DocBuilder b;
        const std::size_t head = (phrases.size() + 1) / 2;
        b.sentence(tool + " is a " + kCategories[rng.uniform_index(kCategories.size())] + " used by " +
                   kDomains[rng.uniform_index(kDomains.size())] + " teams.");
        b.sentence("This guide explains how " + tool + " handles " + join_phrases(phrases) + ".");
        std::vector<std::string> params;
        for (std::size_t s = 0; s < order.size(); ++s) params.push_back(names.next(2 + rng.uniform_index(2)));
        b.sentence(tool + " reads " +
                   join_phrases({params.begin(), params.begin() + static_cast<std::ptrdiff_t>(head)}) +
                   " from its node file.");
        b.sentence(tool + " reads " +
                   join_phrases({params.begin() + static_cast<std::ptrdiff_t>(head), params.end()}) +
                   " from its cluster file.");

        for (std::size_t s = 0; s < order.size(); ++s) {
            const Topic& t = topics()[order[s]];
            const std::string& param = params[s];
            const std::string value = std::to_string(kValues[rng.uniform_index(kValues.size())]);
            const auto fill = [&](const std::vector<const char*>& variants) {
                std::string out = variants[rng.uniform_index(variants.size())];
                for (const auto& [key, val] : {std::pair<std::string, std::string>{"{p}", param},
                                               {"{v}", value},
                                               {"{phrase}", t.phrase},
                                               {"{effect}", t.effect},
                                               {"{noun}", t.noun},
                                               {"{symptom}", t.symptom},
                                               {"{tool}", tool},
                                               {"{title}", t.title}}) {
                    for (auto at = out.find(key); at != std::string::npos; at = out.find(key)) {
                        out.replace(at, key.size(), val);
                    }
                }
                return out;
            };
            // Tool-free sections are the only candidates for context queries.
            const bool names_tool = rng.uniform() >= spec.tool_free_share;
            const auto say = [&](const std::vector<const char*>& named, const std::vector<const char*>& plain) {
                return b.sentence(fill(names_tool ? named : plain));
            };
            b.paragraph_break();
            say({"{title} settings in {tool}."}, {"{title} settings."});
            const Span controls = say({"The {p} option controls {phrase} in {tool}.",
                                       "Use {p} to tune {phrase} across {tool}.", "In {tool} the {p} key governs {phrase}."},
                                      {"The {p} option controls {phrase} for the service.", "Use {p} to tune {phrase}.",
                                       "The {p} key governs {phrase}."});
            const Span set = say({"Set {p} to {v} so {tool} can {effect}.", "A value of {v} for {p} helps {tool} {effect}."},
                                 {"Set {p} to {v} to {effect}.", "A value of {v} for {p} helps {effect}.",
                                  "Raise {p} to {v} when you need to {effect}."});
            const Span low = say({"If {p} is too low the {tool} {noun} {symptom}.",
                                  "A small {p} means the {tool} {noun} {symptom}."},
                                 {"If {p} is too low the {noun} {symptom}.", "A small {p} means the {noun} {symptom}.",
                                  "With {p} undersized, the {noun} {symptom}."});
            const Span apply = say({"Restart {tool} after changing {p}.", "{tool} picks up edits to {p} on reload."},
                                   {"Changes to {p} apply after the next restart.",
                                    "A restart is required before a new {p} takes effect.",
                                    "Edits to {p} are picked up on reload."});

            const std::string qid = doc_id + "/s" + std::to_string(s);
            switch (rng.uniform_index(4)) {
                case 0: fact.push_back({qid + "/fact", "what does the " + param + " option control", d, controls}); break;
                case 1: fact.push_back({qid + "/fact", "recommended value for " + param, d, set}); break;
                case 2: fact.push_back({qid + "/fact", "what happens when " + param + " is too low", d, low}); break;
                default: fact.push_back({qid + "/fact", "when do changes to " + param + " apply", d, apply}); break;
            }
            static const std::vector<std::string> shapes{"how does {tool} handle {phrase}",
                                                         "{tool} {phrase} configuration",
                                                         "configure {phrase} in {tool}"};
            std::string text = shapes[rng.uniform_index(shapes.size())];
            text.replace(text.find("{tool}"), 6, tool);
            text.replace(text.find("{phrase}"), 8, t.phrase);
            context_candidates.push_back({qid + "/ctx", text, d, controls, true});
        }
        data.documents.push_back({doc_id, tool + " administration guide", b.text(), {}});
    }

    // Chunk-level judgments: chunks that fully contain the target sentence.
    const Tokenizer tokenizer;
    std::vector<std::vector<Chunk>> chunks;
    std::vector<std::vector<Token>> tokens;
    for (const auto& doc : data.documents) {
        chunks.push_back(chunk_document(doc, tokenizer, spec.chunking));
        tokens.push_back(tokenizer.tokenize(doc.text));
    }
    const auto judge = [&](const PendingQuery& q) {
        const auto& toks = tokens[q.doc];
        std::size_t first = toks.size(), last = 0;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (toks[i].begin >= q.target.begin && toks[i].end <= q.target.end) {
                first = std::min(first, i);
                last = i;
            }
        }
        std::vector<const Chunk*> out;
        for (const auto& c : chunks[q.doc]) {
            if (c.token_start <= first && last < c.token_end) out.push_back(&c);
        }
        if (out.empty()) throw Error("benchmark: no chunk contains the target of " + q.id);
        return out;
    };

    // Context queries must target chunks that lack the tool name.
    std::vector<PendingQuery> context;
    for (auto& q : context_candidates) {
        bool clean = true;
        for (const auto* c : judge(q)) {
            for (const auto& s : split_surfaces(c->text)) clean = clean && s != tool_names[q.doc];
        }
        if (clean) context.push_back(std::move(q));
    }
    Rng pick(derive_seed(spec.seed, "context"));
    pick.shuffle(context);
    const auto n_context = static_cast<std::size_t>(
        std::llround(spec.context_share / (1.0 - spec.context_share) * static_cast<double>(fact.size())));
    if (context.size() < n_context) throw Error("benchmark: " + std::to_string(context.size()) + " tool-free sections but " +
                                                         std::to_string(n_context) + " context queries requested");
    context.resize(n_context);
    std::sort(context.begin(), context.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    Rng split(derive_seed(spec.seed, "split"));
    const auto emit = [&](std::vector<PendingQuery>& group) {
        std::vector<std::size_t> order(group.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        split.shuffle(order);
        const auto n_test = static_cast<std::size_t>(std::llround(spec.test_share * static_cast<double>(group.size())));
        std::vector<bool> is_test(group.size(), false);
        for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
        for (std::size_t i = 0; i < group.size(); ++i) {
            const auto& q = group[i];
            const auto relevant = judge(q);
            for (const auto* c : relevant) data.qrels[q.id].insert(c->chunk_id);
            SyntheticQuery out{q.id, q.text, relevant.front()->chunk_id, Provenance::real};
            if (q.context) data.context_queries.insert(q.id);
            (is_test[i] ? data.test_queries : data.train_queries).push_back(std::move(out));
        }
    };
    emit(fact);
    emit(context);
    const auto by_id = [](const SyntheticQuery& a, const SyntheticQuery& b) { return a.query_id < b.query_id; };
    std::sort(data.train_queries.begin(), data.train_queries.end(), by_id);
    std::sort(data.test_queries.begin(), data.test_queries.end(), by_id);
    return data;
}

void write_bench(const BenchData& data, const std::filesystem::path& dir) {
    std::ostringstream corpus, train, test, qrels, ctx;
    write_corpus_jsonl(Corpus(data.documents), corpus);
    write_queries_jsonl(data.train_queries, train);
    write_queries_jsonl(data.test_queries, test);
    write_qrels(data.qrels, qrels);
    for (const auto& q : data.context_queries) ctx << q << '\n';
    write_file(dir / "corpus.jsonl", corpus.str());
    write_file(dir / "train_queries.jsonl", train.str());
    write_file(dir / "test_queries.jsonl", test.str());
    write_file(dir / "qrels.txt", qrels.str());
    write_file(dir / "context_queries.txt", ctx.str());
}

}  // namespace techembed
