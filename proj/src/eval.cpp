#include "techembed/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "techembed/corpus.hpp"
#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

void require_relevant(const std::set<std::string>& relevant) {
    if (relevant.empty()) throw ConfigError("relevant set is empty");
}

void require_k(std::size_t k) {
    if (k < 1) throw ConfigError("cutoff K must be at least 1");
}

std::size_t hits_in_top(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hits += relevant.count(ranked[i]);
    return hits;
}

std::string cutoff_key(const char* name, std::size_t k) { return std::string(name) + "@" + std::to_string(k); }

std::size_t cutoff_slot(const std::vector<std::size_t>& ks, std::size_t k) {
    const auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw ConfigError("cutoff " + std::to_string(k) + " was not evaluated");
    return static_cast<std::size_t>(it - ks.begin());
}

std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ifstream open_input(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw Error(std::string("cannot open ") + what + " file " + path.string());
    return in;
}

}  // namespace

std::string to_string(JudgmentLevel level) { return level == JudgmentLevel::chunk ? "chunk" : "document"; }

JudgmentLevel judgment_level_from_string(const std::string& s) {
    if (s == "chunk") return JudgmentLevel::chunk;
    if (s == "document" || s == "doc") return JudgmentLevel::document;
    throw ConfigError("unknown judgment level '" + s + "' (expected chunk or document)");
}

double average_precision(std::span<const std::string> ranked, const std::set<std::string>& relevant) {
    require_relevant(relevant);
    double sum = 0.0;
    double hits = 0.0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (relevant.count(ranked[r])) {
            hits += 1.0;
            sum += hits / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(relevant.size());
}

double reciprocal_rank(std::span<const std::string> ranked, const std::set<std::string>& relevant) {
    require_relevant(relevant);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (relevant.count(ranked[r])) return 1.0 / static_cast<double>(r + 1);
    }
    return 0.0;
}

double precision_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k) {
    require_relevant(relevant);
    require_k(k);
    return static_cast<double>(hits_in_top(ranked, relevant, k)) / static_cast<double>(k);
}

double recall_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k) {
    require_relevant(relevant);
    require_k(k);
    return static_cast<double>(hits_in_top(ranked, relevant, k)) / static_cast<double>(relevant.size());
}

std::vector<std::string> aggregate_to_documents(std::span<const std::string> chunk_ids) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& c : chunk_ids) {
        auto doc = doc_id_of_chunk(c);
        if (seen.insert(doc).second) out.push_back(std::move(doc));
    }
    return out;
}

double MetricsReport::recall_at(std::size_t k) const { return recall[cutoff_slot(ks, k)]; }
double MetricsReport::precision_at(std::size_t k) const { return precision[cutoff_slot(ks, k)]; }

MetricsReport evaluate(const RunFile& run, const Qrels& qrels, std::span<const std::size_t> ks, JudgmentLevel level) {
    if (ks.empty()) throw ConfigError("no cutoffs requested");
    for (const auto k : ks) require_k(k);
    std::string unjudged;
    for (const auto& [qid, _] : run) {
        if (!qrels.count(qid)) unjudged += (unjudged.empty() ? "" : ", ") + qid;
    }
    if (!unjudged.empty()) throw ConfigError("run contains queries without judgments: " + unjudged);
    if (run.empty()) throw ConfigError("run contains no queries");

    MetricsReport report;
    report.ks.assign(ks.begin(), ks.end());
    report.level = level;
    report.precision.assign(ks.size(), 0.0);
    report.recall.assign(ks.size(), 0.0);
    for (const auto& [qid, items] : run) {
        const auto& relevant = qrels.at(qid);
        if (relevant.empty()) throw ConfigError("query " + qid + " has no relevant targets");
        std::vector<std::string> ranked;
        ranked.reserve(items.size());
        for (const auto& it : items) ranked.push_back(it.target_id);
        if (level == JudgmentLevel::document) ranked = aggregate_to_documents(ranked);

        QueryMetrics q;
        q.query_id = qid;
        q.average_precision = average_precision(ranked, relevant);
        q.reciprocal_rank = reciprocal_rank(ranked, relevant);
        q.relevant = relevant.size();
        q.retrieved = ranked.size();
        for (std::size_t i = 0; i < ks.size(); ++i) {
            q.precision.push_back(precision_at_k(ranked, relevant, ks[i]));
            q.recall.push_back(recall_at_k(ranked, relevant, ks[i]));
        }
        report.map += q.average_precision;
        report.mrr += q.reciprocal_rank;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            report.precision[i] += q.precision[i];
            report.recall[i] += q.recall[i];
        }
        report.per_query.push_back(std::move(q));
    }
    const double n = static_cast<double>(report.per_query.size());
    report.map /= n;
    report.mrr /= n;
    for (auto& v : report.precision) v /= n;
    for (auto& v : report.recall) v /= n;
    return report;
}

nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json metrics = {{"map", r.map}, {"mrr", r.mrr}, {"queries", r.per_query.size()}};
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        metrics[cutoff_key("precision", r.ks[i])] = r.precision[i];
        metrics[cutoff_key("recall", r.ks[i])] = r.recall[i];
    }
    nlohmann::json per_query = nlohmann::json::array();
    for (const auto& q : r.per_query) {
        nlohmann::json row = {{"query_id", q.query_id},
                              {"ap", q.average_precision},
                              {"rr", q.reciprocal_rank},
                              {"relevant", q.relevant},
                              {"retrieved", q.retrieved}};
        for (std::size_t i = 0; i < r.ks.size(); ++i) {
            row[cutoff_key("precision", r.ks[i])] = q.precision[i];
            row[cutoff_key("recall", r.ks[i])] = q.recall[i];
        }
        per_query.push_back(std::move(row));
    }
    nlohmann::json config = r.echo;
    config["ks"] = r.ks;
    config["level"] = to_string(r.level);
    config["headline"] = cutoff_key("precision", kHeadlineCutoff);
    return {{"metrics", metrics}, {"per_query", per_query}, {"config", config}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
    try {
        MetricsReport r;
        const auto& config = j.at("config");
        r.ks = config.at("ks").get<std::vector<std::size_t>>();
        r.level = judgment_level_from_string(config.at("level").get<std::string>());
        r.echo = config;
        r.echo.erase("ks");
        r.echo.erase("level");
        r.echo.erase("headline");
        const auto& m = j.at("metrics");
        r.map = m.at("map").get<double>();
        r.mrr = m.at("mrr").get<double>();
        for (const auto k : r.ks) {
            r.precision.push_back(m.at(cutoff_key("precision", k)).get<double>());
            r.recall.push_back(m.at(cutoff_key("recall", k)).get<double>());
        }
        for (const auto& row : j.at("per_query")) {
            QueryMetrics q;
            q.query_id = row.at("query_id").get<std::string>();
            q.average_precision = row.at("ap").get<double>();
            q.reciprocal_rank = row.at("rr").get<double>();
            q.relevant = row.at("relevant").get<std::size_t>();
            q.retrieved = row.at("retrieved").get<std::size_t>();
            for (const auto k : r.ks) {
                q.precision.push_back(row.at(cutoff_key("precision", k)).get<double>());
                q.recall.push_back(row.at(cutoff_key("recall", k)).get<double>());
            }
            r.per_query.push_back(std::move(q));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed metrics report: ") + e.what());
    }
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
    write_file(path, report_to_json(report).dump(2) + "\n");
}

MetricsReport read_report(const std::filesystem::path& path) {
    try {
        return report_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Qrels read_qrels(std::istream& in) {
    Qrels qrels;
    std::set<std::string> seen_queries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::string qid, iter, target, rel, extra;
        if (!(fields >> qid)) continue;
        if (!(fields >> iter >> target >> rel) || (fields >> extra)) {
            throw FormatError("qrels line " + std::to_string(lineno) + ": expected \"query_id 0 target_id relevance\"");
        }
        int relevance = 0;
        try {
            std::size_t used = 0;
            relevance = std::stoi(rel, &used);
            if (used != rel.size()) throw std::invalid_argument(rel);
        } catch (const std::exception&) {
            throw FormatError("qrels line " + std::to_string(lineno) + ": relevance '" + rel + "' is not an integer");
        }
        seen_queries.insert(qid);
        if (relevance > 0) qrels[qid].insert(target);
    }
    for (const auto& q : seen_queries) {
        if (!qrels.count(q)) throw FormatError("qrels: query " + q + " has no relevant target");
    }
    return qrels;
}

Qrels read_qrels(const std::filesystem::path& path) {
    auto in = open_input(path, "qrels");
    return read_qrels(in);
}

void write_qrels(const Qrels& qrels, std::ostream& out) {
    for (const auto& [qid, targets] : qrels) {
        for (const auto& t : targets) out << qid << " 0 " << t << " 1\n";
    }
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
    std::ostringstream out;
    write_qrels(qrels, out);
    write_file(path, out.str());
}

void validate_run(const RunFile& run) {
    for (const auto& [qid, items] : run) {
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (!seen.insert(items[i].target_id).second) {
                throw FormatError("run: query " + qid + " lists " + items[i].target_id + " twice");
            }
            if (i > 0 && items[i].score > items[i - 1].score) {
                throw FormatError("run: query " + qid + " has increasing scores at rank " + std::to_string(i + 1));
            }
        }
    }
}

RunFile read_run(std::istream& in) {
    std::map<std::string, std::vector<std::pair<long, RankedItem>>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::string qid, q0, target, rank, score, tag, extra;
        if (!(fields >> qid)) continue;
        const std::string where = "run line " + std::to_string(lineno) + ": ";
        if (!(fields >> q0 >> target >> rank >> score >> tag) || (fields >> extra)) {
            throw FormatError(where + "expected \"query_id Q0 target_id rank score tag\"");
        }
        try {
            std::size_t used_r = 0, used_s = 0;
            const long r = std::stol(rank, &used_r);
            const double s = std::stod(score, &used_s);
            if (used_r != rank.size() || used_s != score.size()) throw std::invalid_argument(line);
            rows[qid].push_back({r, {target, s}});
        } catch (const std::exception&) {
            throw FormatError(where + "rank or score is not numeric");
        }
    }
    RunFile run;
    for (auto& [qid, items] : rows) {
        std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& out = run[qid];
        for (auto& [_, item] : items) out.push_back(std::move(item));
    }
    validate_run(run);
    return run;
}

RunFile read_run(const std::filesystem::path& path) {
    auto in = open_input(path, "run");
    return read_run(in);
}

void write_run(const RunFile& run, std::ostream& out, const std::string& tag) {
    for (const auto& [qid, items] : run) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            out << qid << " Q0 " << items[i].target_id << ' ' << (i + 1) << ' ' << format_score(items[i].score) << ' '
                << tag << '\n';
        }
    }
}

void write_run(const RunFile& run, const std::filesystem::path& path, const std::string& tag) {
    std::ostringstream out;
    write_run(run, out, tag);
    write_file(path, out.str());
}

}  // namespace techembed
