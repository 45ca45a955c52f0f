#include "techembed/textgen.hpp"

#include <httplib.h>

#include <cstdlib>
#include <nlohmann/json.hpp>
#include <thread>

#include "techembed/util.hpp"

namespace techembed {
namespace {

using json = nlohmann::json;

bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

bool is_transient(int status) {
    return status == 0 || status == 408 || status == 429 || status >= 500;
}

struct Endpoint {
    std::string scheme_host_port;
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("LLM endpoint must include a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.scheme_host_port = url.substr(0, path_start);
    std::string base = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();
    const bool has_version = base.size() >= 3 && base.compare(base.size() - 3, 3, "/v1") == 0;
    ep.path = base + (has_version ? "/chat/completions" : "/v1/chat/completions");
    return ep;
}

class InFlightSlot {
public:
    InFlightSlot(std::mutex& m, std::condition_variable& cv, int& count, int cap)
        : m_(m), cv_(cv), count_(count) {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return count_ < cap; });
        ++count_;
    }
    ~InFlightSlot() {
        {
            std::lock_guard lock(m_);
            --count_;
        }
        cv_.notify_one();
    }
    InFlightSlot(const InFlightSlot&) = delete;
    InFlightSlot& operator=(const InFlightSlot&) = delete;

private:
    std::mutex& m_;
    std::condition_variable& cv_;
    int& count_;
};

}  // namespace

void validate(const GenRequest& req) {
    if (req.max_tokens <= 0 || req.max_tokens > 4096) {
        throw ConfigError("max_tokens must be in [1, 4096], got " + std::to_string(req.max_tokens));
    }
    if (!(req.temperature >= 0.0)) {
        throw ConfigError("temperature must be non-negative");
    }
}

std::string template_expand(const std::string& tmpl, const Slots& slots, std::uint64_t seed) {
    Rng rng(seed);
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        const char c = tmpl[i];
        if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
            out.push_back('{');
            i += 2;
            continue;
        }
        if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
            out.push_back('}');
            i += 2;
            continue;
        }
        if (c == '{') {
            std::size_t j = i + 1;
            while (j < tmpl.size() && is_name_char(tmpl[j])) ++j;
            if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
                const std::string name = tmpl.substr(i + 1, j - i - 1);
                const auto it = slots.find(name);
                if (it == slots.end() || it->second.empty()) {
                    throw ConfigError("no slot value for placeholder {" + name + "}");
                }
                const auto& alts = it->second;
                out += alts.size() == 1 ? alts.front() : alts[rng.uniform_index(alts.size())];
                i = j + 1;
                continue;
            }
        }
        out.push_back(c);
        ++i;
    }
    return out;
}

// ---------------------------------------------------------------------------

TemplateBackend::TemplateBackend(std::vector<std::string> templates)
    : templates_(std::move(templates)) {}

std::size_t TemplateBackend::template_index(std::uint64_t seed) const {
    if (templates_.empty()) return 0;
    return static_cast<std::size_t>(splitmix64(seed) % templates_.size());
}

std::string TemplateBackend::generate(const GenRequest& req) {
    validate(req);
    const std::string& tmpl = templates_.empty() ? req.user_prompt : templates_[template_index(req.seed)];
    return template_expand(tmpl, req.slots, derive_seed(req.seed, "slots"));
}

// ---------------------------------------------------------------------------

RemoteConfig RemoteConfig::from_env() {
    RemoteConfig cfg;
    const char* endpoint = std::getenv("TECHEMBED_LLM_ENDPOINT");
    const char* key = std::getenv("TECHEMBED_LLM_KEY");
    const char* model = std::getenv("TECHEMBED_LLM_MODEL");
    if (endpoint == nullptr || *endpoint == '\0') {
        throw ConfigError("TECHEMBED_LLM_ENDPOINT is not set");
    }
    if (key == nullptr || *key == '\0') {
        throw ConfigError("TECHEMBED_LLM_KEY is not set");
    }
    cfg.endpoint = endpoint;
    cfg.api_key = key;
    cfg.model = model != nullptr && *model != '\0' ? model : "gpt-4o-mini";
    return cfg;
}

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw ConfigError("remote backend requires an endpoint");
    if (config_.api_key.empty()) throw ConfigError("remote backend requires an API key");
    if (config_.max_in_flight < 1) throw ConfigError("max_in_flight must be positive");
    (void)split_endpoint(config_.endpoint);
}

std::string RemoteBackend::request_body(const std::string& model, const GenRequest& req) {
    json messages = json::array();
    if (!req.system_prompt.empty()) {
        messages.push_back({{"role", "system"}, {"content", req.system_prompt}});
    }
    messages.push_back({{"role", "user"}, {"content", req.user_prompt}});
    const json body = {{"model", model},
                       {"messages", messages},
                       {"max_tokens", req.max_tokens},
                       {"temperature", req.temperature}};
    return body.dump();
}

std::string RemoteBackend::parse_reply(const std::string& body) {
    json reply;
    try {
        reply = json::parse(body);
        const auto& content = reply.at("choices").at(0).at("message").at("content");
        return content.get<std::string>();
    } catch (const json::exception& e) {
        throw BackendError(std::string("malformed chat-completions reply: ") + e.what(), 200);
    }
}

std::string RemoteBackend::post_once(const std::string& body, int& status) {
    const auto ep = split_endpoint(config_.endpoint);
    httplib::Client client(ep.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    client.set_bearer_token_auth(config_.api_key);
    const auto res = client.Post(ep.path, body, "application/json");
    if (!res) {
        status = 0;
        return "transport error: " + httplib::to_string(res.error());
    }
    status = res->status;
    return res->body;
}

std::string RemoteBackend::generate(const GenRequest& req) {
    validate(req);
    InFlightSlot slot(mutex_, slot_freed_, in_flight_, config_.max_in_flight);
    const std::string body = request_body(config_.model, req);
    auto backoff = config_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        int status = 0;
        std::string reply = post_once(body, status);
        if (status >= 200 && status < 300) {
            return parse_reply(reply);
        }
        if (!is_transient(status) || attempt >= config_.max_retries) {
            const std::string what =
                status == 401 || status == 403
                    ? "LLM backend rejected credentials (HTTP " + std::to_string(status) + ")"
                    : "LLM backend request failed (HTTP " + std::to_string(status) + "): " +
                          reply.substr(0, 200);
            throw BackendError(what, status);
        }
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

}  // namespace techembed
