#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <string>
#include <vector>

#include "techembed/error.hpp"

namespace techembed {

/// Slot name -> alternatives. A single alternative is a plain substitution.
using Slots = std::map<std::string, std::vector<std::string>>;

struct GenRequest {
    std::string system_prompt;
    std::string user_prompt;
    int max_tokens = 256;
    double temperature = 0.0;
    std::uint64_t seed = 0;  // honored by the template backend only
    Slots slots;             // consumed by the template backend only
};

/// Throws ConfigError when the request violates its field ranges.
void validate(const GenRequest& req);

/// Failure reported by a generation backend. http_status is 0 for transport errors.
class BackendError : public Error {
public:
    BackendError(const std::string& what, int http_status)
        : Error(what), http_status_(http_status) {}
    [[nodiscard]] int http_status() const { return http_status_; }

private:
    int http_status_;
};

enum class BackendKind { remote, template_engine };

class GenBackend {
public:
    virtual ~GenBackend() = default;
    [[nodiscard]] virtual BackendKind kind() const = 0;
    /// Thread-safe.
    virtual std::string generate(const GenRequest& req) = 0;
};

/// Replaces every "{name}" with its slot value. Slots with several alternatives
/// are resolved by a PRNG seeded from `seed`. "{{" and "}}" are literal braces.
/// Throws ConfigError naming the first placeholder without a slot.
std::string template_expand(const std::string& tmpl, const Slots& slots, std::uint64_t seed);

/// Deterministic offline stand-in for an LLM.
///
/// With a non-empty template set, generate() picks one template by seed and
/// expands it with the request slots; otherwise the user prompt itself is the
/// template.
class TemplateBackend final : public GenBackend {
public:
    explicit TemplateBackend(std::vector<std::string> templates = {});

    [[nodiscard]] BackendKind kind() const override { return BackendKind::template_engine; }
    std::string generate(const GenRequest& req) override;

    [[nodiscard]] const std::vector<std::string>& templates() const { return templates_; }
    /// Index of the template generate() uses for this seed.
    [[nodiscard]] std::size_t template_index(std::uint64_t seed) const;

private:
    std::vector<std::string> templates_;
};

struct RemoteConfig {
    std::string endpoint;  // scheme://host[:port][/base], e.g. https://api.example.com
    std::string api_key;
    std::string model;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    int max_in_flight = 4;

    /// Reads TECHEMBED_LLM_ENDPOINT, TECHEMBED_LLM_KEY and TECHEMBED_LLM_MODEL.
    /// Throws ConfigError when the endpoint or key is missing.
    static RemoteConfig from_env();
};

/// OpenAI-compatible chat-completions client (POST <endpoint>/v1/chat/completions).
///
/// Transient failures (transport errors, 408, 429, 5xx) are retried with
/// exponential backoff; other statuses fail immediately.
class RemoteBackend final : public GenBackend {
public:
    explicit RemoteBackend(RemoteConfig config);

    [[nodiscard]] BackendKind kind() const override { return BackendKind::remote; }
    std::string generate(const GenRequest& req) override;

    [[nodiscard]] const RemoteConfig& config() const { return config_; }

    /// Request body for the chat-completions call.
    static std::string request_body(const std::string& model, const GenRequest& req);
    /// Extracts choices[0].message.content. Throws BackendError on malformed replies.
    static std::string parse_reply(const std::string& body);

private:
    std::string post_once(const std::string& body, int& status);

    RemoteConfig config_;
    std::mutex mutex_;
    std::condition_variable slot_freed_;
    int in_flight_ = 0;
};

}  // namespace techembed
