#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vfd/http.hpp"
#include "vfd/model.hpp"

namespace vfd {

struct ChatRequest {
    std::string system;
    std::string user;
    std::string model;
    std::optional<double> temperature;
    std::optional<std::uint32_t> max_tokens;
};

struct TokenUsage {
    std::uint64_t prompt = 0;
    std::uint64_t completion = 0;
};

struct ChatResponse {
    std::string text;
    std::string backend;
    std::uint64_t latency_ms = 0;
    std::optional<TokenUsage> token_usage;
};

/// Precondition violation: a request with an empty system or user prompt.
class InvalidRequest : public Error {
public:
    using Error::Error;
};

/// Non-transient rejection by the backend (4xx-class, or a malformed body).
class BackendRejected : public Error {
public:
    BackendRejected(int status, std::string body)
        : Error("backend rejected request: HTTP " + std::to_string(status) + ": " + body),
          status_(status),
          body_(std::move(body)) {}
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    int status_;
    std::string body_;
};

class ContextOverflow : public Error {
public:
    using Error::Error;
};

void validate_request(const ChatRequest& req);

/// Stable SHA-256 digest over (system, user, model). Throws InvalidRequest
/// for requests that violate the non-empty prompt invariant.
std::string fingerprint(const ChatRequest& req);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
    virtual std::string name() const = 0;
};

/// Canned responses keyed by fingerprint, then by substring of the user
/// prompt (file order), then an optional default.
struct MockScript {
    std::map<std::string, std::string> by_fingerprint;
    std::vector<std::pair<std::string, std::string>> by_substring;
    std::optional<std::string> default_response;

    /// Lines: {"fingerprint": d, "response": r} | {"match_substring": s, "response": r}
    ///        | {"default_response": r}
    static MockScript load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::optional<std::string> lookup(const ChatRequest& req) const;
};

class MockBackend final : public ChatBackend {
public:
    explicit MockBackend(MockScript script) : script_(std::move(script)) {}
    /// Throws BackendRejected(404) when no scripted response matches.
    ChatResponse complete(const ChatRequest& req) override;
    std::string name() const override { return "mock"; }

private:
    MockScript script_;
};

/// Counting limiter for concurrent remote calls.
class InFlightLimiter {
public:
    explicit InFlightLimiter(std::size_t limit) : available_(limit == 0 ? 1 : limit) {}
    void acquire();
    void release();

    class Guard {
    public:
        explicit Guard(InFlightLimiter& l) : l_(l) { l_.acquire(); }
        ~Guard() { l_.release(); }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

    private:
        InFlightLimiter& l_;
    };

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t available_;
};

struct RemoteConfig {
    std::string url;      // full chat-completions endpoint
    std::string api_key;  // sent as a bearer token when non-empty
    int max_retries = 3;
    std::chrono::milliseconds base_backoff{500};
    std::chrono::milliseconds max_backoff{30000};
    std::size_t max_in_flight = 4;

    /// Reads the bearer token from VFD_LLM_API_KEY.
    static std::string api_key_from_env();
};

/// OpenAI-compatible chat-completions client. Transient failures
/// (transport errors, 408, 429, 5xx) are retried with exponential backoff;
/// total attempts never exceed 1 + max_retries.
class RemoteBackend final : public ChatBackend {
public:
    RemoteBackend(RemoteConfig config, std::shared_ptr<HttpTransport> transport,
                  Sleeper sleeper = real_sleeper());
    ChatResponse complete(const ChatRequest& req) override;
    std::string name() const override { return "remote"; }

    std::uint64_t attempts() const { return attempts_; }

private:
    RemoteConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
    InFlightLimiter limiter_;
    std::atomic<std::uint64_t> attempts_{0};
};

json chat_request_body(const ChatRequest& req);

struct GatewayConfig {
    std::string model = "default";
    std::optional<double> temperature;  // omitted from requests unless set
    std::optional<std::uint32_t> max_tokens;
    /// Prompt window measured with the default tokenizer over system+user.
    std::optional<std::uint64_t> max_prompt_tokens;
    bool cache = false;
};

/// Front door for every prompt: stamps the configured model and sampling
/// options, enforces the prompt window, optionally caches by fingerprint and
/// notifies an observer of every request actually sent.
class LlmGateway {
public:
    LlmGateway(std::shared_ptr<ChatBackend> backend, GatewayConfig config);

    ChatResponse complete(ChatRequest req);

    using Observer = std::function<void(const ChatRequest&)>;
    void set_observer(Observer observer);

    const GatewayConfig& config() const { return config_; }
    std::string backend_name() const { return backend_->name(); }
    /// Digest of the configuration that affects outputs (no secrets).
    std::string config_digest() const;

private:
    std::shared_ptr<ChatBackend> backend_;
    GatewayConfig config_;
    std::mutex mu_;
    Observer observer_;
    std::map<std::string, ChatResponse> cache_;
};

}  // namespace vfd
