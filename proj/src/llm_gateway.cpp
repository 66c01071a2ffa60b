#include "vfd/llm_gateway.hpp"

#include <algorithm>
#include <cstdlib>

#include "vfd/tokenizer.hpp"

namespace vfd {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ms(Clock::time_point start) {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count());
}

std::string rstrip(std::string s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\r' || s.back() == '\t')) {
        s.pop_back();
    }
    return s;
}

bool is_transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

bool mentions_context_overflow(const std::string& body) {
    static constexpr std::string_view kHints[] = {"context_length_exceeded", "maximum context length",
                                                  "context window", "too many tokens",
                                                  "prompt is too long"};
    std::string lower(body);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return std::any_of(std::begin(kHints), std::end(kHints),
                       [&](std::string_view h) { return lower.find(h) != std::string::npos; });
}

}  // namespace

void validate_request(const ChatRequest& req) {
    if (req.system.empty()) throw InvalidRequest("chat request has an empty system prompt");
    if (req.user.empty()) throw InvalidRequest("chat request has an empty user prompt");
}

std::string fingerprint(const ChatRequest& req) {
    validate_request(req);
    // Length-prefixed so that field boundaries cannot be shifted.
    std::string material;
    for (const auto* part : {&req.system, &req.user, &req.model}) {
        material += std::to_string(part->size());
        material += ':';
        material += *part;
    }
    return sha256_hex(material);
}

MockScript MockScript::load(const std::filesystem::path& path) {
    MockScript script;
    for (const auto& row : read_jsonl(path)) {
        if (row.contains("default_response")) {
            script.default_response = row.at("default_response").get<std::string>();
        } else if (row.contains("fingerprint")) {
            script.by_fingerprint[row.at("fingerprint").get<std::string>()] =
                row.at("response").get<std::string>();
        } else if (row.contains("match_substring")) {
            script.by_substring.emplace_back(row.at("match_substring").get<std::string>(),
                                             row.at("response").get<std::string>());
        } else {
            throw SchemaError(path.string() + ": mock script line needs fingerprint, "
                                              "match_substring or default_response");
        }
    }
    return script;
}

void MockScript::save(const std::filesystem::path& path) const {
    std::vector<json> rows;
    for (const auto& [fp, resp] : by_fingerprint) rows.push_back({{"fingerprint", fp}, {"response", resp}});
    for (const auto& [sub, resp] : by_substring) rows.push_back({{"match_substring", sub}, {"response", resp}});
    if (default_response) rows.push_back({{"default_response", *default_response}});
    write_jsonl(path, rows);
}

std::optional<std::string> MockScript::lookup(const ChatRequest& req) const {
    if (auto it = by_fingerprint.find(fingerprint(req)); it != by_fingerprint.end()) {
        return it->second;
    }
    for (const auto& [needle, response] : by_substring) {
        if (req.user.find(needle) != std::string::npos) return response;
    }
    return default_response;
}

ChatResponse MockBackend::complete(const ChatRequest& req) {
    auto start = Clock::now();
    auto text = script_.lookup(req);
    if (!text) throw BackendRejected(404, "no scripted response for fingerprint " + fingerprint(req));
    ChatResponse resp;
    resp.text = rstrip(*text);
    resp.backend = name();
    resp.latency_ms = elapsed_ms(start);
    return resp;
}

void InFlightLimiter::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
}

void InFlightLimiter::release() {
    {
        std::lock_guard lock(mu_);
        ++available_;
    }
    cv_.notify_one();
}

std::string RemoteConfig::api_key_from_env() {
    const char* key = std::getenv("VFD_LLM_API_KEY");
    return key ? std::string(key) : std::string{};
}

json chat_request_body(const ChatRequest& req) {
    json body{{"model", req.model},
              {"messages", json::array({{{"role", "system"}, {"content", req.system}},
                                        {{"role", "user"}, {"content", req.user}}})}};
    if (req.temperature) body["temperature"] = *req.temperature;
    if (req.max_tokens) body["max_tokens"] = *req.max_tokens;
    return body;
}

RemoteBackend::RemoteBackend(RemoteConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      limiter_(config_.max_in_flight) {
    if (config_.url.empty()) throw Error("remote LLM backend needs a URL");
    if (config_.max_retries < 0) throw Error("max_retries must be non-negative");
}

ChatResponse RemoteBackend::complete(const ChatRequest& req) {
    validate_request(req);
    HttpRequest http;
    http.method = "POST";
    http.url = config_.url;
    http.headers["Content-Type"] = "application/json";
    if (!config_.api_key.empty()) http.headers["Authorization"] = "Bearer " + config_.api_key;
    http.body = chat_request_body(req).dump();

    InFlightLimiter::Guard guard(limiter_);
    auto start = Clock::now();
    std::string last_failure;
    std::chrono::milliseconds hinted{0};  // from Retry-After
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            auto delay = std::max<std::chrono::milliseconds>(
                config_.base_backoff * (1LL << std::min(attempt - 1, 20)), hinted);
            sleeper_(std::min<std::chrono::milliseconds>(delay, config_.max_backoff));
            hinted = std::chrono::milliseconds{0};
        }
        ++attempts_;
        HttpResponse resp;
        try {
            resp = transport_->send(http);
        } catch (const TransportError& e) {
            last_failure = e.what();
            continue;
        }
        if (resp.status >= 200 && resp.status < 300) {
            json body;
            try {
                body = json::parse(resp.body);
                ChatResponse out;
                out.text = rstrip(body.at("choices").at(0).at("message").at("content").get<std::string>());
                out.backend = name();
                out.latency_ms = elapsed_ms(start);
                if (body.contains("usage") && body["usage"].is_object()) {
                    out.token_usage = TokenUsage{body["usage"].value("prompt_tokens", 0ULL),
                                                 body["usage"].value("completion_tokens", 0ULL)};
                }
                return out;
            } catch (const json::exception& e) {
                throw BackendRejected(resp.status, std::string("malformed completion body: ") + e.what());
            }
        }
        if ((resp.status == 400 || resp.status == 413) && mentions_context_overflow(resp.body)) {
            throw ContextOverflow("backend reports prompt exceeds its context window: " + resp.body);
        }
        if (!is_transient_status(resp.status)) throw BackendRejected(resp.status, resp.body);
        last_failure = "HTTP " + std::to_string(resp.status);
        if (auto retry_after = resp.header("retry-after"); !retry_after.empty()) {
            char* end = nullptr;
            long secs = std::strtol(retry_after.c_str(), &end, 10);
            if (end != retry_after.c_str() && secs > 0) hinted = std::chrono::seconds(secs);
        }
    }
    throw TransportError("chat completion failed after " + std::to_string(config_.max_retries + 1) +
                         " attempts: " + last_failure);
}

LlmGateway::LlmGateway(std::shared_ptr<ChatBackend> backend, GatewayConfig config)
    : backend_(std::move(backend)), config_(std::move(config)) {
    if (!backend_) throw Error("gateway needs a backend");
}

void LlmGateway::set_observer(Observer observer) {
    std::lock_guard lock(mu_);
    observer_ = std::move(observer);
}

ChatResponse LlmGateway::complete(ChatRequest req) {
    if (req.model.empty()) req.model = config_.model;
    if (!req.temperature) req.temperature = config_.temperature;
    if (!req.max_tokens) req.max_tokens = config_.max_tokens;
    validate_request(req);
    if (config_.max_prompt_tokens) {
        auto tokens = count_tokens(req.system) + count_tokens(req.user);
        if (tokens > *config_.max_prompt_tokens) {
            throw ContextOverflow("prompt has " + std::to_string(tokens) + " tokens, window is " +
                                  std::to_string(*config_.max_prompt_tokens));
        }
    }
    std::string key;
    {
        std::lock_guard lock(mu_);
        if (config_.cache) {
            key = fingerprint(req);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        if (observer_) observer_(req);
    }
    auto resp = backend_->complete(req);
    if (config_.cache) {
        std::lock_guard lock(mu_);
        cache_.emplace(key, resp);
    }
    return resp;
}

std::string LlmGateway::config_digest() const {
    json j{{"backend", backend_->name()},
           {"model", config_.model},
           {"temperature", config_.temperature ? json(*config_.temperature) : json(nullptr)},
           {"max_tokens", config_.max_tokens ? json(*config_.max_tokens) : json(nullptr)},
           {"max_prompt_tokens", config_.max_prompt_tokens ? json(*config_.max_prompt_tokens) : json(nullptr)},
           {"cache", config_.cache}};
    return sha256_hex(j.dump());
}

}  // namespace vfd
