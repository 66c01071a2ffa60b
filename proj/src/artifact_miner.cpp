#include "vfd/artifact_miner.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <future>
#include <map>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

#include "vfd/llm_gateway.hpp"

namespace vfd {

namespace {

std::string regex_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::string_view("\\^$.|?*+()[]{}").find(c) != std::string_view::npos) out += '\\';
        out += c;
    }
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::optional<std::uint64_t> positive_number(const std::string& digits) {
    if (digits.empty() || digits.size() > 18) return std::nullopt;
    auto n = std::stoull(digits);
    if (n == 0) return std::nullopt;
    return n;
}

std::chrono::seconds retry_after_of(const HttpResponse& resp) {
    if (auto ra = resp.header("retry-after"); !ra.empty()) {
        return std::chrono::seconds(std::max(1L, std::strtol(ra.c_str(), nullptr, 10)));
    }
    if (auto reset = resp.header("x-ratelimit-reset"); !reset.empty()) {
        auto at = std::strtoll(reset.c_str(), nullptr, 10);
        auto now = static_cast<long long>(std::time(nullptr));
        return std::chrono::seconds(std::max(1LL, at - now));
    }
    return std::chrono::seconds(60);
}

}  // namespace

std::vector<ArtifactRef> parse_autolink_refs(std::string_view message, std::string_view default_repo,
                                             std::string_view forge_host) {
    const std::string pattern =
        // 1-3: full URL
        R"(https?://(?:www\.)?)" + regex_escape(forge_host) +
        R"(/([A-Za-z0-9][A-Za-z0-9-]*)/([A-Za-z0-9._-]+)/(?:issues|pull)/(\d+)(?![A-Za-z0-9_]))"
        // 4-5: owner/name#N
        R"(|(?:^|[^A-Za-z0-9_/#&.-])([A-Za-z0-9][A-Za-z0-9-]*/[A-Za-z0-9._-]+)#(\d+)(?![A-Za-z0-9_]))"
        // 6: #N
        R"(|(?:^|[^A-Za-z0-9_/#&])#(\d+)(?![A-Za-z0-9_]))"
        // 7: GH-N
        R"(|(?:^|[^A-Za-z0-9_/#&-])GH-(\d+)(?![A-Za-z0-9_]))";
    static thread_local std::map<std::string, std::regex> cache;
    auto it = cache.find(pattern);
    if (it == cache.end()) {
        it = cache.emplace(pattern, std::regex(pattern, std::regex::ECMAScript | std::regex::icase)).first;
    }

    std::vector<ArtifactRef> refs;
    std::set<std::pair<std::string, std::uint64_t>> seen;
    auto add = [&](std::string repo, const std::string& digits) {
        auto n = positive_number(digits);
        if (!n || !is_well_formed_repo(repo)) return;
        if (seen.emplace(lower(repo), *n).second) {
            refs.push_back({std::move(repo), *n, RefSource::MessageAutolink});
        }
    };

    std::string text(message);
    for (std::sregex_iterator m(text.begin(), text.end(), it->second), end; m != end; ++m) {
        const auto& g = *m;
        if (g[3].matched) {
            add(g[1].str() + "/" + g[2].str(), g[3].str());
        } else if (g[5].matched) {
            add(g[4].str(), g[5].str());
        } else if (g[6].matched) {
            add(std::string(default_repo), g[6].str());
        } else if (g[7].matched) {
            add(std::string(default_repo), g[7].str());
        }
    }
    return refs;
}

std::string ForgeConfig::token_from_env() {
    const char* t = std::getenv("VFD_FORGE_TOKEN");
    return t ? std::string(t) : std::string{};
}

DevArtifact truncate_body(DevArtifact artifact, std::size_t cap) {
    if (artifact.body.size() <= cap) return artifact;
    std::size_t cut = cap;
    // Back off continuation bytes so the cut lands on a code point start.
    while (cut > 0 && (static_cast<unsigned char>(artifact.body[cut]) & 0xC0) == 0x80) --cut;
    artifact.body.resize(cut);
    return artifact;
}

ForgeClient::ForgeClient(ForgeConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    if (config_.api_base.empty() || config_.api_base.find("://") == std::string::npos) {
        throw ConfigError("forge api_base must be an absolute URL");
    }
    while (config_.api_base.ends_with('/')) config_.api_base.pop_back();
    if (!transport_) throw ConfigError("forge client needs a transport");
}

HttpResponse ForgeClient::get(const std::string& path) {
    HttpRequest req;
    req.method = "GET";
    req.url = config_.api_base + path;
    req.headers["Accept"] = "application/vnd.github+json";
    req.headers["User-Agent"] = "vfd-artifact-miner";
    if (!config_.token.empty()) req.headers["Authorization"] = "Bearer " + config_.token;
    auto resp = transport_->send(req);
    if (resp.status >= 200 && resp.status < 300) return resp;
    if (resp.status == 404 || resp.status == 410 || resp.status == 422) {
        throw NotFound("GET " + path + ": HTTP " + std::to_string(resp.status), resp.status);
    }
    if (resp.status == 429 || (resp.status == 403 && (resp.header("x-ratelimit-remaining") == "0" ||
                                                      !resp.header("retry-after").empty()))) {
        throw RateLimited("GET " + path + ": rate limited", retry_after_of(resp));
    }
    if (resp.status == 401) throw ConfigError("forge rejected credentials (HTTP 401)");
    throw TransportError("GET " + path + ": HTTP " + std::to_string(resp.status));
}

std::vector<ArtifactRef> ForgeClient::list_associated_prs(const std::string& repo, const std::string& commit_hash) {
    if (!is_well_formed_repo(repo)) throw ConfigError("malformed repo: " + repo);
    auto resp = get("/repos/" + repo + "/commits/" + commit_hash + "/pulls");
    json body;
    try {
        body = json::parse(resp.body);
    } catch (const json::parse_error& e) {
        throw TransportError(std::string("malformed forge response: ") + e.what());
    }
    std::vector<ArtifactRef> refs;
    if (!body.is_array()) return refs;
    for (const auto& pr : body) {
        if (!pr.contains("number") || !pr["number"].is_number_unsigned()) continue;
        std::string pr_repo = repo;
        if (pr.contains("base") && pr["base"].contains("repo") && pr["base"]["repo"].contains("full_name")) {
            pr_repo = pr["base"]["repo"]["full_name"].get<std::string>();
        }
        refs.push_back({pr_repo, pr["number"].get<std::uint64_t>(), RefSource::PRAssociationEndpoint});
    }
    return refs;
}

DevArtifact ForgeClient::fetch_artifact(const ArtifactRef& ref, const std::string& linked_commit_id) {
    if (!is_well_formed_repo(ref.repo) || ref.number == 0) {
        throw ConfigError("malformed artifact ref " + ref.repo + "#" + std::to_string(ref.number));
    }
    const auto n = std::to_string(ref.number);
    HttpResponse resp;
    ArtifactKind kind = ArtifactKind::PullRequest;
    try {
        resp = get("/repos/" + ref.repo + "/pulls/" + n);
    } catch (const NotFound& e) {
        // 410 means the artifact was deleted; no point asking the issues endpoint.
        if (e.status() == 410) throw;
        resp = get("/repos/" + ref.repo + "/issues/" + n);
        kind = ArtifactKind::IssueReport;
    }
    json body;
    try {
        body = json::parse(resp.body);
    } catch (const json::parse_error& e) {
        throw TransportError(std::string("malformed forge response: ") + e.what());
    }
    if (kind == ArtifactKind::IssueReport && body.contains("pull_request")) kind = ArtifactKind::PullRequest;
    DevArtifact a;
    a.kind = kind;
    a.number = ref.number;
    a.title = body.value("title", json()).is_string() ? body["title"].get<std::string>() : "";
    a.body = body.value("body", json()).is_string() ? body["body"].get<std::string>() : "";
    a.source_url = body.value("html_url", json()).is_string()
                       ? body["html_url"].get<std::string>()
                       : "https://" + config_.web_host + "/" + ref.repo +
                             (kind == ArtifactKind::PullRequest ? "/pull/" : "/issues/") + n;
    a.linked_commit_id = linked_commit_id;
    return truncate_body(std::move(a), config_.body_cap);
}

template <typename F>
auto ForgeClient::with_rate_limit(F&& op, std::chrono::seconds& waited) {
    for (;;) {
        try {
            return op();
        } catch (const RateLimited& e) {
            if (waited + e.retry_after() > config_.rate_limit_budget) throw;
            spdlog::warn("forge rate limited; waiting {}s", e.retry_after().count());
            sleeper_(e.retry_after());
            waited += e.retry_after();
        }
    }
}

MinedArtifacts ForgeClient::mine_commit_artifacts(const Commit& commit) {
    if (!is_well_formed_repo(commit.repo)) throw ConfigError("commit has malformed repo: " + commit.repo);
    MinedArtifacts out;
    std::chrono::seconds waited{0};

    auto refs = parse_autolink_refs(commit.message, commit.repo, config_.web_host);
    auto hash = commit.id.substr(commit.id.rfind('@') + 1);
    try {
        auto prs = with_rate_limit([&] { return list_associated_prs(commit.repo, hash); }, waited);
        refs.insert(refs.end(), prs.begin(), prs.end());
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        out.warnings.push_back(std::string("association endpoint: ") + e.what());
        spdlog::warn("{}: association endpoint failed: {}", commit.id, e.what());
    }

    // Dedup by (repo, number), ordered deterministically.
    std::map<std::pair<std::string, std::uint64_t>, ArtifactRef> unique;
    for (auto& r : refs) unique.try_emplace({lower(r.repo), r.number}, r);

    InFlightLimiter limiter(config_.max_in_flight);
    std::vector<std::future<DevArtifact>> pending;
    std::vector<const ArtifactRef*> order;
    for (const auto& [key, ref] : unique) {
        order.push_back(&ref);
        pending.push_back(std::async(std::launch::async, [&, ref_ptr = &ref] {
            InFlightLimiter::Guard guard(limiter);
            std::chrono::seconds local_wait = waited;
            return with_rate_limit([&] { return fetch_artifact(*ref_ptr, commit.id); }, local_wait);
        }));
    }
    std::optional<ConfigError> config_failure;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        try {
            out.artifacts.push_back(pending[i].get());
        } catch (const ConfigError& e) {
            config_failure = e;
        } catch (const Error& e) {
            auto msg = order[i]->repo + "#" + std::to_string(order[i]->number) + ": " + e.what();
            spdlog::warn("{}: artifact fetch failed: {}", commit.id, msg);
            out.warnings.push_back(std::move(msg));
        }
    }
    if (config_failure) throw *config_failure;
    return out;
}

}  // namespace vfd
