#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vfd/http.hpp"
#include "vfd/model.hpp"

namespace vfd {

enum class RefSource { MessageAutolink, PRAssociationEndpoint };

struct ArtifactRef {
    std::string repo;  // "owner/name"
    std::uint64_t number = 0;
    RefSource source = RefSource::MessageAutolink;

    bool operator==(const ArtifactRef&) const = default;
};

/// Issue/PR references in a commit message: "#N", "GH-N", "owner/name#N"
/// and full issue or pull URLs on `forge_host`. Short forms bind to
/// default_repo. Deduplicated by (repo, number), first appearance kept.
std::vector<ArtifactRef> parse_autolink_refs(std::string_view message, std::string_view default_repo,
                                             std::string_view forge_host = "github.com");

class NotFound : public Error {
public:
    explicit NotFound(std::string what, int status = 404) : Error(std::move(what)), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

class RateLimited : public Error {
public:
    RateLimited(std::string what, std::chrono::seconds retry_after)
        : Error(std::move(what)), retry_after_(retry_after) {}
    std::chrono::seconds retry_after() const { return retry_after_; }

private:
    std::chrono::seconds retry_after_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

struct ForgeConfig {
    std::string api_base = "https://api.github.com";
    std::string web_host = "github.com";
    std::string token;  // bearer token; empty means unauthenticated
    std::size_t max_in_flight = 4;
    /// Total time the miner may spend waiting out rate limits per commit.
    std::chrono::seconds rate_limit_budget{900};
    std::size_t body_cap = 20000;

    /// Reads VFD_FORGE_TOKEN.
    static std::string token_from_env();
};

/// Keeps at most `cap` bytes of the body, cut on a UTF-8 boundary.
DevArtifact truncate_body(DevArtifact artifact, std::size_t cap);

struct MinedArtifacts {
    std::vector<DevArtifact> artifacts;  // sorted by (repo, number)
    std::vector<std::string> warnings;
};

/// REST client for issue/PR lookups.
class ForgeClient {
public:
    ForgeClient(ForgeConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper = real_sleeper());

    /// PRs containing the commit. Throws NotFound, RateLimited, TransportError.
    std::vector<ArtifactRef> list_associated_prs(const std::string& repo, const std::string& commit_hash);

    /// Tries the pulls endpoint first, then issues; the endpoint that
    /// resolves the number decides the kind.
    DevArtifact fetch_artifact(const ArtifactRef& ref, const std::string& linked_commit_id = "");

    /// Union of message autolinks and the association endpoint, fetched.
    /// Individual fetch failures become warnings; only configuration errors
    /// propagate.
    MinedArtifacts mine_commit_artifacts(const Commit& commit);

    const ForgeConfig& config() const { return config_; }

private:
    HttpResponse get(const std::string& path);
    template <typename F>
    auto with_rate_limit(F&& op, std::chrono::seconds& waited);

    ForgeConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
};

}  // namespace vfd
