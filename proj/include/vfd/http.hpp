#pragma once

// Minimal HTTP abstraction shared by the LLM gateway, the embedding client,
// the forge client and the CVE fetcher. Tests swap the network for a
// cassette (recorded interactions replayed in order of match).

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "vfd/model.hpp"

namespace vfd {

/// Connection-level failure (DNS, refused, timeout, TLS).
class TransportError : public Error {
public:
    using Error::Error;
};

struct HttpRequest {
    std::string method = "GET";
    std::string url;  // absolute: scheme://host[:port]/path?query
    std::map<std::string, std::string> headers;
    std::string body;
};

struct HttpResponse {
    int status = 0;
    std::map<std::string, std::string> headers;  // lower-cased names
    std::string body;

    std::string header(const std::string& lower_name) const;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    /// Throws TransportError when no HTTP response was obtained.
    virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// Real network transport backed by cpp-httplib (http and https).
class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(std::chrono::seconds timeout = std::chrono::seconds(120));
    HttpResponse send(const HttpRequest& request) override;

private:
    std::chrono::seconds timeout_;
};

/// Replays recorded interactions. Each line of a cassette file is
/// {"method", "url", "status", "headers"?, "body"}. A recorded interaction
/// is consumed on use; when several match a request they are served in file
/// order, and the last match is replayed indefinitely once the others are
/// used up. Unmatched requests raise TransportError.
class CassetteTransport : public HttpTransport {
public:
    struct Interaction {
        std::string method;
        std::string url;
        HttpResponse response;
    };

    CassetteTransport() = default;
    explicit CassetteTransport(std::vector<Interaction> interactions);
    static CassetteTransport load(const std::filesystem::path& path);

    void add(Interaction interaction);
    HttpResponse send(const HttpRequest& request) override;

    std::vector<HttpRequest> requests() const;

private:
    mutable std::mutex mu_;
    std::vector<Interaction> interactions_;
    std::vector<bool> used_;
    std::vector<HttpRequest> seen_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

struct UrlParts {
    std::string scheme_host;  // "https://api.github.com:443"
    std::string path;         // "/repos/x/y?z=1"
};
UrlParts split_url(const std::string& url);

std::string url_encode(std::string_view s);

}  // namespace vfd
