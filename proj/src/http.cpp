#include "vfd/http.hpp"

#include <algorithm>
#include <cctype>
#include <thread>

#include <httplib.h>

namespace vfd {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

std::string HttpResponse::header(const std::string& lower_name) const {
    auto it = headers.find(lower_name);
    return it == headers.end() ? std::string{} : it->second;
}

UrlParts split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error("not an absolute URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::string url_encode(std::string_view s) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += kHex[c >> 4];
            out += kHex[c & 0xf];
        }
    }
    return out;
}

HttplibTransport::HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

HttpResponse HttplibTransport::send(const HttpRequest& request) {
    auto parts = split_url(request.url);
    httplib::Client client(parts.scheme_host);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    client.set_follow_location(true);

    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
        if (lower(k) == "content-type") {
            content_type = v;
        } else {
            headers.emplace(k, v);
        }
    }

    httplib::Result res;
    if (request.method == "GET") {
        res = client.Get(parts.path, headers);
    } else if (request.method == "POST") {
        res = client.Post(parts.path, headers, request.body, content_type);
    } else {
        throw Error("unsupported HTTP method " + request.method);
    }
    if (!res) {
        throw TransportError(request.method + " " + request.url + ": " + httplib::to_string(res.error()));
    }
    HttpResponse out;
    out.status = res->status;
    out.body = res->body;
    for (const auto& [k, v] : res->headers) out.headers[lower(k)] = v;
    return out;
}

CassetteTransport::CassetteTransport(std::vector<Interaction> interactions)
    : interactions_(std::move(interactions)), used_(interactions_.size(), false) {}

CassetteTransport CassetteTransport::load(const std::filesystem::path& path) {
    std::vector<Interaction> list;
    for (const auto& row : read_jsonl(path)) {
        Interaction it;
        it.method = row.value("method", "GET");
        it.url = row.at("url").get<std::string>();
        it.response.status = row.at("status").get<int>();
        if (row.contains("headers")) {
            for (const auto& [k, v] : row.at("headers").items()) {
                it.response.headers[lower(k)] = v.get<std::string>();
            }
        }
        const auto& body = row.at("body");
        it.response.body = body.is_string() ? body.get<std::string>() : body.dump();
        list.push_back(std::move(it));
    }
    return CassetteTransport(std::move(list));
}

void CassetteTransport::add(Interaction interaction) {
    std::lock_guard lock(mu_);
    for (auto& [k, v] : std::map(interaction.response.headers)) {
        interaction.response.headers.erase(k);
        interaction.response.headers[lower(k)] = v;
    }
    interactions_.push_back(std::move(interaction));
    used_.push_back(false);
}

HttpResponse CassetteTransport::send(const HttpRequest& request) {
    std::lock_guard lock(mu_);
    seen_.push_back(request);
    std::optional<std::size_t> last_match;
    for (std::size_t i = 0; i < interactions_.size(); ++i) {
        const auto& it = interactions_[i];
        if (it.method != request.method || it.url != request.url) continue;
        last_match = i;
        if (!used_[i]) {
            used_[i] = true;
            return it.response;
        }
    }
    if (last_match) return interactions_[*last_match].response;
    throw TransportError("cassette has no interaction for " + request.method + " " + request.url);
}

std::vector<HttpRequest> CassetteTransport::requests() const {
    std::lock_guard lock(mu_);
    return seen_;
}

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

}  // namespace vfd
