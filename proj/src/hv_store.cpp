#include "vfd/hv_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

namespace vfd {

static_assert(std::endian::native == std::endian::little, "store format is little-endian float32");

namespace {

constexpr char kMagic[8] = {'V', 'F', 'D', 'H', 'V', '0', '0', '1'};

std::size_t language_index(Language lang) { return static_cast<std::size_t>(lang); }

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class FileLock {
public:
    explicit FileLock(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
        if (fd_ < 0) throw Error("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw Error("cannot lock " + path.string());
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

/// Squared distance accumulated in double over float inputs.
double squared_distance(const float* a, const float* b, std::size_t dim) {
    double sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum;
}

}  // namespace

std::string canonical_summary_text(const ThreeAspectSummary& summary) {
    std::string out;
    auto section = [&](std::string_view header, const std::vector<KeyPoint>& points) {
        out += header;
        out += '\n';
        for (const auto& kp : points) {
            out += "- " + kp.label + ": " + kp.description + "\n";
        }
    };
    section("Code Change Summary", summary.summary);
    section("Purpose of the Change", summary.purpose);
    section("Implications of the Change", summary.implications);
    return out;
}

std::vector<float> HashProjectionEmbedder::embed_text(const std::string& text) {
    if (dim_ == 0) throw Error("embedding dimension must be positive");
    std::vector<double> acc(dim_, 0.0);
    // Tokens are lower-cased alphanumeric runs; each token touches 4 coordinates.
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        std::uint64_t state = fnv1a(token);
        for (int k = 0; k < 4; ++k) {
            auto r = splitmix(state);
            acc[r % dim_] += (r >> 63) ? 1.0 : -1.0;
        }
        token.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            token += static_cast<char>(std::tolower(c));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = norm > 0 ? static_cast<float>(acc[i] / norm) : 0.0f;
    return out;
}

RemoteEmbedder::RemoteEmbedder(std::string url, std::string model, std::size_t dim,
                               std::shared_ptr<HttpTransport> transport, std::string api_key)
    : url_(std::move(url)),
      model_(std::move(model)),
      dim_(dim),
      transport_(std::move(transport)),
      api_key_(std::move(api_key)) {}

std::vector<float> RemoteEmbedder::embed_text(const std::string& text) {
    HttpRequest req;
    req.method = "POST";
    req.url = url_;
    req.headers["Content-Type"] = "application/json";
    if (!api_key_.empty()) req.headers["Authorization"] = "Bearer " + api_key_;
    req.body = json{{"input", text}, {"model", model_}}.dump();
    auto resp = transport_->send(req);
    if (resp.status != 200) {
        throw TransportError("embedding request failed: HTTP " + std::to_string(resp.status));
    }
    try {
        return json::parse(resp.body).at("embedding").get<std::vector<float>>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed embedding response: ") + e.what());
    }
}

std::vector<float> embed(const ThreeAspectSummary& summary, Embedder& embedder) {
    auto v = embedder.embed_text(canonical_summary_text(summary));
    if (v.size() != embedder.dim()) throw DimensionMismatch(embedder.dim(), v.size());
    for (float x : v) {
        if (!std::isfinite(x)) throw Error("embedding contains a non-finite value");
    }
    return v;
}

std::filesystem::path store_metadata_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".meta.jsonl";
    return p;
}

HvStore::HvStore(std::size_t dim, std::string embedding_model)
    : dim_(dim), embedding_model_(std::move(embedding_model)), by_language_(std::size(kAllLanguages)) {
    if (dim_ == 0) throw Error("store dimension must be positive");
}

void HvStore::add(HVRecord record) {
    if (record.embedding.size() != dim_) throw DimensionMismatch(dim_, record.embedding.size());
    for (float x : record.embedding) {
        if (!std::isfinite(x)) throw Error("record " + record.cve_id + " has a non-finite embedding");
    }
    vectors_.insert(vectors_.end(), record.embedding.begin(), record.embedding.end());
    record.embedding.clear();
    by_language_[language_index(record.language)].push_back(static_cast<std::uint32_t>(records_.size()));
    records_.push_back(std::move(record));
}

HvStore HvStore::build(std::vector<HVRecord> records, std::size_t dim, std::string embedding_model,
                       Embedder* embedder) {
    HvStore store(dim, std::move(embedding_model));
    store.records_.reserve(records.size());
    store.vectors_.reserve(records.size() * dim);
    for (auto& r : records) {
        if (!r.promoted && !(r.disclosed_at < kHistoricalCutoff)) throw DateViolation(r.cve_id);
        if (r.embedding.empty() && embedder) r.embedding = embed(r.three_aspects, *embedder);
        store.add(std::move(r));
    }
    return store;
}

StoreHeader HvStore::header() const {
    StoreHeader h;
    h.dim = dim_;
    h.count = records_.size();
    h.embedding_model = embedding_model_;
    return h;
}

HVRecord HvStore::record(std::size_t i) const {
    HVRecord r = records_.at(i);
    r.embedding.assign(vectors_.begin() + static_cast<std::ptrdiff_t>(i * dim_),
                       vectors_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_));
    return r;
}

bool HvStore::has_promoted_from(const std::string& result_id) const {
    return std::any_of(records_.begin(), records_.end(),
                       [&](const HVRecord& r) { return r.promoted && r.promoted_from == result_id; });
}

void HvStore::save(const std::filesystem::path& path) const {
    std::string meta;
    for (const auto& r : records_) {
        meta += json(r).dump();
        meta += '\n';
    }
    json header{{"dim", dim_},
                {"count", records_.size()},
                {"metric", "euclidean"},
                {"canonicalization", kCanonicalizationVersion},
                {"embedding_model", embedding_model_}};
    auto header_text = header.dump();
    std::string blob(kMagic, sizeof kMagic);
    auto header_len = static_cast<std::uint32_t>(header_text.size());
    blob.append(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    blob += header_text;
    blob.append(reinterpret_cast<const char*>(vectors_.data()), vectors_.size() * sizeof(float));
    // Sidecar first: readers trust the vector header's count and read that
    // many metadata lines, so a superset sidecar is always consistent.
    write_file_atomic(store_metadata_path(path), meta);
    write_file_atomic(path, blob);
}

HvStore HvStore::open(const std::filesystem::path& path, bool include_promoted) {
    auto blob = read_file(path);
    if (blob.size() < sizeof kMagic + 4 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
        throw SchemaError(path.string() + ": not a historical vulnerability store");
    }
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, blob.data() + sizeof kMagic, sizeof header_len);
    const std::size_t header_off = sizeof kMagic + sizeof header_len;
    if (blob.size() < header_off + header_len) throw SchemaError(path.string() + ": truncated header");
    auto header = json::parse(blob.substr(header_off, header_len));
    if (header.value("metric", "") != "euclidean") throw SchemaError(path.string() + ": unsupported metric");
    if (header.value("canonicalization", "") != kCanonicalizationVersion) {
        throw SchemaError(path.string() + ": stored vectors use canonicalization " +
                          header.value("canonicalization", std::string("?")));
    }
    const auto dim = header.at("dim").get<std::size_t>();
    const auto count = header.at("count").get<std::size_t>();
    const std::size_t data_off = header_off + header_len;
    if (blob.size() != data_off + count * dim * sizeof(float)) {
        throw SchemaError(path.string() + ": vector payload size does not match header");
    }

    std::ifstream meta(store_metadata_path(path), std::ios::binary);
    if (!meta) throw Error("cannot open " + store_metadata_path(path).string());

    HvStore store(dim, header.value("embedding_model", ""));
    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(meta, line)) throw SchemaError(path.string() + ": metadata sidecar is short");
        auto rec = json::parse(line).get<HVRecord>();
        if (!include_promoted && rec.promoted) continue;
        rec.embedding.resize(dim);
        std::memcpy(rec.embedding.data(), blob.data() + data_off + i * dim * sizeof(float), dim * sizeof(float));
        store.add(std::move(rec));
    }
    return store;
}

bool HvStore::append(const std::filesystem::path& path, const HVRecord& record) {
    auto lock_path = path;
    lock_path += ".lock";
    FileLock lock(lock_path);
    auto store = open(path, true);
    if (!record.promoted && !(record.disclosed_at < kHistoricalCutoff)) throw DateViolation(record.cve_id);
    if (record.promoted && store.has_promoted_from(record.promoted_from)) return false;
    store.add(record);
    store.save(path);
    return true;
}

std::vector<HvQueryResult> HvStore::nearest_k(std::span<const float> query, Language language, std::size_t k) const {
    if (query.size() != dim_) throw DimensionMismatch(dim_, query.size());
    if (k == 0) return {};
    struct Candidate {
        double d2;
        std::uint32_t index;
    };
    auto better = [&](const Candidate& a, const Candidate& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        const auto& ca = records_[a.index].cve_id;
        const auto& cb = records_[b.index].cve_id;
        if (ca != cb) return ca < cb;
        return a.index < b.index;
    };
    // Max-heap of the best k seen so far.
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(better)> heap(better);
    for (auto idx : by_language_[language_index(language)]) {
        Candidate c{squared_distance(query.data(), vectors_.data() + static_cast<std::size_t>(idx) * dim_, dim_), idx};
        if (heap.size() < k) {
            heap.push(c);
        } else if (better(c, heap.top())) {
            heap.pop();
            heap.push(c);
        }
    }
    std::vector<HvQueryResult> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
        auto c = heap.top();
        heap.pop();
        out.push_back({record(c.index), std::sqrt(c.d2)});
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::optional<HvQueryResult> HvStore::nearest(std::span<const float> query, Language language) const {
    auto hits = nearest_k(query, language, 1);
    if (hits.empty()) return std::nullopt;
    return std::move(hits.front());
}

}  // namespace vfd
