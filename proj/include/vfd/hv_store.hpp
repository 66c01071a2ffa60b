#pragma once

// Historical vulnerability store: embeddings of three-aspect summaries with
// their CVE metadata, searched by exact Euclidean distance within a
// programming language.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vfd/http.hpp"
#include "vfd/model.hpp"

namespace vfd {

inline constexpr std::string_view kCanonicalizationVersion = "three-aspect-v1";
inline constexpr std::string_view kDefaultEmbeddingModel = "gte-Qwen2-7B-instruct";

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t expected, std::size_t got)
        : Error("embedding dimension mismatch: expected " + std::to_string(expected) + ", got " +
                std::to_string(got)),
          expected_(expected),
          got_(got) {}
    std::size_t expected() const { return expected_; }
    std::size_t got() const { return got_; }

private:
    std::size_t expected_;
    std::size_t got_;
};

class DateViolation : public Error {
public:
    explicit DateViolation(std::string cve_id)
        : Error("record " + cve_id + " is not before the historical cutoff"), cve_id_(std::move(cve_id)) {}
    const std::string& cve_id() const { return cve_id_; }

private:
    std::string cve_id_;
};

/// Fixed text form fed to the embedder: three headed sections in fixed
/// order, one "- label: description" line per key point. Changing it
/// invalidates stored vectors; the version is written to the store header.
std::string canonical_summary_text(const ThreeAspectSummary& summary);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<float> embed_text(const std::string& text) = 0;
    virtual std::size_t dim() const = 0;
    virtual std::string model() const = 0;
};

/// Deterministic feature-hashing embedder for tests and offline runs: each
/// token adds a hash-derived +/-1 pattern to a few coordinates; the result
/// is L2-normalized.
class HashProjectionEmbedder final : public Embedder {
public:
    explicit HashProjectionEmbedder(std::size_t dim) : dim_(dim) {}
    std::vector<float> embed_text(const std::string& text) override;
    std::size_t dim() const override { return dim_; }
    std::string model() const override { return "hash-projection-v1"; }

private:
    std::size_t dim_;
};

/// POST {input, model} -> {embedding: [...]}.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(std::string url, std::string model, std::size_t dim, std::shared_ptr<HttpTransport> transport,
                   std::string api_key = {});
    std::vector<float> embed_text(const std::string& text) override;
    std::size_t dim() const override { return dim_; }
    std::string model() const override { return model_; }

private:
    std::string url_;
    std::string model_;
    std::size_t dim_;
    std::shared_ptr<HttpTransport> transport_;
    std::string api_key_;
};

/// Canonicalizes and embeds a summary. Throws DimensionMismatch when the
/// backend returns a vector of the wrong length, Error on non-finite values.
std::vector<float> embed(const ThreeAspectSummary& summary, Embedder& embedder);

struct HvQueryResult {
    HVRecord record;
    double distance = 0.0;
};

struct StoreHeader {
    std::size_t dim = 0;
    std::size_t count = 0;
    std::string metric = "euclidean";
    std::string canonicalization = std::string(kCanonicalizationVersion);
    std::string embedding_model;
};

class HvStore {
public:
    HvStore(std::size_t dim, std::string embedding_model);

    /// Validates and builds an in-memory store. Records must predate the
    /// cutoff unless flagged as promoted. Missing embeddings are computed
    /// with `embedder` when given.
    static HvStore build(std::vector<HVRecord> records, std::size_t dim, std::string embedding_model,
                         Embedder* embedder = nullptr);

    /// Loads a persisted store; promoted records are skipped when
    /// include_promoted is false.
    static HvStore open(const std::filesystem::path& path, bool include_promoted = true);

    /// Atomically writes the vector file and its metadata sidecar.
    void save(const std::filesystem::path& path) const;

    /// Appends one record under an exclusive file lock. Promoted records
    /// are exempt from the date rule. Returns false (and writes nothing)
    /// when a record promoted from the same result already exists.
    static bool append(const std::filesystem::path& path, const HVRecord& record);

    /// Exact argmin of Euclidean distance over records in `language`; ties
    /// go to the lexicographically smallest cve_id.
    std::optional<HvQueryResult> nearest(std::span<const float> query, Language language) const;
    /// The k closest, same ordering. Only k = 1 is used by detection.
    std::vector<HvQueryResult> nearest_k(std::span<const float> query, Language language, std::size_t k) const;

    std::size_t size() const { return records_.size(); }
    std::size_t dim() const { return dim_; }
    const std::string& embedding_model() const { return embedding_model_; }
    StoreHeader header() const;

    /// Record i with its embedding filled in.
    HVRecord record(std::size_t i) const;
    bool has_promoted_from(const std::string& result_id) const;

private:
    void add(HVRecord record);

    std::size_t dim_;
    std::string embedding_model_;
    std::vector<float> vectors_;     // row-major, size() x dim_
    std::vector<HVRecord> records_;  // embeddings stripped; see record()
    std::vector<std::vector<std::uint32_t>> by_language_;
};

std::filesystem::path store_metadata_path(const std::filesystem::path& path);

}  // namespace vfd
