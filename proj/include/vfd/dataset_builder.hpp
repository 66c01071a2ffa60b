#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vfd/http.hpp"
#include "vfd/model.hpp"
#include "vfd/tokenizer.hpp"

namespace vfd {

struct CveEntry {
    std::string cve_id;
    std::string description;
    std::vector<std::string> references;
    Date published_at{};

    bool operator==(const CveEntry&) const = default;
};

void to_json(json& j, const CveEntry& e);
void from_json(const json& j, CveEntry& e);

bool is_well_formed_cve_id(std::string_view id);

std::vector<CveEntry> load_cve_snapshot(const std::filesystem::path& path);
void save_cve_snapshot(const std::filesystem::path& path, const std::vector<CveEntry>& entries);

/// Normalizes one page of the NVD CVE API (2.0) into snapshot records.
/// Uses the English description and the date part of "published".
std::vector<CveEntry> cves_from_nvd_page(const json& page);

struct NvdFetchOptions {
    std::string base_url = "https://services.nvd.nist.gov/rest/json/cves/2.0";
    std::string pub_start;  // ISO-8601, passed through as pubStartDate
    std::string pub_end;
    std::string api_key;    // optional NVD apiKey header
    std::size_t page_size = 2000;
    std::chrono::milliseconds page_delay{6000};
};

/// Walks every result page for the publication window.
std::vector<CveEntry> fetch_nvd_cves(HttpTransport& transport, const NvdFetchOptions& options,
                                     const Sleeper& sleeper = real_sleeper());

struct CommitRef {
    std::string repo;
    std::string hash;  // lower-case hex, possibly abbreviated

    auto operator<=>(const CommitRef&) const = default;
};

/// "<forge>/<owner>/<name>/commit/<hex>" references, in order, deduplicated.
std::vector<CommitRef> extract_fix_commit_urls(const CveEntry& entry, std::string_view forge_host = "github.com");

template <typename T>
struct DateSplit {
    std::vector<T> historical;  // strictly before the cutoff
    std::vector<T> evaluation;  // on or after the cutoff
};

template <typename T, typename DateOf>
DateSplit<T> split_by_date(const std::vector<T>& items, DateOf date_of, Date cutoff = kHistoricalCutoff) {
    DateSplit<T> out;
    for (const auto& item : items) {
        (date_of(item) < cutoff ? out.historical : out.evaluation).push_back(item);
    }
    return out;
}

inline DateSplit<CveEntry> split_by_date(const std::vector<CveEntry>& entries, Date cutoff = kHistoricalCutoff) {
    return split_by_date(entries, [](const CveEntry& e) { return e.published_at; }, cutoff);
}

struct SamplingSpec {
    std::uint32_t nvf_per_vf = 16;
    std::uint64_t seed = 0;
};

struct SampleResult {
    std::vector<Commit> nvf;                      // ordered by (repo, id)
    std::map<std::string, std::size_t> shortfall;  // repo -> commits missing from target
};

/// Per-repo sampling without replacement: each repo contributes
/// nvf_per_vf x (its VF count) commits from its own pool. Pool members whose
/// id is a VF commit or appears in `excluded_ids` are never drawn. The draw
/// depends only on the seed, the repo name and the pool contents.
SampleResult sample_nvf(const std::vector<Commit>& vf, const std::map<std::string, std::vector<Commit>>& pools,
                        const SamplingSpec& spec, const std::set<std::string>& excluded_ids = {});

/// Nearest-rank percentile: the ceil(p*N)-th smallest value (1-based).
std::uint64_t nearest_rank_percentile(std::vector<std::uint64_t> values, double percentile);

struct TokenFilterResult {
    std::vector<DatasetEntry> kept;
    std::vector<DatasetEntry> removed;
    std::uint64_t threshold = 0;
};

/// Keeps entries whose commit token_length is at most the percentile value.
TokenFilterResult filter_by_token_length(const std::vector<DatasetEntry>& entries, double percentile = 0.99);

/// True when the NVF:VF ratio does not exceed nvf_per_vf.
bool ratio_within(const std::vector<DatasetEntry>& entries, std::uint32_t nvf_per_vf);
bool ratio_within(std::uint64_t vf_count, std::uint64_t nvf_count, std::uint32_t nvf_per_vf);

struct DatasetMetadata {
    std::string created_at;
    std::uint64_t seed = 0;
    std::uint32_t ratio = 16;
    std::string sampling = "per-repo";
    std::string tokenizer;
    double percentile = 0.99;
    std::uint64_t threshold = 0;
    std::string cutoff;
    std::uint64_t vf_count = 0;
    std::uint64_t nvf_count = 0;
    std::uint64_t removed_count = 0;
    std::map<std::string, std::size_t> shortfall;
};

void to_json(json& j, const DatasetMetadata& m);
void from_json(const json& j, DatasetMetadata& m);

struct BuildOptions {
    SamplingSpec sampling;
    double percentile = 0.99;
    Date cutoff = kHistoricalCutoff;
    std::string forge_host = "github.com";
    const Tokenizer* tokenizer = &default_tokenizer();
    /// Looks up development artifacts for a commit; may be empty.
    std::function<std::vector<DevArtifact>(const Commit&)> artifacts;
};

struct BuildResult {
    std::vector<DatasetEntry> entries;
    DatasetMetadata metadata;
    std::vector<CveEntry> historical;  // CVEs before the cutoff, for the HV corpus
    std::vector<std::string> notes;
};

/// VF commits come from evaluation-window CVEs whose fix commit is in the
/// catalog; NVF commits are sampled from the same repos, excluding any
/// commit referenced by any CVE; then token-length outliers are removed.
BuildResult build_dataset(const std::vector<CveEntry>& cves, const std::vector<Commit>& catalog,
                          const BuildOptions& options);

/// Writes entries to `path` and metadata to `path` + ".meta.json".
void write_dataset_with_metadata(const std::filesystem::path& path, const BuildResult& result);

}  // namespace vfd
