#pragma once

// Shared value types for commits, development artifacts, summaries,
// historical vulnerability records, dataset entries and detection results.
// Every type here serializes to one JSON object per line; decoders reject
// unknown and missing fields.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vfd {

using json = nlohmann::json;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by decoders when a record does not match its schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Calendar date, day precision, UTC.
using Date = std::chrono::year_month_day;

/// Historical/evaluation boundary: historical data is strictly before this day.
inline constexpr Date kHistoricalCutoff{std::chrono::year{2023}, std::chrono::January,
                                        std::chrono::day{1}};

std::string format_date(const Date& d);
/// Parses "YYYY-MM-DD"; nullopt on malformed or invalid calendar dates.
std::optional<Date> parse_date(std::string_view text);

enum class Language { Java, C, Cpp, Rust, JavaScript, Python, Go };

inline constexpr Language kAllLanguages[] = {Language::Java,       Language::C,
                                             Language::Cpp,        Language::Rust,
                                             Language::JavaScript, Language::Python,
                                             Language::Go};

std::string_view to_string(Language lang);
std::optional<Language> parse_language(std::string_view name);

struct Commit {
    std::string id;  // "<owner>/<name>@<40-hex>"
    std::string message;
    std::string diff;
    std::string repo;  // "<owner>/<name>"
    Language language = Language::C;
    Date committed_at{};
    std::uint64_t token_length = 0;

    bool operator==(const Commit&) const = default;
};

/// Builds the canonical commit id for a repo and full commit hash.
std::string make_commit_id(std::string_view repo, std::string_view hash);
bool is_well_formed_repo(std::string_view repo);
bool is_well_formed_commit_id(std::string_view id);

enum class ArtifactKind { IssueReport, PullRequest };

std::string_view to_string(ArtifactKind kind);
std::optional<ArtifactKind> parse_artifact_kind(std::string_view name);

struct DevArtifact {
    ArtifactKind kind = ArtifactKind::IssueReport;
    std::uint64_t number = 0;
    std::string title;
    std::string body;
    std::string source_url;
    std::string linked_commit_id;

    bool operator==(const DevArtifact&) const = default;
};

struct KeyPoint {
    std::string label;
    std::string description;

    bool operator==(const KeyPoint&) const = default;
};

/// The distilled {change summary, purpose, implications} structure.
struct ThreeAspectSummary {
    std::vector<KeyPoint> summary;
    std::vector<KeyPoint> purpose;
    std::vector<KeyPoint> implications;

    bool operator==(const ThreeAspectSummary&) const = default;
};

struct HVRecord {
    std::string cve_id;
    std::string cve_description;
    Commit fix_commit;
    ThreeAspectSummary three_aspects;
    std::vector<float> embedding;
    Language language = Language::C;
    Date disclosed_at{};
    // Records appended from the review service; excluded from stores built
    // for date-faithful evaluation.
    bool promoted = false;
    std::string promoted_from;

    bool operator==(const HVRecord&) const = default;
};

enum class Label { VF, NVF };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view name);

struct DatasetEntry {
    Commit commit;
    std::vector<DevArtifact> artifacts;
    Label label = Label::NVF;
    std::optional<std::string> cve_id;

    bool operator==(const DatasetEntry&) const = default;
};

enum class Verdict { Yes, No };

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict_name(std::string_view name);

enum class Component { CCI, DA, HV };

std::string_view to_string(Component c);
std::optional<Component> parse_component(std::string_view name);

using ComponentSet = std::set<Component>;

/// Pipeline-level outcome flags carried on a result. Reviewer failure
/// categories live in the eval harness tag store, not here.
enum class ResultFailure { Unparseable, BackendError };

std::string_view to_string(ResultFailure f);
std::optional<ResultFailure> parse_result_failure(std::string_view name);

struct HvMatch {
    std::string cve_id;
    double distance = 0.0;

    bool operator==(const HvMatch&) const = default;
};

/// A development-artifact summary as consumed by the final prompt.
struct DaSummary {
    ArtifactKind kind = ArtifactKind::IssueReport;
    std::uint64_t number = 0;
    ThreeAspectSummary summary;

    bool operator==(const DaSummary&) const = default;
};

struct DetectionResult {
    std::string commit_id;
    Verdict verdict = Verdict::No;
    std::string analysis;
    ComponentSet inputs_used;
    std::optional<HvMatch> hv_match;
    std::string raw_response;
    std::optional<ResultFailure> failure_tag;
    // Intermediate component outputs, kept for review and HV promotion.
    std::optional<ThreeAspectSummary> cci_summary;
    std::vector<DaSummary> da_summaries;
    std::vector<std::string> component_failures;

    bool operator==(const DetectionResult&) const = default;
};

struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

// JSON codecs (nlohmann ADL hooks). Decoders throw SchemaError.
void to_json(json& j, const Commit& c);
void from_json(const json& j, Commit& c);
void to_json(json& j, const DevArtifact& a);
void from_json(const json& j, DevArtifact& a);
void to_json(json& j, const KeyPoint& k);
void from_json(const json& j, KeyPoint& k);
void to_json(json& j, const ThreeAspectSummary& s);
void from_json(const json& j, ThreeAspectSummary& s);
void to_json(json& j, const HVRecord& r);
void from_json(const json& j, HVRecord& r);
void to_json(json& j, const DatasetEntry& e);
void from_json(const json& j, DatasetEntry& e);
void to_json(json& j, const HvMatch& m);
void from_json(const json& j, HvMatch& m);
void to_json(json& j, const DaSummary& d);
void from_json(const json& j, DaSummary& d);
void to_json(json& j, const DetectionResult& r);
void from_json(const json& j, DetectionResult& r);
void to_json(json& j, const ConfusionMatrix& m);
void from_json(const json& j, ConfusionMatrix& m);

/// Every invariant violation of a raw dataset record; empty means valid.
/// Checks schema shape (unknown/missing fields, enum values) as well as the
/// typed invariants below.
std::vector<std::string> validate_entry(const json& record);
std::vector<std::string> validate_entry(const DatasetEntry& entry);

// Line-delimited JSON files.
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);
/// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);
/// Appends `line` plus a newline and fsyncs before returning.
void append_line_durable(const std::filesystem::path& path, std::string_view line);

/// Loads a dataset, rejecting invalid records and duplicate commit ids.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries);

std::vector<DetectionResult> load_results(const std::filesystem::path& path);

/// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

/// Hex-encoded SHA-256.
std::string sha256_hex(std::string_view data);

}  // namespace vfd
