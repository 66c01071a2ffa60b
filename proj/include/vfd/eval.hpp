#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vfd/model.hpp"

namespace vfd {

class MissingLabel : public Error {
public:
    explicit MissingLabel(const std::string& id) : Error("no label for " + id) {}
};

class DuplicateResult : public Error {
public:
    explicit DuplicateResult(const std::string& id) : Error("duplicate result for " + id) {}
};

class LabelSetMismatch : public Error {
public:
    using Error::Error;
};

class CategoryMismatch : public Error {
public:
    using Error::Error;
};

using LabelMap = std::map<std::string, Label>;

LabelMap labels_from_dataset(const std::vector<DatasetEntry>& entries);
/// Stable digest of the (id, label) set, used to check that runs are comparable.
std::string label_set_digest(const LabelMap& labels);

/// Unparseable and backend-failed results count with their recorded
/// verdict, which the pipeline sets to No.
ConfusionMatrix confusion(const std::vector<DetectionResult>& results, const LabelMap& labels);

struct MetricReport {
    ConfusionMatrix confusion;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double mcc = 0.0;
    std::size_t unparseable_count = 0;
    std::size_t backend_error_count = 0;
    /// Metrics whose denominator was zero and were reported as 0.
    std::vector<std::string> zero_denominator;
    std::string label_set_digest;
};

void to_json(json& j, const MetricReport& r);

MetricReport metrics(const ConfusionMatrix& cm);
/// confusion() + metrics() + failure counts + label digest.
MetricReport score(const std::vector<DetectionResult>& results, const LabelMap& labels);

std::string format_report(const MetricReport& r);

struct AblationRow {
    std::string mode;
    MetricReport report;
    double d_precision = 0.0;
    double d_recall = 0.0;
    double d_f1 = 0.0;
    double d_mcc = 0.0;
};

/// Rows keep input order. Deltas are relative to the "full" row, which must
/// be present. Throws LabelSetMismatch when label digests differ.
std::vector<AblationRow> compare_runs(const std::vector<std::pair<std::string, MetricReport>>& reports);
std::string format_ablation_table(const std::vector<AblationRow>& rows);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

enum class Outcome { TP, FP, FN, TN };

Outcome outcome_of(Verdict verdict, Label label);
std::string_view to_string(Outcome o);

enum class FailureTag {
    PotentialUnreportedFix,
    NonVulnSecurityFixAsVF,
    NonFunctionalChange,
    NotSecurityRelated,
    MisledByRetrievedVuln,
    VFAsNonVulnSecurityFix,
    MissedSecurityChange,
    LongContextMiss,
    Other,
};

std::string_view to_string(FailureTag t);
std::optional<FailureTag> parse_failure_tag(std::string_view name);
/// Whether a tag belongs to the FP or FN category list.
bool tag_applies(FailureTag tag, Outcome outcome);

struct TagRecord {
    std::string result_id;
    Outcome outcome = Outcome::FP;
    FailureTag tag = FailureTag::Other;
    std::string note;
    std::string tagged_at;
};

void to_json(json& j, const TagRecord& r);
void from_json(const json& j, TagRecord& r);

/// Append-only JSONL of failure tags; the latest line per result wins.
class TagStore {
public:
    explicit TagStore(std::filesystem::path path);

    /// Throws CategoryMismatch unless the result is an FP or FN and the tag
    /// belongs to that category.
    TagRecord tag_failure(const DetectionResult& result, Label label, FailureTag tag, std::string note);

    std::map<std::string, TagRecord> current() const;
    /// Counts per (outcome, tag) over current tags.
    std::map<std::pair<Outcome, FailureTag>, std::size_t> aggregate() const;

private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
};

std::string format_failure_table(const std::map<std::pair<Outcome, FailureTag>, std::size_t>& counts);

}  // namespace vfd
