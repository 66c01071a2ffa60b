#pragma once

// HTTP review API over a results file: list and inspect detections, record
// reviewer questionnaires, and promote confirmed fixes into the HV store.
// Results and the dataset are read-only here; verdicts go to their own
// append-only file.

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "vfd/hv_store.hpp"
#include "vfd/model.hpp"

namespace httplib {
class Server;
}

namespace vfd {

/// Maps to an HTTP status in the service.
class ReviewError : public Error {
public:
    ReviewError(int status, std::string kind, const std::string& message)
        : Error(message), status_(status), kind_(std::move(kind)) {}
    int status() const { return status_; }
    const std::string& kind() const { return kind_; }

private:
    int status_;
    std::string kind_;
};

class MissingVerdict : public ReviewError {
public:
    explicit MissingVerdict(const std::string& id)
        : ReviewError(409, "MissingVerdict", "no ConfirmVF verdict for " + id) {}
};

class MissingSummary : public ReviewError {
public:
    explicit MissingSummary(const std::string& id)
        : ReviewError(422, "MissingSummary", "result " + id + " has no intention summary") {}
};

enum class FinalVerdict { ConfirmVF, RejectVF, Unsure };

std::string_view to_string(FinalVerdict f);
std::optional<FinalVerdict> parse_final_verdict(std::string_view name);

inline constexpr std::size_t kQuestionCount = 5;

struct VerdictRecord {
    std::string result_id;
    std::string reviewer;
    std::array<bool, kQuestionCount> answers{};
    FinalVerdict final = FinalVerdict::Unsure;
    std::string comment;
    std::string reviewed_at;
};

void to_json(json& j, const VerdictRecord& r);
void from_json(const json& j, VerdictRecord& r);

/// Append-only JSONL; the latest line per (result_id, reviewer) is active.
class VerdictStore {
public:
    explicit VerdictStore(std::filesystem::path path);

    /// Durable (fsync) before returning.
    void append(const VerdictRecord& record);
    std::vector<VerdictRecord> active_for(const std::string& result_id) const;
    bool has_confirmation(const std::string& result_id) const;

private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::map<std::pair<std::string, std::string>, VerdictRecord> active_;
};

struct ReviewConfig {
    std::filesystem::path results_path;
    std::filesystem::path dataset_path;
    std::filesystem::path verdicts_path;
    std::optional<std::filesystem::path> hv_store_path;
    /// Recomputes embeddings for promoted records.
    std::shared_ptr<Embedder> embedder;
    /// Enables metrics in /api/summary.
    bool labels_released = false;
    std::optional<std::filesystem::path> static_dir;
};

struct PromoteOutcome {
    bool appended = false;
    HVRecord record;
};

class ReviewService {
public:
    explicit ReviewService(ReviewConfig config);

    /// filter: all | unreviewed | reviewed | promoted | yes | no
    json list_items(std::size_t page, std::size_t page_size, const std::string& filter, bool reveal) const;
    json item(const std::string& id, bool reveal) const;
    VerdictRecord submit_verdict(const std::string& id, const json& body, const std::string& header_reviewer);
    /// Idempotent per result id. `body` may carry cve_id and cve_description
    /// for results whose dataset entry has none.
    PromoteOutcome promote(const std::string& id, const json& body);
    json summary() const;

    void register_routes(httplib::Server& server);

private:
    const DetectionResult& result(const std::string& id) const;
    std::string status_of(const std::string& id) const;
    json item_brief(const DetectionResult& r, bool reveal) const;

    ReviewConfig config_;
    std::vector<DetectionResult> results_;
    std::map<std::string, std::size_t> result_index_;
    std::map<std::string, DatasetEntry> entries_;
    VerdictStore verdicts_;

    mutable std::shared_mutex store_mu_;
    std::set<std::string> promoted_;
    std::map<std::string, std::string> cve_descriptions_;
};

}  // namespace vfd
