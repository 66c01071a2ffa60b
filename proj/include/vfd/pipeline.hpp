#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vfd/ablation.hpp"
#include "vfd/hv_store.hpp"
#include "vfd/llm_gateway.hpp"
#include "vfd/model.hpp"
#include "vfd/prompts.hpp"

namespace vfd {

class ComponentFailed : public Error {
public:
    ComponentFailed(Component component, const std::string& cause)
        : Error(std::string(to_string(component)) + ": " + cause), component_(component) {}
    Component component() const { return component_; }

private:
    Component component_;
};

struct PipelineConfig {
    /// When set, removing CCI from the prompt also disables HV retrieval.
    /// Otherwise the intention summary is still computed to query the store,
    /// but its text stays out of the final prompt.
    bool strict_ablation = false;
    std::size_t max_da_artifacts = 3;
    std::size_t artifact_body_cap = 20000;
};

/// Highest-numbered artifacts first, at most `cap`.
std::vector<DevArtifact> select_recent_artifacts(std::vector<DevArtifact> artifacts, std::size_t cap);

struct DaOutcome {
    std::vector<DaSummary> summaries;
    std::vector<std::string> warnings;
};

class Pipeline {
public:
    /// `store` and `embedder` may be null when HV is never enabled.
    Pipeline(LlmGateway& gateway, const HvStore* store, Embedder* embedder, PipelineConfig config = {});

    /// Throws ComponentFailed after one retry on an unusable reply.
    ThreeAspectSummary run_cci(const Commit& commit);
    /// One summary per artifact (capped); failures drop that artifact only.
    DaOutcome run_da(const Commit& commit, const std::vector<DevArtifact>& artifacts);
    /// Throws ComponentFailed on embedding or store errors.
    std::optional<HvQueryResult> run_hv(const Commit& commit, const ThreeAspectSummary& cci);

    /// Only configuration errors escape; per-commit failures are recorded
    /// in the result.
    DetectionResult detect(const Commit& commit, const std::vector<DevArtifact>& artifacts, const AblationMode& mode);

    const PipelineConfig& config() const { return config_; }

private:
    template <typename Parse>
    auto complete_and_parse(const ChatRequest& req, Parse parse, std::string* raw);

    LlmGateway& gateway_;
    const HvStore* store_;
    Embedder* embedder_;
    PipelineConfig config_;
};

struct RunManifest {
    std::string dataset_path;
    AblationMode mode;
    std::string model;
    std::string hv_store_path;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string gateway_config_digest;
    bool strict_ablation = false;
};

void to_json(json& j, const RunManifest& m);

struct RunSummary {
    RunManifest manifest;
    std::size_t total = 0;
    std::size_t processed = 0;         // this invocation
    std::size_t already_present = 0;   // skipped on resume
    std::map<std::string, std::size_t> verdict_counts;
    std::map<std::string, std::size_t> failure_counts;  // "none" for clean results
    double seconds = 0.0;
};

void to_json(json& j, const RunSummary& s);

struct RunOptions {
    std::filesystem::path results_path;
    std::size_t parallelism = 4;
    /// Called from the writer after each result line is flushed.
    std::function<void(const DetectionResult&, std::size_t written_total)> on_result;
};

/// Processes every entry not already in the results file, appending
/// results in dataset order. A torn trailing line from an interrupted run
/// is dropped before resuming. Writes `<results>.summary.json` at the end.
RunSummary run_dataset(const RunManifest& manifest, Pipeline& pipeline, const std::vector<DatasetEntry>& entries,
                       const RunOptions& options);

}  // namespace vfd
