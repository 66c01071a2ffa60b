#include "vfd/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "vfd/artifact_miner.hpp"

namespace vfd {

std::vector<DevArtifact> select_recent_artifacts(std::vector<DevArtifact> artifacts, std::size_t cap) {
    std::stable_sort(artifacts.begin(), artifacts.end(), [](const DevArtifact& a, const DevArtifact& b) {
        if (a.number != b.number) return a.number > b.number;
        return a.kind < b.kind;
    });
    if (artifacts.size() > cap) artifacts.resize(cap);
    return artifacts;
}

Pipeline::Pipeline(LlmGateway& gateway, const HvStore* store, Embedder* embedder, PipelineConfig config)
    : gateway_(gateway), store_(store), embedder_(embedder), config_(config) {}

template <typename Parse>
auto Pipeline::complete_and_parse(const ChatRequest& req, Parse parse, std::string* raw) {
    // One retry on an unusable reply; gateway errors propagate as-is.
    for (int attempt = 0;; ++attempt) {
        auto resp = gateway_.complete(req);
        if (raw) *raw = resp.text;
        try {
            return parse(resp.text);
        } catch (const UnusableResponse&) {
            if (attempt >= 1) throw;
        }
    }
}

ThreeAspectSummary Pipeline::run_cci(const Commit& commit) {
    try {
        return complete_and_parse(render_cci(commit), parse_three_aspects, nullptr);
    } catch (const ComponentFailed&) {
        throw;
    } catch (const Error& e) {
        throw ComponentFailed(Component::CCI, e.what());
    }
}

DaOutcome Pipeline::run_da(const Commit& commit, const std::vector<DevArtifact>& artifacts) {
    DaOutcome out;
    for (auto artifact : select_recent_artifacts(artifacts, config_.max_da_artifacts)) {
        artifact = truncate_body(std::move(artifact), config_.artifact_body_cap);
        try {
            auto summary = complete_and_parse(render_da(artifact), parse_three_aspects, nullptr);
            out.summaries.push_back({artifact.kind, artifact.number, std::move(summary)});
        } catch (const Error& e) {
            auto msg = "DA: " + std::string(to_string(artifact.kind)) + " #" + std::to_string(artifact.number) +
                       ": " + e.what();
            spdlog::warn("{}: {}", commit.id, msg);
            out.warnings.push_back(std::move(msg));
        }
    }
    return out;
}

std::optional<HvQueryResult> Pipeline::run_hv(const Commit& commit, const ThreeAspectSummary& cci) {
    if (!store_ || !embedder_) throw ConfigError("HV needs a store and an embedder");
    try {
        auto query = embed(cci, *embedder_);
        return store_->nearest(query, commit.language);
    } catch (const Error& e) {
        throw ComponentFailed(Component::HV, e.what());
    }
}

DetectionResult Pipeline::detect(const Commit& commit, const std::vector<DevArtifact>& artifacts,
                                 const AblationMode& mode) {
    if (!mode.valid()) throw ConfigError("vanilla mode cannot enable components");
    const bool hv_on = mode.has(Component::HV) && !(config_.strict_ablation && !mode.has(Component::CCI));
    if (hv_on && (!store_ || !embedder_)) throw ConfigError("HV enabled but no store/embedder configured");

    DetectionResult result;
    result.commit_id = commit.id;

    std::optional<ThreeAspectSummary> cci;
    if (mode.has(Component::CCI) || hv_on) {
        try {
            cci = run_cci(commit);
        } catch (const ComponentFailed& e) {
            result.component_failures.push_back(e.what());
        }
    }

    std::vector<DaSummary> da;
    if (mode.has(Component::DA)) {
        auto outcome = run_da(commit, artifacts);
        da = std::move(outcome.summaries);
        result.component_failures.insert(result.component_failures.end(), outcome.warnings.begin(),
                                         outcome.warnings.end());
    }

    std::optional<HvQueryResult> hv;
    if (hv_on && cci) {
        try {
            hv = run_hv(commit, *cci);
        } catch (const ComponentFailed& e) {
            result.component_failures.push_back(e.what());
        }
    }

    CavfdInputs inputs;
    if (mode.has(Component::CCI) && cci) {
        inputs.cci = cci;
        result.inputs_used.insert(Component::CCI);
    }
    if (mode.has(Component::DA) && !da.empty()) {
        inputs.da = da;
        result.inputs_used.insert(Component::DA);
    }
    if (hv) {
        inputs.hv = HvContext{hv->record.cve_description, hv->record.three_aspects};
        result.inputs_used.insert(Component::HV);
        result.hv_match = HvMatch{hv->record.cve_id, hv->distance};
    }
    result.cci_summary = cci;
    result.da_summaries = da;

    try {
        auto verdict = complete_and_parse(render_cavfd(commit, inputs, mode), parse_verdict, &result.raw_response);
        result.verdict = verdict.vulnerability_fix;
        result.analysis = std::move(verdict.analysis);
    } catch (const UnusableResponse& e) {
        result.verdict = Verdict::No;
        result.failure_tag = ResultFailure::Unparseable;
        result.component_failures.push_back(std::string("CAVFD: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        result.verdict = Verdict::No;
        result.failure_tag = ResultFailure::BackendError;
        result.component_failures.push_back(std::string("CAVFD: ") + e.what());
    }
    return result;
}

void to_json(json& j, const RunManifest& m) {
    j = json{{"dataset_path", m.dataset_path},
             {"mode", m.mode.name()},
             {"model", m.model},
             {"hv_store_path", m.hv_store_path},
             {"seed", m.seed},
             {"started_at", m.started_at},
             {"gateway_config_digest", m.gateway_config_digest},
             {"strict_ablation", m.strict_ablation}};
}

void to_json(json& j, const RunSummary& s) {
    j = json{{"manifest", s.manifest},
             {"counts",
              {{"total", s.total},
               {"processed", s.processed},
               {"already_present", s.already_present},
               {"verdict", s.verdict_counts},
               {"failure_tag", s.failure_counts}}},
             {"durations", {{"seconds", s.seconds}}}};
}

namespace {

/// Reads ids from an existing results file, truncating a torn final line.
std::set<std::string> recover_results(const std::filesystem::path& path) {
    std::set<std::string> done;
    if (!std::filesystem::exists(path)) return done;
    auto text = read_file(path);
    std::size_t good_end = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) break;  // unterminated line: torn write
        try {
            auto r = json::parse(text.substr(pos, nl - pos)).get<DetectionResult>();
            done.insert(r.commit_id);
        } catch (const std::exception&) {
            break;
        }
        good_end = nl + 1;
        pos = nl + 1;
    }
    if (good_end != text.size()) {
        spdlog::warn("{}: dropping {} bytes of incomplete output", path.string(), text.size() - good_end);
        std::filesystem::resize_file(path, good_end);
    }
    return done;
}

}  // namespace

RunSummary run_dataset(const RunManifest& manifest, Pipeline& pipeline, const std::vector<DatasetEntry>& entries,
                       const RunOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    RunSummary summary;
    summary.manifest = manifest;
    summary.total = entries.size();

    auto done = recover_results(options.results_path);
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (done.count(entries[i].commit.id)) {
            ++summary.already_present;
        } else {
            todo.push_back(i);
        }
    }

    std::ofstream out(options.results_path, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot open results file " + options.results_path.string());

    std::mutex mu;
    std::map<std::size_t, DetectionResult> ready;  // position in todo -> result
    std::size_t next_to_write = 0;
    std::size_t written = summary.already_present;
    std::atomic<std::size_t> next_task{0};
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            auto slot = next_task.fetch_add(1);
            if (slot >= todo.size()) return;
            const auto& entry = entries[todo[slot]];
            DetectionResult result;
            try {
                result = pipeline.detect(entry.commit, entry.artifacts, manifest.mode);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
            std::lock_guard lock(mu);
            ready.emplace(slot, std::move(result));
            while (!ready.empty() && ready.begin()->first == next_to_write) {
                auto node = ready.extract(ready.begin());
                out << json(node.mapped()).dump() << '\n';
                out.flush();
                if (!out) {
                    failure = std::make_exception_ptr(Error("write failed: " + options.results_path.string()));
                    return;
                }
                ++next_to_write;
                ++written;
                ++summary.processed;
                if (options.on_result) options.on_result(node.mapped(), written);
            }
        }
    };

    const auto threads = std::max<std::size_t>(1, std::min(options.parallelism, todo.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    out.close();
    if (failure) std::rethrow_exception(failure);

    for (const auto& r : load_results(options.results_path)) {
        ++summary.verdict_counts[std::string(to_string(r.verdict))];
        ++summary.failure_counts[r.failure_tag ? std::string(to_string(*r.failure_tag)) : "none"];
    }
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    auto summary_path = options.results_path;
    summary_path += ".summary.json";
    write_file_atomic(summary_path, json(summary).dump(2) + "\n");
    return summary;
}

}  // namespace vfd
