// vfd: command-line entry points for dataset construction, detection,
// evaluation and the review service.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <fstream>
#include <iostream>
#include <map>
#include <mutex>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "vfd/ablation.hpp"
#include "vfd/artifact_miner.hpp"
#include "vfd/dataset_builder.hpp"
#include "vfd/eval.hpp"
#include "vfd/hv_store.hpp"
#include "vfd/llm_gateway.hpp"
#include "vfd/pipeline.hpp"
#include "vfd/review_service.hpp"

namespace {

using namespace vfd;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat "key = value" file; '#' starts a comment line.
std::map<std::string, std::string> read_flat_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int n = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++n;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key = value");
        auto value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out[trim(line.substr(0, eq))] = value;
    }
    return out;
}

/// Fills options the command line left unset from the config file.
void apply_config(CLI::App& sub, const std::map<std::string, std::string>& config,
                  const std::set<std::string>& all_keys) {
    for (const auto& [key, value] : config) {
        if (!all_keys.count(key)) throw UsageError("unknown config key: " + key);
        CLI::Option* opt = nullptr;
        try {
            opt = sub.get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            continue;  // belongs to another command
        }
        if (opt->count() > 0) continue;
        opt->add_result(value);
        opt->run_callback();
    }
}

void require(const std::string& value, const std::string& flag) {
    if (value.empty()) throw UsageError(flag + " is required");
}

struct LlmOptions {
    std::string mock;
    std::string llm_url;
    std::string model = "default";
    double temperature = -1.0;
    std::uint32_t max_tokens = 0;
    std::uint64_t max_prompt_tokens = 0;
    bool cache = false;
    int max_retries = 3;
    std::size_t max_in_flight = 4;

    void add(CLI::App& app) {
        app.add_option("--mock", mock, "Scripted responses (JSONL) instead of a live backend");
        app.add_option("--llm-url", llm_url, "Chat-completions endpoint; key from VFD_LLM_API_KEY");
        app.add_option("--model", model, "Model name sent to the backend");
        app.add_option("--temperature", temperature, "Sampling temperature (omitted when negative)");
        app.add_option("--max-tokens", max_tokens, "Completion token cap (0 = backend default)");
        app.add_option("--max-prompt-tokens", max_prompt_tokens, "Reject prompts over this size (0 = no limit)");
        app.add_flag("--cache", cache, "Reuse responses for identical prompts");
        app.add_option("--max-retries", max_retries, "Retries for transient backend failures");
        app.add_option("--max-in-flight", max_in_flight, "Concurrent backend requests");
    }

    std::shared_ptr<LlmGateway> gateway() const {
        if (mock.empty() == llm_url.empty()) throw UsageError("exactly one of --mock or --llm-url is required");
        std::shared_ptr<ChatBackend> backend;
        if (!mock.empty()) {
            backend = std::make_shared<MockBackend>(MockScript::load(mock));
        } else {
            RemoteConfig rc;
            rc.url = llm_url;
            rc.api_key = RemoteConfig::api_key_from_env();
            rc.max_retries = max_retries;
            rc.max_in_flight = max_in_flight;
            backend = std::make_shared<RemoteBackend>(rc, std::make_shared<HttplibTransport>());
        }
        GatewayConfig gc;
        gc.model = model;
        if (temperature >= 0) gc.temperature = temperature;
        if (max_tokens) gc.max_tokens = max_tokens;
        if (max_prompt_tokens) gc.max_prompt_tokens = max_prompt_tokens;
        gc.cache = cache;
        return std::make_shared<LlmGateway>(backend, gc);
    }
};

struct EmbedderOptions {
    std::string kind = "hash";
    std::size_t dim = 0;
    std::string url;
    std::string model;

    void add(CLI::App& app) {
        app.add_option("--embedder", kind, "hash | remote")->check(CLI::IsMember({"hash", "remote"}));
        app.add_option("--embed-dim", dim, "Embedding dimension (defaults to the store's)");
        app.add_option("--embed-url", url, "Embedding endpoint for --embedder remote");
        app.add_option("--embed-model", model, "Embedding model name");
    }

    std::shared_ptr<Embedder> make(std::size_t fallback_dim, const std::string& fallback_model) const {
        const auto d = dim ? dim : fallback_dim;
        if (d == 0) throw UsageError("--embed-dim is required");
        if (kind == "hash") return std::make_shared<HashProjectionEmbedder>(d);
        require(url, "--embed-url");
        // A store built offline names the hash embedder; a remote model never
        // inherits that name, so the store check below still catches it.
        auto m = model;
        if (m.empty()) m = fallback_model;
        if (m.empty() || m == HashProjectionEmbedder(1).model()) m = kDefaultEmbeddingModel;
        return std::make_shared<RemoteEmbedder>(url, m, d, std::make_shared<HttplibTransport>(),
                                                RemoteConfig::api_key_from_env());
    }
};

void check_store_model(const HvStore& store, const Embedder& embedder) {
    if (store.embedding_model() != embedder.model()) {
        throw Error("store was built with embedding model \"" + store.embedding_model() + "\" but the embedder is \"" +
                    embedder.model() + "\"");
    }
}

struct DetectSetup {
    std::shared_ptr<LlmGateway> gateway;
    std::optional<HvStore> store;
    std::shared_ptr<Embedder> embedder;
    std::unique_ptr<Pipeline> pipeline;
    std::mutex log_mu;
    std::ofstream prompt_log;
};

std::unique_ptr<DetectSetup> setup_detection(const LlmOptions& llm, const EmbedderOptions& emb,
                                             const std::string& hv_store, bool needs_hv, bool strict,
                                             const std::string& prompt_log) {
    auto s = std::make_unique<DetectSetup>();
    s->gateway = llm.gateway();
    if (needs_hv) {
        require(hv_store, "--hv-store");
        // Detection runs never see records promoted from reviews.
        s->store = HvStore::open(hv_store, false);
        s->embedder = emb.make(s->store->dim(), s->store->embedding_model());
        check_store_model(*s->store, *s->embedder);
    }
    if (!prompt_log.empty()) {
        s->prompt_log.open(prompt_log, std::ios::app | std::ios::binary);
        if (!s->prompt_log) throw Error("cannot open " + prompt_log);
        auto* raw = s.get();
        s->gateway->set_observer([raw](const ChatRequest& req) {
            std::lock_guard lock(raw->log_mu);
            raw->prompt_log << json{{"system", req.system}, {"user", req.user}}.dump() << '\n';
            raw->prompt_log.flush();
        });
    }
    PipelineConfig pc;
    pc.strict_ablation = strict;
    s->pipeline = std::make_unique<Pipeline>(*s->gateway, s->store ? &*s->store : nullptr, s->embedder.get(), pc);
    return s;
}

AblationMode parse_mode(const std::string& name) {
    auto m = AblationMode::parse(name);
    if (!m) throw UsageError("unknown mode: " + name);
    return *m;
}

bool mode_needs_hv(const AblationMode& m, bool strict) {
    return m.has(Component::HV) && !(strict && !m.has(Component::CCI));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vulnerability-fix detection toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "Flat key = value file; flags override it");
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    // fetch-cves
    auto* fetch = app.add_subcommand("fetch-cves", "Download CVE records from the NVD API");
    std::string cves_out, pub_start, pub_end, nvd_url = NvdFetchOptions{}.base_url;
    fetch->add_option("--out", cves_out, "CVE snapshot (JSONL)");
    fetch->add_option("--pub-start", pub_start, "pubStartDate (ISO-8601)");
    fetch->add_option("--pub-end", pub_end, "pubEndDate (ISO-8601)");
    fetch->add_option("--nvd-url", nvd_url, "NVD CVE API endpoint");

    // build-dataset
    auto* build = app.add_subcommand("build-dataset", "Assemble the labelled dataset");
    std::string cves_in, commits_in, dataset_out, historical_out, forge_api = ForgeConfig{}.api_base;
    std::string forge_host = "github.com";
    std::uint64_t seed = 0;
    std::uint32_t ratio = 16;
    double percentile = 0.99;
    bool mine = false;
    build->add_option("--cves", cves_in, "CVE snapshot (JSONL)");
    build->add_option("--commits", commits_in, "Commit catalog (JSONL of commits)");
    build->add_option("--out", dataset_out, "Dataset output (JSONL); metadata goes to <out>.meta.json");
    build->add_option("--historical-out", historical_out, "CVEs before the cutoff (JSONL)");
    build->add_option("--seed", seed, "Sampling seed");
    build->add_option("--ratio", ratio, "Non-fix commits per fix commit");
    build->add_option("--percentile", percentile, "Token-length cut (fraction)");
    build->add_option("--forge-host", forge_host, "Web host of fix-commit URLs");
    build->add_flag("--mine-artifacts", mine, "Fetch linked issues and PRs (token from VFD_FORGE_TOKEN)");
    build->add_option("--forge-api", forge_api, "Forge REST base URL");

    // build-hv
    auto* build_hv = app.add_subcommand("build-hv", "Build the historical vulnerability store");
    std::string records_in, store_out;
    EmbedderOptions hv_emb;
    build_hv->add_option("--records", records_in, "HV records (JSONL); missing embeddings are computed");
    build_hv->add_option("--out", store_out, "Store path");
    hv_emb.add(*build_hv);

    // detect
    auto* detect = app.add_subcommand("detect", "Run detection over a dataset");
    std::string mode_name = "full", dataset_in, results_out, hv_store, prompt_log;
    bool strict = false;
    std::size_t parallel = 4;
    LlmOptions llm;
    EmbedderOptions det_emb;
    detect->add_option("--mode", mode_name, "full | no-cci | no-da | no-hv | vanilla | cci+hv ...");
    detect->add_option("--dataset", dataset_in, "Dataset (JSONL)");
    detect->add_option("--out", results_out, "Results (JSONL); resumed when it exists");
    detect->add_option("--hv-store", hv_store, "HV store path");
    detect->add_flag("--strict-ablation", strict, "Dropping CCI also disables HV retrieval");
    detect->add_option("--parallel", parallel, "Commits processed concurrently");
    detect->add_option("--prompt-log", prompt_log, "Append every sent prompt (JSONL)");
    detect->add_option("--seed", seed, "Seed recorded in the run manifest");
    llm.add(*detect);
    det_emb.add(*detect);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score results against dataset labels");
    std::string results_in, report_out, tags_path;
    evaluate->add_option("--results", results_in, "Results (JSONL)");
    evaluate->add_option("--dataset", dataset_in, "Dataset (JSONL)");
    evaluate->add_option("--report", report_out, "Write the metric report as JSON");
    evaluate->add_option("--tags", tags_path, "Failure tag store; prints the failure table");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run the five ablation settings and compare them");
    std::string out_dir;
    ablate->add_option("--dataset", dataset_in, "Dataset (JSONL)");
    ablate->add_option("--out-dir", out_dir, "Directory for per-mode results and the table");
    ablate->add_option("--hv-store", hv_store, "HV store path");
    ablate->add_flag("--strict-ablation", strict, "Dropping CCI also disables HV retrieval");
    ablate->add_option("--parallel", parallel, "Commits processed concurrently");
    ablate->add_option("--prompt-log", prompt_log, "Append every sent prompt (JSONL)");
    ablate->add_option("--seed", seed, "Seed recorded in the run manifests");
    llm.add(*ablate);
    det_emb.add(*ablate);

    // tag
    auto* tag = app.add_subcommand("tag", "Attach a failure category to a misclassified result");
    std::string tag_id, tag_name, tag_note;
    tag->add_option("--results", results_in, "Results (JSONL)");
    tag->add_option("--dataset", dataset_in, "Dataset (JSONL)");
    tag->add_option("--tags", tags_path, "Failure tag store (JSONL)");
    tag->add_option("--id", tag_id, "Result commit id");
    tag->add_option("--tag", tag_name, "Failure category");
    tag->add_option("--note", tag_note, "Free-text note");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the review API");
    std::string verdicts_path, bind = "127.0.0.1", static_dir;
    int port = 8080;
    bool release_labels = false;
    EmbedderOptions srv_emb;
    serve->add_option("--results", results_in, "Results (JSONL)");
    serve->add_option("--dataset", dataset_in, "Dataset (JSONL)");
    serve->add_option("--verdicts", verdicts_path, "Verdict store (JSONL)");
    serve->add_option("--hv-store", hv_store, "HV store that promotions append to");
    serve->add_option("--bind", bind, "Listen address");
    serve->add_option("--port", port, "Listen port");
    serve->add_option("--static-dir", static_dir, "Serve UI assets from this directory");
    serve->add_flag("--release-labels", release_labels, "Include metrics in /api/summary");
    srv_emb.add(*serve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));
        CLI::App* sub = app.get_subcommands().front();
        if (!config_path.empty()) {
            auto config = read_flat_config(config_path);
            std::set<std::string> keys;
            for (auto* s : app.get_subcommands({})) {
                for (const auto* opt : s->get_options()) {
                    for (const auto& name : opt->get_lnames()) keys.insert(name);
                }
            }
            apply_config(*sub, config, keys);
        }

        if (sub == fetch) {
            require(cves_out, "--out");
            NvdFetchOptions opts;
            opts.base_url = nvd_url;
            opts.pub_start = pub_start;
            opts.pub_end = pub_end;
            if (const char* k = std::getenv("NVD_API_KEY")) opts.api_key = k;
            HttplibTransport transport;
            auto cves = fetch_nvd_cves(transport, opts);
            save_cve_snapshot(cves_out, cves);
            std::cout << "fetched " << cves.size() << " CVEs\n";
        } else if (sub == build) {
            require(cves_in, "--cves");
            require(commits_in, "--commits");
            require(dataset_out, "--out");
            std::vector<Commit> catalog;
            for (const auto& row : read_jsonl(commits_in)) catalog.push_back(row.get<Commit>());
            BuildOptions opts;
            opts.sampling = {ratio, seed};
            opts.percentile = percentile;
            opts.forge_host = forge_host;
            std::shared_ptr<ForgeClient> forge;
            if (mine) {
                ForgeConfig fc;
                fc.api_base = forge_api;
                fc.web_host = forge_host;
                fc.token = ForgeConfig::token_from_env();
                forge = std::make_shared<ForgeClient>(fc, std::make_shared<HttplibTransport>());
                opts.artifacts = [forge](const Commit& c) {
                    auto mined = forge->mine_commit_artifacts(c);
                    for (const auto& w : mined.warnings) spdlog::warn("{}: {}", c.id, w);
                    return mined.artifacts;
                };
            }
            auto result = build_dataset(load_cve_snapshot(cves_in), catalog, opts);
            write_dataset_with_metadata(dataset_out, result);
            if (!historical_out.empty()) save_cve_snapshot(historical_out, result.historical);
            for (const auto& note : result.notes) spdlog::info("{}", note);
            std::cout << json(result.metadata).dump(2) << "\n";
        } else if (sub == build_hv) {
            require(records_in, "--records");
            require(store_out, "--out");
            std::vector<HVRecord> records;
            for (const auto& row : read_jsonl(records_in)) records.push_back(row.get<HVRecord>());
            std::size_t fallback_dim = 0;
            for (const auto& r : records) {
                if (!r.embedding.empty()) {
                    fallback_dim = r.embedding.size();
                    break;
                }
            }
            auto embedder = hv_emb.make(fallback_dim, "");
            auto store = HvStore::build(std::move(records), embedder->dim(), embedder->model(), embedder.get());
            store.save(store_out);
            std::cout << "stored " << store.size() << " records, dim " << store.dim() << "\n";
        } else if (sub == detect) {
            require(dataset_in, "--dataset");
            require(results_out, "--out");
            auto mode = parse_mode(mode_name);
            auto entries = load_dataset(dataset_in);
            auto setup = setup_detection(llm, det_emb, hv_store, mode_needs_hv(mode, strict), strict, prompt_log);
            RunManifest manifest{dataset_in,
                                 mode,
                                 llm.model,
                                 hv_store,
                                 seed,
                                 utc_timestamp(),
                                 setup->gateway->config_digest(),
                                 strict};
            RunOptions ro;
            ro.results_path = results_out;
            ro.parallelism = parallel;
            auto summary = run_dataset(manifest, *setup->pipeline, entries, ro);
            std::cout << json(summary).dump(2) << "\n";
        } else if (sub == evaluate) {
            require(results_in, "--results");
            require(dataset_in, "--dataset");
            auto report = score(load_results(results_in), labels_from_dataset(load_dataset(dataset_in)));
            std::cout << format_report(report);
            if (!report_out.empty()) write_file_atomic(report_out, json(report).dump(2) + "\n");
            if (!tags_path.empty()) std::cout << "\n" << format_failure_table(TagStore(tags_path).aggregate());
        } else if (sub == ablate) {
            require(dataset_in, "--dataset");
            require(out_dir, "--out-dir");
            auto entries = load_dataset(dataset_in);
            auto labels = labels_from_dataset(entries);
            std::filesystem::create_directories(out_dir);
            std::vector<std::pair<std::string, MetricReport>> reports;
            for (const auto& mode : standard_ablation_modes()) {
                auto setup =
                    setup_detection(llm, det_emb, hv_store, mode_needs_hv(mode, strict), strict, prompt_log);
                RunManifest manifest{dataset_in, mode, llm.model, hv_store, seed, utc_timestamp(),
                                     setup->gateway->config_digest(), strict};
                RunOptions ro;
                ro.results_path = std::filesystem::path(out_dir) / ("results-" + mode.name() + ".jsonl");
                ro.parallelism = parallel;
                run_dataset(manifest, *setup->pipeline, entries, ro);
                reports.emplace_back(mode.name(), score(load_results(ro.results_path), labels));
            }
            auto rows = compare_runs(reports);
            auto table = format_ablation_table(rows);
            write_file_atomic(std::filesystem::path(out_dir) / "ablation.txt", table);
            write_file_atomic(std::filesystem::path(out_dir) / "ablation.csv", format_ablation_csv(rows));
            std::cout << table;
        } else if (sub == tag) {
            require(results_in, "--results");
            require(dataset_in, "--dataset");
            require(tags_path, "--tags");
            require(tag_id, "--id");
            auto t = parse_failure_tag(tag_name);
            if (!t) throw UsageError("unknown failure tag: " + tag_name);
            auto labels = labels_from_dataset(load_dataset(dataset_in));
            auto label = labels.find(tag_id);
            if (label == labels.end()) throw MissingLabel(tag_id);
            for (const auto& r : load_results(results_in)) {
                if (r.commit_id != tag_id) continue;
                auto rec = TagStore(tags_path).tag_failure(r, label->second, *t, tag_note);
                std::cout << json(rec).dump() << "\n";
                return 0;
            }
            throw Error("no result for " + tag_id);
        } else if (sub == serve) {
            require(results_in, "--results");
            require(dataset_in, "--dataset");
            require(verdicts_path, "--verdicts");
            ReviewConfig rc;
            rc.results_path = results_in;
            rc.dataset_path = dataset_in;
            rc.verdicts_path = verdicts_path;
            rc.labels_released = release_labels;
            if (!static_dir.empty()) rc.static_dir = static_dir;
            if (!hv_store.empty()) {
                rc.hv_store_path = hv_store;
                auto store = HvStore::open(hv_store, true);
                rc.embedder = srv_emb.make(store.dim(), store.embedding_model());
                check_store_model(store, *rc.embedder);
            }
            ReviewService service(rc);
            httplib::Server server;
            service.register_routes(server);
            std::cout << "listening on " << bind << ":" << port << std::endl;
            if (!server.listen(bind, port)) throw Error("cannot bind " + bind + ":" + std::to_string(port));
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\nRun with --help for the option contract.\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
