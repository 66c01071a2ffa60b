// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Each check compares the library against an independent
// oracle or a fixed expectation; nothing here reads library internals.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "support/mock_world.hpp"
#include "support/oracles.hpp"
#include "vfd/artifact_miner.hpp"
#include "vfd/dataset_builder.hpp"
#include "vfd/eval.hpp"
#include "vfd/pipeline.hpp"
#include "vfd/prompts.hpp"

using namespace vfd;
using Clock = std::chrono::steady_clock;

namespace {

const std::filesystem::path kFixtures = VFD_FIXTURES;

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Collects the first few failure reasons for a criterion.
class Check {
public:
    void expect(bool ok, const std::string& what) {
        ++checks_;
        if (ok) return;
        ++failures_;
        if (failures_ <= 3) reasons_ += (reasons_.empty() ? "" : "; ") + what;
    }
    Outcome outcome(const std::string& summary) const {
        if (failures_ == 0) return {true, summary + ", " + std::to_string(checks_) + " checks"};
        return {false, std::to_string(failures_) + "/" + std::to_string(checks_) + " checks failed: " + reasons_};
    }

private:
    std::size_t checks_ = 0;
    std::size_t failures_ = 0;
    std::string reasons_;
};

int failures = 0;

void criterion(const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
    const auto start = Clock::now();
    Outcome out;
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (limit_seconds > 0 && secs >= limit_seconds) {
        out.pass = false;
        out.detail += "; took longer than " + std::to_string(static_cast<int>(limit_seconds)) + "s";
    }
    if (!out.pass) ++failures;
    std::printf("%s %s (%s, %.3fs)\n", out.pass ? "PASS" : "FAIL", name.c_str(), out.detail.c_str(), secs);
    std::fflush(stdout);
}

// ---- golden prompts ----

Outcome golden_prompts() {
    const auto dir = kFixtures / "golden";
    auto in = json::parse(read_file(dir / "inputs.json"));
    auto commit = in.at("commit").get<Commit>();
    CavfdInputs inputs{in.at("cci").get<ThreeAspectSummary>(), in.at("da").get<std::vector<DaSummary>>(),
                       HvContext{in.at("hv").at("description").get<std::string>(),
                                 in.at("hv").at("three_aspects").get<ThreeAspectSummary>()}};
    Check c;
    auto cci = render_cci(commit);
    c.expect(cci.system == read_file(dir / "cci.system.txt"), "CCI system");
    c.expect(cci.user == read_file(dir / "cci.user.txt"), "CCI user");
    auto da = render_da(in.at("artifact").get<DevArtifact>());
    c.expect(da.system == read_file(dir / "da.system.txt"), "DA system");
    c.expect(da.user == read_file(dir / "da.user.txt"), "DA user");
    auto full = render_cavfd(commit, inputs, AblationMode::full());
    c.expect(full.system == read_file(dir / "cavfd.system.txt"), "CAVFD system");
    c.expect(full.user == read_file(dir / "cavfd_full.user.txt"), "CAVFD (Full) user");
    auto vanilla = render_cavfd(commit, inputs, AblationMode::vanilla_mode());
    c.expect(vanilla.system == read_file(dir / "cavfd.system.txt"), "vanilla system");
    c.expect(vanilla.user == read_file(dir / "vanilla.user.txt"), "vanilla user");
    return c.outcome("4 prompts byte-identical");
}

// ---- parser ----

Outcome parser_corpus() {
    Check c;
    std::size_t cases = 0;
    for (auto name : {PromptName::CCI, PromptName::DAIRPR}) {
        auto body = prompt_template(name).body;
        auto example = body.substr(body.find("desired format:\n") + 16);
        auto s = parse_three_aspects(example);
        c.expect(s.summary.size() == 2 && s.purpose.size() == 2 && s.implications.size() == 2,
                 "template example shape");
        c.expect(!s.summary.empty() && s.summary[0].label == "Key Point", "template example label");
        ++cases;
    }
    const auto dir = kFixtures / "parser";
    for (const auto& m : json::parse(read_file(dir / "manifest.json"))) {
        ++cases;
        const auto file = m.at("file").get<std::string>();
        const auto text = read_file(dir / file);
        if (m.contains("error")) {
            const auto kind = m.at("error").get<std::string>();
            const auto section = m.at("section").get<std::string>();
            std::string got = "no error";
            try {
                parse_three_aspects(text);
            } catch (const MissingSection& e) {
                got = "MissingSection/" + e.section();
            } catch (const NoBullets& e) {
                got = "NoBullets/" + e.section();
            }
            c.expect(got == kind + "/" + section, file + ": expected " + kind + "/" + section + ", got " + got);
        } else {
            try {
                auto s = parse_three_aspects(text);
                auto counts = m.at("counts").get<std::vector<std::size_t>>();
                c.expect(s.summary.size() == counts[0] && s.purpose.size() == counts[1] &&
                             s.implications.size() == counts[2],
                         file + ": counts");
                c.expect(!s.summary.empty() && s.summary[0].label == m.at("first_label").get<std::string>(),
                         file + ": first label");
            } catch (const std::exception& e) {
                c.expect(false, file + ": " + e.what());
            }
        }
    }
    c.expect(cases >= 11, "fewer than 10 mutations");
    return c.outcome(std::to_string(cases) + " cases");
}

// ---- metrics ----

Outcome metric_oracle() {
    Check c;
    std::mt19937_64 rng(20240101);
    for (int trial = 0; trial < 1000; ++trial) {
        oracle::Cells cells{static_cast<std::int64_t>(rng() % 51), static_cast<std::int64_t>(rng() % 51),
                            static_cast<std::int64_t>(rng() % 51), static_cast<std::int64_t>(rng() % 51)};
        // Score through the public path: results + labels.
        std::vector<DetectionResult> results;
        LabelMap labels;
        int n = 0;
        auto add = [&](std::int64_t count, Verdict v, Label l) {
            for (std::int64_t k = 0; k < count; ++k, ++n) {
                DetectionResult r;
                r.commit_id = "m/m@" + std::to_string(n);
                r.verdict = v;
                results.push_back(r);
                labels[r.commit_id] = l;
            }
        };
        add(cells.tp, Verdict::Yes, Label::VF);
        add(cells.fp, Verdict::Yes, Label::NVF);
        add(cells.fn, Verdict::No, Label::VF);
        add(cells.tn, Verdict::No, Label::NVF);
        auto got = score(results, labels);
        auto want = oracle::scores(cells);
        auto close = [](double a, long double b) { return std::fabs(static_cast<long double>(a) - b) <= 1e-12L; };
        c.expect(close(got.precision, want.precision) && close(got.recall, want.recall) && close(got.f1, want.f1) &&
                     close(got.mcc, want.mcc),
                 "trial " + std::to_string(trial) + " differs from oracle");
        const auto& cm = got.confusion;
        auto swapped = metrics(ConfusionMatrix{cm.tn, cm.fn, cm.fp, cm.tp});
        c.expect(std::fabs(swapped.mcc - got.mcc) <= 1e-12, "MCC class swap");
        c.expect(got.precision >= 0 && got.precision <= 1 && got.recall >= 0 && got.recall <= 1 && got.f1 >= 0 &&
                     got.f1 <= 1 && got.mcc >= -1 && got.mcc <= 1,
                 "bounds");
    }
    return c.outcome("1000 matrices");
}

// ---- nearest neighbour ----

Outcome nn_exactness() {
    Check c;
    std::mt19937_64 rng(77);
    const Date old{std::chrono::year{2020}, std::chrono::March, std::chrono::day{3}};
    const std::size_t dims[] = {8, 64, 1024};
    std::size_t ties = 0;
    for (int s = 0; s < 200; ++s) {
        const std::size_t dim = dims[s % 3];
        const std::size_t n = 1 + rng() % 1000;
        std::vector<HVRecord> records;
        std::vector<oracle::NnItem> items;
        records.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<float> v(dim);
            if (i > 0 && rng() % 8 == 0) {
                v = items[rng() % i].v;  // exact duplicates force tie-breaks
            } else {
                for (auto& x : v) x = static_cast<float>(static_cast<int>(rng() % 7) - 3) * 0.25f;
            }
            HVRecord r;
            r.cve_id = "CVE-2020-" + std::to_string(1000 + rng() % 900);
            r.language = kAllLanguages[rng() % std::size(kAllLanguages)];
            r.disclosed_at = old;
            r.embedding = v;
            items.push_back({r.cve_id, r.language, v});
            records.push_back(std::move(r));
        }
        auto store = HvStore::build(std::move(records), dim, "acceptance");
        for (int q = 0; q < 50; ++q) {
            const auto lang = kAllLanguages[rng() % std::size(kAllLanguages)];
            std::vector<float> query(dim);
            if (q % 4 == 0) {
                query = items[rng() % n].v;
            } else {
                for (auto& x : query) x = static_cast<float>(static_cast<int>(rng() % 7) - 3) * 0.25f;
            }
            auto want = oracle::nearest(items, query, lang);
            auto got = store.nearest(query, lang);
            if (!want || !got) {
                c.expect(!want && !got, "presence differs");
                continue;
            }
            // Count queries where the winner had an exact-distance rival.
            for (std::size_t i = 0; i < n; ++i) {
                if (i != want->index && items[i].language == lang && items[i].v == items[want->index].v) {
                    ++ties;
                    break;
                }
            }
            c.expect(got->record.cve_id == items[want->index].cve_id && got->record.embedding == items[want->index].v &&
                         got->distance == want->distance && got->record.language == lang,
                     "store " + std::to_string(s) + " query " + std::to_string(q));
        }
    }
    return c.outcome("200 stores x 50 queries, " + std::to_string(ties) + " tied winners");
}

// ---- dataset builder ----

Outcome sampling_ratio() {
    Check c;
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Commit> vf;
        std::map<std::string, std::vector<Commit>> pools;
        unsigned seed = static_cast<unsigned>(trial) * 100000;
        const int repos = 1 + static_cast<int>(rng() % 4);
        for (int r = 0; r < repos; ++r) {
            const std::string repo = "org/r" + std::to_string(r);
            const unsigned nvf = 1 + static_cast<unsigned>(rng() % 3);
            for (unsigned k = 0; k < nvf; ++k) vf.push_back(testsupport::make_commit(repo, seed++, "v", "d"));
            const unsigned pool = 16 * nvf + static_cast<unsigned>(rng() % 40);
            for (unsigned k = 0; k < pool; ++k) pools[repo].push_back(testsupport::make_commit(repo, seed++, "n", "d"));
        }
        auto out = sample_nvf(vf, pools, SamplingSpec{16, rng()});
        std::set<std::string> ids;
        for (const auto& cm : out.nvf) ids.insert(cm.id);
        c.expect(out.nvf.size() == 16 * vf.size(), "trial " + std::to_string(trial) + ": |NVF| != 16|VF|");
        c.expect(ids.size() == out.nvf.size(), "duplicate draws");
        c.expect(out.shortfall.empty(), "unexpected shortfall");
    }
    return c.outcome("50 random pool layouts");
}

Outcome percentile_filter() {
    Check c;
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 2000;
        std::vector<DatasetEntry> entries(n);
        std::vector<std::uint64_t> lengths(n);
        for (std::size_t i = 0; i < n; ++i) {
            lengths[i] = rng() % (trial % 3 == 0 ? 20 : 1000000);
            entries[i].commit.id = "p/p@" + std::to_string(i);
            entries[i].commit.token_length = lengths[i];
        }
        auto r = filter_by_token_length(entries, 0.99);
        const auto want = oracle::percentile(lengths, 99, 100);
        c.expect(r.threshold == want, "threshold differs from sort oracle");
        c.expect(r.removed.size() <= (n + 99) / 100, "removed more than ceil(0.01N)");
        c.expect(r.kept.size() + r.removed.size() == n, "entries lost");
        std::size_t over = 0;
        for (auto l : lengths) over += l > want;
        c.expect(r.removed.size() == over, "removed set differs from oracle");
    }
    return c.outcome("100 random sets");
}

Outcome date_split() {
    Check c;
    std::mt19937_64 rng(9);
    std::vector<CveEntry> cves;
    const auto base = std::chrono::sys_days(Date{std::chrono::year{2021}, std::chrono::January, std::chrono::day{1}});
    for (int i = 0; i < 5000; ++i) {
        auto d = std::chrono::year_month_day(base + std::chrono::days(static_cast<int>(rng() % (365 * 4))));
        cves.push_back(CveEntry{"CVE-2021-" + std::to_string(10000 + i), "", {}, d});
    }
    cves.push_back(CveEntry{"CVE-2022-99998", "", {}, Date{std::chrono::year{2022}, std::chrono::December,
                                                          std::chrono::day{31}}});
    cves.push_back(CveEntry{"CVE-2023-99999", "", {}, kHistoricalCutoff});
    auto s = split_by_date(cves);
    c.expect(s.historical.size() + s.evaluation.size() == cves.size(), "sizes do not add up");
    std::set<std::string> seen;
    for (const auto& e : s.historical) {
        c.expect(e.published_at < kHistoricalCutoff, e.cve_id + " on wrong side");
        seen.insert(e.cve_id);
    }
    for (const auto& e : s.evaluation) {
        c.expect(!(e.published_at < kHistoricalCutoff), e.cve_id + " on wrong side");
        c.expect(seen.insert(e.cve_id).second, e.cve_id + " in both halves");
    }
    c.expect(seen.size() == cves.size(), "not a partition");
    c.expect(format_date(kHistoricalCutoff) == "2023-01-01", "cutoff is not 2023-01-01");
    return c.outcome(std::to_string(cves.size()) + " CVEs");
}

// ---- autolink ----

Outcome autolink() {
    Check c;
    auto cases = json::parse(read_file(kFixtures / "autolink.json"));
    bool has_gpac = false;
    for (const auto& k : cases) {
        const auto message = k.at("message").get<std::string>();
        const auto repo = k.at("default_repo").get<std::string>();
        if (message == "fixed #2475" && repo == "gpac/gpac") has_gpac = true;
        std::vector<std::string> got;
        for (const auto& r : parse_autolink_refs(message, repo)) got.push_back(r.repo + "#" + std::to_string(r.number));
        c.expect(got == k.at("expected").get<std::vector<std::string>>(), "\"" + message + "\"");
    }
    c.expect(cases.size() >= 20, "fewer than 20 fixtures");
    c.expect(has_gpac, "gpac fixture missing");
    return c.outcome(std::to_string(cases.size()) + " fixtures");
}

// ---- end to end ----

struct RunCapture {
    std::string bytes;
    std::vector<std::string> prompts;
};

RunCapture run_mode(const testsupport::MockWorld& world, const std::filesystem::path& out, const AblationMode& mode,
                    std::size_t parallelism, std::function<void(const DetectionResult&, std::size_t)> hook = {}) {
    LlmGateway gw(std::make_shared<MockBackend>(MockScript::load(world.script_path)), GatewayConfig{});
    RunCapture cap;
    std::mutex mu;
    gw.set_observer([&](const ChatRequest& r) {
        std::lock_guard lock(mu);
        cap.prompts.push_back(r.user);
    });
    auto store = HvStore::open(world.store_path, false);
    HashProjectionEmbedder embedder(testsupport::MockWorld::kDim);
    Pipeline pipeline(gw, &store, &embedder);
    RunManifest m;
    m.mode = mode;
    m.dataset_path = world.dataset_path.string();
    RunOptions opts;
    opts.results_path = out;
    opts.parallelism = parallelism;
    opts.on_result = std::move(hook);
    run_dataset(m, pipeline, load_dataset(world.dataset_path), opts);
    cap.bytes = read_file(out);
    return cap;
}

Outcome e2e_determinism() {
    Check c;
    testsupport::TempDir dir;
    auto world = testsupport::make_mock_world(dir.path(), 20);
    const std::string final_prompt = "1. Patch Content:";
    for (const auto& mode : standard_ablation_modes()) {
        const auto name = mode.name();
        auto a = run_mode(world, dir / ("a-" + name + ".jsonl"), mode, 4);
        auto b = run_mode(world, dir / ("b-" + name + ".jsonl"), mode, 4);
        c.expect(!a.bytes.empty() && a.bytes == b.bytes, name + ": runs differ");
        c.expect(load_results(dir / ("a-" + name + ".jsonl")).size() == 20, name + ": result count");

        // Soundness: excluded component text never reaches the final prompt.
        const std::pair<Component, std::string> markers[] = {
            {Component::CCI, "CCIMARK"}, {Component::DA, "DAMARK"}, {Component::HV, "HVMARK"}};
        for (const auto& [component, marker] : markers) {
            bool seen = false;
            for (const auto& p : a.prompts) {
                if (p.find(final_prompt) != std::string::npos && p.find(marker) != std::string::npos) seen = true;
            }
            c.expect(seen == mode.has(component), name + ": " + marker + (seen ? " leaked" : " missing"));
        }
        if (!mode.has(Component::DA)) {
            for (const auto& p : a.prompts) {
                c.expect(p.find("issue report title and body") == std::string::npos, name + ": DA prompt sent");
            }
        }
    }
    return c.outcome("5 modes x 2 runs byte-identical");
}

Outcome crash_resume() {
    Check c;
    testsupport::TempDir dir;
    auto world = testsupport::make_mock_world(dir.path(), 20);
    const auto results = dir / "results.jsonl";
    const auto mode = AblationMode::full();

    std::fflush(stdout);
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
        // Child: die abruptly after the fifth result reaches disk.
        try {
            run_mode(world, results, mode, 3, [](const DetectionResult&, std::size_t written) {
                if (written == 5) ::_exit(42);
            });
        } catch (...) {
        }
        ::_exit(0);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    c.expect(WIFEXITED(status) && WEXITSTATUS(status) == 42, "child did not stop mid-run");
    const auto partial = load_results(results).size();
    c.expect(partial == 5, "expected 5 results before the crash, found " + std::to_string(partial));
    {
        // Simulate a write torn by the crash.
        std::ofstream torn(results, std::ios::app | std::ios::binary);
        torn << R"({"commit_id":"acme/parser@)";
    }
    run_mode(world, results, mode, 3);
    auto all = load_results(results);
    std::set<std::string> ids;
    for (const auto& r : all) ids.insert(r.commit_id);
    c.expect(all.size() == world.entries.size(), "|results| = " + std::to_string(all.size()));
    c.expect(ids.size() == all.size(), "duplicate ids after resume");
    for (std::size_t i = 0; i < all.size() && i < world.entries.size(); ++i) {
        c.expect(all[i].commit_id == world.entries[i].commit.id, "order differs at " + std::to_string(i));
    }
    // Same bytes as an uninterrupted run.
    auto clean = run_mode(world, dir / "clean.jsonl", mode, 3);
    c.expect(read_file(results) == clean.bytes, "resumed output differs from an uninterrupted run");
    return c.outcome("killed after 5 of 20, resumed");
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::off);
    criterion("golden-prompts", 1.0, golden_prompts);
    criterion("parser-mutations", 0, parser_corpus);
    criterion("metrics-oracle", 5.0, metric_oracle);
    criterion("nn-exactness", 60.0, nn_exactness);
    criterion("dataset-sampling-ratio", 0, sampling_ratio);
    criterion("dataset-percentile-filter", 0, percentile_filter);
    criterion("dataset-date-split", 0, date_split);
    criterion("autolink", 0, autolink);
    criterion("e2e-determinism", 30.0, e2e_determinism);
    criterion("crash-resume", 0, crash_resume);
    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
