#pragma once

// A small deterministic world for pipeline, CLI and acceptance tests: a
// 20-commit dataset with linked artifacts, a historical store and a scripted
// backend. Component outputs carry marker strings (CCIMARK, DAMARK, HVMARK)
// so tests can check which ones reached a prompt.

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "vfd/hv_store.hpp"
#include "vfd/llm_gateway.hpp"
#include "vfd/model.hpp"

namespace testsupport {

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "vfd-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string hex40(unsigned seed) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    unsigned long long x = 0x9e3779b97f4a7c15ULL * (seed + 1);
    for (int i = 0; i < 40; ++i) {
        x ^= x >> 29;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 32;
        out += digits[x & 15];
    }
    return out;
}

inline vfd::Commit make_commit(const std::string& repo, unsigned seed, const std::string& message,
                               const std::string& diff, vfd::Language lang = vfd::Language::C,
                               vfd::Date date = vfd::Date{std::chrono::year{2023}, std::chrono::March,
                                                          std::chrono::day{1}}) {
    vfd::Commit c;
    c.repo = repo;
    c.id = vfd::make_commit_id(repo, hex40(seed));
    c.message = message;
    c.diff = diff;
    c.language = lang;
    c.committed_at = date;
    return c;
}

inline std::string three_aspect_reply(const std::string& marker, bool report_style = false) {
    const std::string h1 = report_style ? "1. Summary of the report:" : "1. Code Change Summary";
    const std::string h2 = report_style ? "2. Purpose of the report:" : "2. Purpose of the Change";
    const std::string h3 = report_style ? "3. Implications of the report:" : "3. Implications of the Change";
    return "Here is the analysis.\n" + h1 + "\n- [" + marker + " change]: bounds check added in " + marker + ".\n" +
           h2 + "\n- [" + marker + " purpose]: prevent memory corruption.\n" + h3 + "\n- [" + marker +
           " impact]: crafted input no longer crashes.\n";
}

inline vfd::ThreeAspectSummary three_aspects(const std::string& marker) {
    return {{{marker + " change", "size validation " + marker}},
            {{marker + " purpose", "fix an overflow"}},
            {{marker + " impact", "rejects truncated input"}}};
}

struct MockWorld {
    std::filesystem::path dataset_path;
    std::filesystem::path script_path;
    std::filesystem::path store_path;
    std::vector<vfd::DatasetEntry> entries;
    std::vector<vfd::HVRecord> records;
    vfd::MockScript script;
    static constexpr std::size_t kDim = 64;
};

inline std::string commit_tag(std::size_t i) { return (i < 10 ? "c0" : "c") + std::to_string(i); }

/// Writes dataset.jsonl, script.jsonl and hv.store under `dir`.
inline MockWorld make_mock_world(const std::filesystem::path& dir, std::size_t n = 20) {
    using vfd::Language;
    MockWorld w;
    w.dataset_path = dir / "dataset.jsonl";
    w.script_path = dir / "script.jsonl";
    w.store_path = dir / "hv.store";

    for (std::size_t i = 0; i < n; ++i) {
        const auto tag = commit_tag(i);
        const bool vf = i % 5 == 0;
        const Language lang = i % 3 == 0 ? Language::Java : Language::C;
        const std::string repo = i % 2 ? "acme/parser" : "acme/codec";
        const std::string message = "Commit " + tag + ": " + (vf ? "check length before copy" : "tidy build flags");
        const std::string diff = "--- a/src/" + tag + ".c\n+++ b/src/" + tag + ".c\n@@ -1,2 +1,3 @@\n int f(int n) {\n+  if (n < 0) return -1;\n   return n;\n";
        vfd::DatasetEntry e;
        e.commit = make_commit(repo, static_cast<unsigned>(i), message, diff, lang);
        e.label = vf ? vfd::Label::VF : vfd::Label::NVF;
        if (vf) e.cve_id = "CVE-2023-" + std::to_string(1000 + i);
        // 0..4 artifacts; the cap of three keeps the highest numbers.
        for (std::size_t k = 0; k < i % 5; ++k) {
            vfd::DevArtifact a;
            a.kind = k % 2 ? vfd::ArtifactKind::PullRequest : vfd::ArtifactKind::IssueReport;
            a.number = 10 * (i + 1) + k;
            a.title = "Artifact " + tag + "-" + std::to_string(k);
            a.body = "Report body for " + tag + ".";
            a.source_url = "https://github.com/" + repo + "/issues/" + std::to_string(a.number);
            a.linked_commit_id = e.commit.id;
            e.artifacts.push_back(a);
            w.script.by_substring.emplace_back("\"title\":\"" + a.title + "\"",
                                               three_aspect_reply("DAMARK-" + tag + "-" + std::to_string(k), true));
        }
        w.entries.push_back(e);

        // c03's intention summary never parses; the pipeline retries once
        // and then proceeds without it.
        w.script.by_substring.emplace_back("following software patch: " + message,
                                           i == 3 ? std::string("I cannot summarize this patch.")
                                                  : three_aspect_reply("CCIMARK-" + tag));
        std::string verdict;
        if (i == 11) {
            verdict = "The patch tidies flags. I would say no.";  // no object: unparseable
        } else {
            const bool yes = vf ? i != 15 : i == 7;
            verdict = std::string("Analysis follows.\n{\"analysis\": \"Commit ") + tag + " reviewed.\", " +
                      "\"vulnerability_fix\": \"" + (yes ? "Yes" : "no") + "\"}";
        }
        w.script.by_substring.emplace_back("1. Patch Content: " + message, verdict);
    }
    vfd::save_dataset(w.dataset_path, w.entries);
    w.script.save(w.script_path);

    vfd::HashProjectionEmbedder embedder(MockWorld::kDim);
    for (std::size_t j = 0; j < 6; ++j) {
        vfd::HVRecord r;
        r.cve_id = "CVE-2021-" + std::to_string(2000 + j);
        r.cve_description = "HVMARK-" + std::to_string(j) + " buffer overflow in a parser allows denial of service.";
        r.language = j % 2 ? Language::Java : Language::C;
        r.fix_commit = make_commit("legacy/lib", 100 + static_cast<unsigned>(j), "Fix overflow " + std::to_string(j),
                                   "--- a/x.c\n+++ b/x.c\n", r.language,
                                   vfd::Date{std::chrono::year{2021}, std::chrono::June, std::chrono::day{1}});
        r.disclosed_at = vfd::Date{std::chrono::year{2021}, std::chrono::July, std::chrono::day{1}};
        r.three_aspects = three_aspects("HVMARK-" + std::to_string(j));
        w.records.push_back(r);
    }
    auto store = vfd::HvStore::build(w.records, MockWorld::kDim, embedder.model(), &embedder);
    store.save(w.store_path);
    return w;
}

}  // namespace testsupport
