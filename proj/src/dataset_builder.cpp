#include "vfd/dataset_builder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ctime>
#include <random>
#include <regex>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "vfd/prompts.hpp"

namespace vfd {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Unbiased draw in [0, n) from a 64-bit engine; identical on every
/// standard library, unlike std::uniform_int_distribution.
std::uint64_t bounded(std::mt19937_64& engine, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
        auto x = engine();
        if (x < limit) return x % n;
    }
}

std::string now_iso8601() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hash_of(const Commit& c) { return c.id.substr(c.id.rfind('@') + 1); }

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

bool is_well_formed_cve_id(std::string_view id) {
    static const std::regex re(R"(CVE-\d{4}-\d{4,})");
    return std::regex_match(id.begin(), id.end(), re);
}

void to_json(json& j, const CveEntry& e) {
    j = json{{"cve_id", e.cve_id},
             {"description", e.description},
             {"references", e.references},
             {"published_at", format_date(e.published_at)}};
}

void from_json(const json& j, CveEntry& e) {
    if (!j.is_object()) throw SchemaError("CveEntry: expected an object");
    for (const auto& [key, value] : j.items()) {
        if (key != "cve_id" && key != "description" && key != "references" && key != "published_at") {
            throw SchemaError("CveEntry: unknown field '" + key + "'");
        }
    }
    try {
        e.cve_id = j.at("cve_id").get<std::string>();
        e.description = j.at("description").get<std::string>();
        e.references = j.at("references").get<std::vector<std::string>>();
        auto date = parse_date(j.at("published_at").get<std::string>());
        if (!date) throw SchemaError("CveEntry.published_at: invalid date");
        e.published_at = *date;
    } catch (const json::exception& ex) {
        throw SchemaError(std::string("CveEntry: ") + ex.what());
    }
    if (!is_well_formed_cve_id(e.cve_id)) throw SchemaError("CveEntry: malformed cve_id " + e.cve_id);
}

std::vector<CveEntry> load_cve_snapshot(const std::filesystem::path& path) {
    std::vector<CveEntry> out;
    for (const auto& row : read_jsonl(path)) out.push_back(row.get<CveEntry>());
    return out;
}

void save_cve_snapshot(const std::filesystem::path& path, const std::vector<CveEntry>& entries) {
    write_jsonl(path, std::vector<json>(entries.begin(), entries.end()));
}

std::vector<CveEntry> cves_from_nvd_page(const json& page) {
    std::vector<CveEntry> out;
    if (!page.contains("vulnerabilities")) return out;
    for (const auto& item : page.at("vulnerabilities")) {
        const auto& cve = item.at("cve");
        CveEntry e;
        e.cve_id = cve.at("id").get<std::string>();
        if (cve.contains("descriptions")) {
            for (const auto& d : cve.at("descriptions")) {
                if (d.value("lang", "") == "en") {
                    e.description = d.value("value", "");
                    break;
                }
            }
        }
        if (cve.contains("references")) {
            for (const auto& r : cve.at("references")) {
                if (r.contains("url")) e.references.push_back(r.at("url").get<std::string>());
            }
        }
        auto published = cve.value("published", "");
        auto date = parse_date(std::string_view(published).substr(0, 10));
        if (!date || !is_well_formed_cve_id(e.cve_id)) {
            spdlog::warn("skipping NVD record {}: bad id or publication date", e.cve_id);
            continue;
        }
        e.published_at = *date;
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<CveEntry> fetch_nvd_cves(HttpTransport& transport, const NvdFetchOptions& options,
                                     const Sleeper& sleeper) {
    std::vector<CveEntry> out;
    std::size_t start = 0;
    for (;;) {
        HttpRequest req;
        req.url = options.base_url + "?resultsPerPage=" + std::to_string(options.page_size) +
                  "&startIndex=" + std::to_string(start);
        if (!options.pub_start.empty()) {
            req.url += "&pubStartDate=" + url_encode(options.pub_start) + "&pubEndDate=" + url_encode(options.pub_end);
        }
        if (!options.api_key.empty()) req.headers["apiKey"] = options.api_key;
        auto resp = transport.send(req);
        if (resp.status != 200) {
            throw TransportError("NVD request failed: HTTP " + std::to_string(resp.status));
        }
        auto page = json::parse(resp.body);
        auto entries = cves_from_nvd_page(page);
        out.insert(out.end(), entries.begin(), entries.end());
        auto total = page.value("totalResults", std::size_t{0});
        auto per_page = page.value("resultsPerPage", std::size_t{0});
        start += per_page;
        if (per_page == 0 || start >= total) break;
        sleeper(options.page_delay);
    }
    return out;
}

std::vector<CommitRef> extract_fix_commit_urls(const CveEntry& entry, std::string_view forge_host) {
    std::string host;
    for (char c : forge_host) {
        if (std::string_view("\\^$.|?*+()[]{}").find(c) != std::string_view::npos) host += '\\';
        host += c;
    }
    const std::regex re("^https?://(?:www\\.)?" + host +
                            R"(/([A-Za-z0-9][A-Za-z0-9-]*)/([A-Za-z0-9._-]+)/commit/([0-9a-fA-F]{7,40})(?:[/?#].*)?$)",
                        std::regex::icase);
    std::vector<CommitRef> out;
    for (const auto& url : entry.references) {
        std::smatch m;
        if (!std::regex_match(url, m, re)) continue;
        CommitRef ref{m[1].str() + "/" + m[2].str(), lower(m[3].str())};
        if (std::find(out.begin(), out.end(), ref) == out.end()) out.push_back(std::move(ref));
    }
    return out;
}

SampleResult sample_nvf(const std::vector<Commit>& vf, const std::map<std::string, std::vector<Commit>>& pools,
                        const SamplingSpec& spec, const std::set<std::string>& excluded_ids) {
    if (spec.nvf_per_vf < 1) throw Error("nvf_per_vf must be at least 1");
    std::map<std::string, std::size_t> vf_per_repo;
    std::unordered_set<std::string> vf_ids;
    for (const auto& c : vf) {
        ++vf_per_repo[c.repo];
        vf_ids.insert(c.id);
    }

    SampleResult out;
    for (const auto& [repo, vf_count] : vf_per_repo) {
        const std::size_t target = vf_count * spec.nvf_per_vf;
        std::vector<Commit> candidates;
        if (auto it = pools.find(repo); it != pools.end()) {
            std::unordered_set<std::string> seen;
            for (const auto& c : it->second) {
                if (vf_ids.count(c.id) || excluded_ids.count(c.id) || !seen.insert(c.id).second) continue;
                candidates.push_back(c);
            }
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const Commit& a, const Commit& b) { return a.id < b.id; });

        const std::size_t take = std::min(target, candidates.size());
        if (take < target) out.shortfall[repo] = target - take;

        std::mt19937_64 engine(spec.seed ^ fnv1a(repo));
        // Partial Fisher-Yates: the first `take` slots become the sample.
        for (std::size_t i = 0; i < take; ++i) {
            auto j = i + bounded(engine, candidates.size() - i);
            std::swap(candidates[i], candidates[j]);
        }
        candidates.resize(take);
        std::sort(candidates.begin(), candidates.end(),
                  [](const Commit& a, const Commit& b) { return a.id < b.id; });
        out.nvf.insert(out.nvf.end(), std::make_move_iterator(candidates.begin()),
                       std::make_move_iterator(candidates.end()));
    }
    return out;
}

std::uint64_t nearest_rank_percentile(std::vector<std::uint64_t> values, double percentile) {
    if (values.empty()) throw Error("percentile of an empty set");
    if (!(percentile > 0.0 && percentile <= 1.0)) throw Error("percentile must be in (0, 1]");
    std::sort(values.begin(), values.end());
    // Rank computed in parts-per-million so 0.99 * 100 is exactly 99.
    const auto ppm = static_cast<std::uint64_t>(std::llround(percentile * 1e6));
    const std::uint64_t n = values.size();
    std::uint64_t rank = (ppm * n + 999'999) / 1'000'000;
    rank = std::clamp<std::uint64_t>(rank, 1, n);
    return values[rank - 1];
}

TokenFilterResult filter_by_token_length(const std::vector<DatasetEntry>& entries, double percentile) {
    if (entries.empty()) throw Error("token-length filter needs at least one entry");
    std::vector<std::uint64_t> lengths;
    lengths.reserve(entries.size());
    for (const auto& e : entries) lengths.push_back(e.commit.token_length);
    TokenFilterResult out;
    out.threshold = nearest_rank_percentile(std::move(lengths), percentile);
    for (const auto& e : entries) {
        (e.commit.token_length <= out.threshold ? out.kept : out.removed).push_back(e);
    }
    return out;
}

bool ratio_within(std::uint64_t vf_count, std::uint64_t nvf_count, std::uint32_t nvf_per_vf) {
    return nvf_count <= vf_count * nvf_per_vf;
}

bool ratio_within(const std::vector<DatasetEntry>& entries, std::uint32_t nvf_per_vf) {
    std::uint64_t vf = 0, nvf = 0;
    for (const auto& e : entries) (e.label == Label::VF ? vf : nvf)++;
    return ratio_within(vf, nvf, nvf_per_vf);
}

void to_json(json& j, const DatasetMetadata& m) {
    j = json{{"created_at", m.created_at}, {"seed", m.seed},           {"ratio", m.ratio},
             {"sampling", m.sampling},     {"tokenizer", m.tokenizer}, {"percentile", m.percentile},
             {"threshold", m.threshold},   {"cutoff", m.cutoff},       {"vf_count", m.vf_count},
             {"nvf_count", m.nvf_count},   {"removed_count", m.removed_count},
             {"shortfall", m.shortfall}};
}

void from_json(const json& j, DatasetMetadata& m) {
    m.created_at = j.at("created_at").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ratio = j.at("ratio").get<std::uint32_t>();
    m.tokenizer = j.at("tokenizer").get<std::string>();
    m.threshold = j.at("threshold").get<std::uint64_t>();
    m.sampling = j.value("sampling", "per-repo");
    m.percentile = j.value("percentile", 0.99);
    m.cutoff = j.value("cutoff", "");
    m.vf_count = j.value("vf_count", std::uint64_t{0});
    m.nvf_count = j.value("nvf_count", std::uint64_t{0});
    m.removed_count = j.value("removed_count", std::uint64_t{0});
    m.shortfall = j.value("shortfall", std::map<std::string, std::size_t>{});
}

BuildResult build_dataset(const std::vector<CveEntry>& cves, const std::vector<Commit>& catalog,
                          const BuildOptions& options) {
    BuildResult result;
    const Tokenizer& tok = options.tokenizer ? *options.tokenizer : default_tokenizer();

    // Catalog index: repo -> commits.
    std::map<std::string, std::vector<const Commit*>> by_repo;
    for (const auto& c : catalog) by_repo[lower(c.repo)].push_back(&c);
    auto resolve = [&](const CommitRef& ref) -> const Commit* {
        auto it = by_repo.find(lower(ref.repo));
        if (it == by_repo.end()) return nullptr;
        for (const auto* c : it->second) {
            if (hash_of(*c).starts_with(ref.hash)) return c;
        }
        return nullptr;
    };

    // Any commit referenced by any CVE, regardless of date, is never NVF.
    std::set<std::string> referenced;
    for (const auto& cve : cves) {
        for (const auto& ref : extract_fix_commit_urls(cve, options.forge_host)) {
            if (const auto* c = resolve(ref)) referenced.insert(c->id);
        }
    }

    auto split = split_by_date(cves, options.cutoff);
    result.historical = split.historical;

    std::vector<Commit> vf;
    std::map<std::string, std::string> vf_cve;  // commit id -> first CVE
    for (const auto& cve : split.evaluation) {
        for (const auto& ref : extract_fix_commit_urls(cve, options.forge_host)) {
            const auto* c = resolve(ref);
            if (!c) {
                result.notes.push_back(cve.cve_id + ": fix commit " + ref.repo + "@" + ref.hash + " not in catalog");
                continue;
            }
            if (vf_cve.count(c->id)) {
                result.notes.push_back(cve.cve_id + ": commit " + c->id + " already labeled by " + vf_cve[c->id]);
                continue;
            }
            vf_cve[c->id] = cve.cve_id;
            vf.push_back(*c);
        }
    }

    std::map<std::string, std::vector<Commit>> pools;
    for (const auto& c : catalog) pools[c.repo].push_back(c);
    auto sample = sample_nvf(vf, pools, options.sampling, referenced);

    std::vector<DatasetEntry> entries;
    auto make_entry = [&](Commit c, Label label, std::optional<std::string> cve) {
        c.token_length = tok.count(commit_text(c));
        DatasetEntry e;
        e.artifacts = options.artifacts ? options.artifacts(c) : std::vector<DevArtifact>{};
        e.commit = std::move(c);
        e.label = label;
        e.cve_id = std::move(cve);
        entries.push_back(std::move(e));
    };
    for (const auto& c : vf) make_entry(c, Label::VF, vf_cve[c.id]);
    for (const auto& c : sample.nvf) make_entry(c, Label::NVF, std::nullopt);

    auto& meta = result.metadata;
    meta.created_at = now_iso8601();
    meta.seed = options.sampling.seed;
    meta.ratio = options.sampling.nvf_per_vf;
    meta.tokenizer = std::string(tok.name());
    meta.percentile = options.percentile;
    meta.cutoff = format_date(options.cutoff);
    meta.shortfall = sample.shortfall;

    if (!entries.empty()) {
        auto filtered = filter_by_token_length(entries, options.percentile);
        meta.threshold = filtered.threshold;
        meta.removed_count = filtered.removed.size();
        result.entries = std::move(filtered.kept);
    }
    for (const auto& e : result.entries) (e.label == Label::VF ? meta.vf_count : meta.nvf_count)++;
    return result;
}

void write_dataset_with_metadata(const std::filesystem::path& path, const BuildResult& result) {
    save_dataset(path, result.entries);
    auto meta_path = path;
    meta_path += ".meta.json";
    write_file_atomic(meta_path, json(result.metadata).dump(2) + "\n");
}

}  // namespace vfd
