#include "vfd/model.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <ctime>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <openssl/evp.h>

namespace vfd {

namespace {

using FieldList = std::initializer_list<std::string_view>;

void check_shape(const json& j, std::string_view type, FieldList required, FieldList optional = {}) {
    if (!j.is_object()) {
        throw SchemaError(std::string(type) + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                           std::find(optional.begin(), optional.end(), key) != optional.end();
        if (!known) {
            throw SchemaError(std::string(type) + ": unknown field '" + key + "'");
        }
    }
    for (auto key : required) {
        if (!j.contains(key)) {
            throw SchemaError(std::string(type) + ": missing field '" + std::string(key) + "'");
        }
    }
}

std::string get_string(const json& j, const char* key, std::string_view type) {
    const auto& v = j.at(key);
    if (!v.is_string()) {
        throw SchemaError(std::string(type) + "." + key + ": expected a string");
    }
    return v.get<std::string>();
}

std::uint64_t get_uint(const json& j, const char* key, std::string_view type) {
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw SchemaError(std::string(type) + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

Date get_date(const json& j, const char* key, std::string_view type) {
    auto d = parse_date(get_string(j, key, type));
    if (!d) {
        throw SchemaError(std::string(type) + "." + key + ": invalid date");
    }
    return *d;
}

Language get_language(const json& j, const char* key, std::string_view type) {
    auto lang = parse_language(get_string(j, key, type));
    if (!lang) {
        throw SchemaError(std::string(type) + "." + key + ": language not in enum");
    }
    return *lang;
}

template <typename T>
std::vector<T> get_array(const json& j, const char* key, std::string_view type) {
    const auto& v = j.at(key);
    if (!v.is_array()) {
        throw SchemaError(std::string(type) + "." + key + ": expected an array");
    }
    std::vector<T> out;
    out.reserve(v.size());
    for (const auto& item : v) {
        out.push_back(item.get<T>());
    }
    return out;
}

bool is_lower_hex(std::string_view s) {
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

bool is_repo_part(std::string_view part) {
    if (part.empty() || part == "." || part == "..") return false;
    return std::all_of(part.begin(), part.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

const std::regex& cve_pattern() {
    static const std::regex re(R"(CVE-\d{4}-\d{4,})");
    return re;
}

}  // namespace

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

std::optional<Date> parse_date(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    int y = 0;
    unsigned m = 0, d = 0;
    auto parse = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
        return ec == std::errc{} && p == text.data() + pos + len;
    };
    if (!parse(0, 4, y) || !parse(5, 2, m) || !parse(8, 2, d)) return std::nullopt;
    Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) return std::nullopt;
    return date;
}

std::string_view to_string(Language lang) {
    switch (lang) {
        case Language::Java: return "Java";
        case Language::C: return "C";
        case Language::Cpp: return "C++";
        case Language::Rust: return "Rust";
        case Language::JavaScript: return "JavaScript";
        case Language::Python: return "Python";
        case Language::Go: return "Go";
    }
    return "?";
}

std::optional<Language> parse_language(std::string_view name) {
    for (auto lang : kAllLanguages) {
        if (to_string(lang) == name) return lang;
    }
    return std::nullopt;
}

std::string make_commit_id(std::string_view repo, std::string_view hash) {
    std::string id(repo);
    id += '@';
    for (char c : hash) id += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return id;
}

bool is_well_formed_repo(std::string_view repo) {
    auto slash = repo.find('/');
    if (slash == std::string_view::npos || repo.find('/', slash + 1) != std::string_view::npos) {
        return false;
    }
    return is_repo_part(repo.substr(0, slash)) && is_repo_part(repo.substr(slash + 1));
}

bool is_well_formed_commit_id(std::string_view id) {
    auto at = id.rfind('@');
    if (at == std::string_view::npos) return false;
    auto hash = id.substr(at + 1);
    return is_well_formed_repo(id.substr(0, at)) && hash.size() == 40 && is_lower_hex(hash);
}

std::string_view to_string(ArtifactKind kind) {
    return kind == ArtifactKind::IssueReport ? "IssueReport" : "PullRequest";
}

std::optional<ArtifactKind> parse_artifact_kind(std::string_view name) {
    if (name == "IssueReport") return ArtifactKind::IssueReport;
    if (name == "PullRequest") return ArtifactKind::PullRequest;
    return std::nullopt;
}

std::string_view to_string(Label label) { return label == Label::VF ? "VF" : "NVF"; }

std::optional<Label> parse_label(std::string_view name) {
    if (name == "VF") return Label::VF;
    if (name == "NVF") return Label::NVF;
    return std::nullopt;
}

std::string_view to_string(Verdict v) { return v == Verdict::Yes ? "Yes" : "No"; }

std::optional<Verdict> parse_verdict_name(std::string_view name) {
    if (name == "Yes") return Verdict::Yes;
    if (name == "No") return Verdict::No;
    return std::nullopt;
}

std::string_view to_string(Component c) {
    switch (c) {
        case Component::CCI: return "CCI";
        case Component::DA: return "DA";
        case Component::HV: return "HV";
    }
    return "?";
}

std::optional<Component> parse_component(std::string_view name) {
    if (name == "CCI") return Component::CCI;
    if (name == "DA") return Component::DA;
    if (name == "HV") return Component::HV;
    return std::nullopt;
}

std::string_view to_string(ResultFailure f) {
    return f == ResultFailure::Unparseable ? "Unparseable" : "BackendError";
}

std::optional<ResultFailure> parse_result_failure(std::string_view name) {
    if (name == "Unparseable") return ResultFailure::Unparseable;
    if (name == "BackendError") return ResultFailure::BackendError;
    return std::nullopt;
}

// ---- codecs ----

void to_json(json& j, const Commit& c) {
    j = json{{"id", c.id},
             {"message", c.message},
             {"diff", c.diff},
             {"repo", c.repo},
             {"language", to_string(c.language)},
             {"committed_at", format_date(c.committed_at)},
             {"token_length", c.token_length}};
}

void from_json(const json& j, Commit& c) {
    constexpr std::string_view t = "Commit";
    check_shape(j, t, {"id", "message", "diff", "repo", "language", "committed_at", "token_length"});
    c.id = get_string(j, "id", t);
    c.message = get_string(j, "message", t);
    c.diff = get_string(j, "diff", t);
    c.repo = get_string(j, "repo", t);
    c.language = get_language(j, "language", t);
    c.committed_at = get_date(j, "committed_at", t);
    c.token_length = get_uint(j, "token_length", t);
}

void to_json(json& j, const DevArtifact& a) {
    j = json{{"kind", to_string(a.kind)},
             {"number", a.number},
             {"title", a.title},
             {"body", a.body},
             {"source_url", a.source_url},
             {"linked_commit_id", a.linked_commit_id}};
}

void from_json(const json& j, DevArtifact& a) {
    constexpr std::string_view t = "DevArtifact";
    check_shape(j, t, {"kind", "number", "title", "body", "source_url", "linked_commit_id"});
    auto kind = parse_artifact_kind(get_string(j, "kind", t));
    if (!kind) throw SchemaError("DevArtifact.kind: invalid artifact kind");
    a.kind = *kind;
    a.number = get_uint(j, "number", t);
    a.title = get_string(j, "title", t);
    a.body = get_string(j, "body", t);
    a.source_url = get_string(j, "source_url", t);
    a.linked_commit_id = get_string(j, "linked_commit_id", t);
}

void to_json(json& j, const KeyPoint& k) {
    j = json{{"label", k.label}, {"description", k.description}};
}

void from_json(const json& j, KeyPoint& k) {
    check_shape(j, "KeyPoint", {"label", "description"});
    k.label = get_string(j, "label", "KeyPoint");
    k.description = get_string(j, "description", "KeyPoint");
}

void to_json(json& j, const ThreeAspectSummary& s) {
    j = json{{"summary", s.summary}, {"purpose", s.purpose}, {"implications", s.implications}};
}

void from_json(const json& j, ThreeAspectSummary& s) {
    constexpr std::string_view t = "ThreeAspectSummary";
    check_shape(j, t, {"summary", "purpose", "implications"});
    s.summary = get_array<KeyPoint>(j, "summary", t);
    s.purpose = get_array<KeyPoint>(j, "purpose", t);
    s.implications = get_array<KeyPoint>(j, "implications", t);
}

void to_json(json& j, const HVRecord& r) {
    j = json{{"cve_id", r.cve_id},
             {"cve_description", r.cve_description},
             {"fix_commit", r.fix_commit},
             {"three_aspects", r.three_aspects},
             {"embedding", r.embedding},
             {"language", to_string(r.language)},
             {"disclosed_at", format_date(r.disclosed_at)},
             {"promoted", r.promoted},
             {"promoted_from", r.promoted_from}};
}

void from_json(const json& j, HVRecord& r) {
    constexpr std::string_view t = "HVRecord";
    check_shape(j, t,
                {"cve_id", "cve_description", "fix_commit", "three_aspects", "language",
                 "disclosed_at"},
                {"embedding", "promoted", "promoted_from"});
    r.cve_id = get_string(j, "cve_id", t);
    r.cve_description = get_string(j, "cve_description", t);
    r.fix_commit = j.at("fix_commit").get<Commit>();
    r.three_aspects = j.at("three_aspects").get<ThreeAspectSummary>();
    r.embedding = j.contains("embedding") ? get_array<float>(j, "embedding", t) : std::vector<float>{};
    r.language = get_language(j, "language", t);
    r.disclosed_at = get_date(j, "disclosed_at", t);
    r.promoted = j.contains("promoted") && j.at("promoted").get<bool>();
    r.promoted_from = j.contains("promoted_from") ? get_string(j, "promoted_from", t) : "";
}

void to_json(json& j, const DatasetEntry& e) {
    j = json{{"commit", e.commit}, {"artifacts", e.artifacts}, {"label", to_string(e.label)}};
    if (e.cve_id) j["cve_id"] = *e.cve_id;
}

void from_json(const json& j, DatasetEntry& e) {
    constexpr std::string_view t = "DatasetEntry";
    check_shape(j, t, {"commit", "artifacts", "label"}, {"cve_id"});
    e.commit = j.at("commit").get<Commit>();
    e.artifacts = get_array<DevArtifact>(j, "artifacts", t);
    auto label = parse_label(get_string(j, "label", t));
    if (!label) throw SchemaError("DatasetEntry.label: invalid label");
    e.label = *label;
    if (j.contains("cve_id") && !j.at("cve_id").is_null()) {
        e.cve_id = get_string(j, "cve_id", t);
    } else {
        e.cve_id.reset();
    }
}

void to_json(json& j, const HvMatch& m) { j = json{{"cve_id", m.cve_id}, {"distance", m.distance}}; }

void from_json(const json& j, HvMatch& m) {
    check_shape(j, "HvMatch", {"cve_id", "distance"});
    m.cve_id = get_string(j, "cve_id", "HvMatch");
    if (!j.at("distance").is_number()) throw SchemaError("HvMatch.distance: expected a number");
    m.distance = j.at("distance").get<double>();
}

void to_json(json& j, const DaSummary& d) {
    j = json{{"kind", to_string(d.kind)}, {"number", d.number}, {"summary", d.summary}};
}

void from_json(const json& j, DaSummary& d) {
    check_shape(j, "DaSummary", {"kind", "number", "summary"});
    auto kind = parse_artifact_kind(get_string(j, "kind", "DaSummary"));
    if (!kind) throw SchemaError("DaSummary.kind: invalid artifact kind");
    d.kind = *kind;
    d.number = get_uint(j, "number", "DaSummary");
    d.summary = j.at("summary").get<ThreeAspectSummary>();
}

void to_json(json& j, const DetectionResult& r) {
    json inputs = json::array();
    for (auto c : r.inputs_used) inputs.push_back(to_string(c));
    j = json{{"commit_id", r.commit_id},
             {"verdict", to_string(r.verdict)},
             {"analysis", r.analysis},
             {"inputs_used", inputs},
             {"hv_match", r.hv_match ? json(*r.hv_match) : json(nullptr)},
             {"raw_response", r.raw_response},
             {"failure_tag", r.failure_tag ? json(to_string(*r.failure_tag)) : json(nullptr)},
             {"cci_summary", r.cci_summary ? json(*r.cci_summary) : json(nullptr)},
             {"da_summaries", r.da_summaries},
             {"component_failures", r.component_failures}};
}

void from_json(const json& j, DetectionResult& r) {
    constexpr std::string_view t = "DetectionResult";
    check_shape(j, t,
                {"commit_id", "verdict", "analysis", "inputs_used", "hv_match", "raw_response",
                 "failure_tag"},
                {"cci_summary", "da_summaries", "component_failures"});
    r.commit_id = get_string(j, "commit_id", t);
    auto verdict = parse_verdict_name(get_string(j, "verdict", t));
    if (!verdict) throw SchemaError("DetectionResult.verdict: invalid verdict");
    r.verdict = *verdict;
    r.analysis = get_string(j, "analysis", t);
    r.inputs_used.clear();
    for (const auto& name : get_array<std::string>(j, "inputs_used", t)) {
        auto c = parse_component(name);
        if (!c) throw SchemaError("DetectionResult.inputs_used: unknown component '" + name + "'");
        r.inputs_used.insert(*c);
    }
    r.hv_match = j.at("hv_match").is_null() ? std::nullopt
                                             : std::optional<HvMatch>(j.at("hv_match").get<HvMatch>());
    r.raw_response = get_string(j, "raw_response", t);
    if (j.at("failure_tag").is_null()) {
        r.failure_tag.reset();
    } else {
        auto f = parse_result_failure(get_string(j, "failure_tag", t));
        if (!f) throw SchemaError("DetectionResult.failure_tag: invalid value");
        r.failure_tag = *f;
    }
    r.cci_summary.reset();
    if (j.contains("cci_summary") && !j.at("cci_summary").is_null()) {
        r.cci_summary = j.at("cci_summary").get<ThreeAspectSummary>();
    }
    r.da_summaries =
        j.contains("da_summaries") ? get_array<DaSummary>(j, "da_summaries", t) : std::vector<DaSummary>{};
    r.component_failures = j.contains("component_failures")
                               ? get_array<std::string>(j, "component_failures", t)
                               : std::vector<std::string>{};
}

void to_json(json& j, const ConfusionMatrix& m) {
    j = json{{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
}

void from_json(const json& j, ConfusionMatrix& m) {
    constexpr std::string_view t = "ConfusionMatrix";
    check_shape(j, t, {"tp", "fp", "fn", "tn"});
    m.tp = get_uint(j, "tp", t);
    m.fp = get_uint(j, "fp", t);
    m.fn = get_uint(j, "fn", t);
    m.tn = get_uint(j, "tn", t);
}

// ---- validation ----

std::vector<std::string> validate_entry(const DatasetEntry& entry) {
    std::vector<std::string> violations;
    const auto& c = entry.commit;
    if (c.id.empty()) {
        violations.emplace_back("empty id");
    } else if (!is_well_formed_commit_id(c.id)) {
        violations.emplace_back("malformed id");
    } else if (c.id.substr(0, c.id.rfind('@')) != c.repo) {
        violations.emplace_back("id/repo mismatch");
    }
    if (!is_well_formed_repo(c.repo)) violations.emplace_back("malformed repo");
    if (!c.committed_at.ok()) violations.emplace_back("invalid date: commit.committed_at");
    if ((entry.label == Label::VF) != entry.cve_id.has_value()) {
        violations.emplace_back("label/cve mismatch");
    }
    if (entry.cve_id && !std::regex_match(*entry.cve_id, cve_pattern())) {
        violations.emplace_back("malformed cve_id");
    }
    for (const auto& a : entry.artifacts) {
        if (a.number == 0) violations.emplace_back("artifact number not positive");
    }
    return violations;
}

std::vector<std::string> validate_entry(const json& record) {
    std::vector<std::string> violations;
    if (!record.is_object()) return {"record is not an object"};

    auto check_keys = [&](const json& obj, std::string_view prefix, FieldList required,
                          FieldList optional) {
        for (const auto& [key, value] : obj.items()) {
            bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                         std::find(optional.begin(), optional.end(), key) != optional.end();
            if (!known) violations.push_back("unknown field: " + std::string(prefix) + key);
        }
        for (auto key : required) {
            if (!obj.contains(key)) {
                violations.push_back("missing field: " + std::string(prefix) + std::string(key));
            }
        }
    };

    check_keys(record, "", {"commit", "artifacts", "label"}, {"cve_id"});
    if (record.contains("label") &&
        !(record["label"].is_string() && parse_label(record["label"].get<std::string>()))) {
        violations.emplace_back("label not in enum");
    }
    if (record.contains("commit")) {
        const auto& c = record["commit"];
        if (!c.is_object()) {
            violations.emplace_back("commit is not an object");
        } else {
            check_keys(c, "commit.",
                       {"id", "message", "diff", "repo", "language", "committed_at", "token_length"},
                       {});
            if (c.contains("language") &&
                !(c["language"].is_string() && parse_language(c["language"].get<std::string>()))) {
                violations.emplace_back("language not in enum");
            }
            if (c.contains("committed_at") &&
                !(c["committed_at"].is_string() && parse_date(c["committed_at"].get<std::string>()))) {
                violations.emplace_back("invalid date: commit.committed_at");
            }
        }
    }
    if (!violations.empty()) return violations;

    try {
        auto typed = record.get<DatasetEntry>();
        return validate_entry(typed);
    } catch (const SchemaError& e) {
        return {e.what()};
    } catch (const json::exception& e) {
        return {std::string("type error: ") + e.what()};
    }
}

// ---- files ----

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

namespace {

void write_all(int fd, std::string_view contents, const std::filesystem::path& path) {
    std::size_t off = 0;
    while (off < contents.size()) {
        auto n = ::write(fd, contents.data() + off, contents.size() - off);
        if (n <= 0) {
            ::close(fd);
            throw Error("write failed: " + path.string());
        }
        off += static_cast<std::size_t>(n);
    }
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error("cannot write " + tmp.string());
    write_all(fd, contents, tmp);
    ::fsync(fd);
    ::close(fd);
    std::filesystem::rename(tmp, path);
}

void append_line_durable(const std::filesystem::path& path, std::string_view line) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw Error("cannot append to " + path.string());
    std::string buf(line);
    buf += '\n';
    write_all(fd, buf, path);
    if (::fsync(fd) != 0) {
        ::close(fd);
        throw Error("fsync failed: " + path.string());
    }
    ::close(fd);
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<DatasetEntry> load_dataset(const std::filesystem::path& path) {
    std::vector<DatasetEntry> entries;
    std::unordered_set<std::string> ids;
    std::size_t index = 0;
    for (const auto& row : read_jsonl(path)) {
        ++index;
        auto violations = validate_entry(row);
        if (!violations.empty()) {
            throw SchemaError(path.string() + ": record " + std::to_string(index) + ": " +
                              violations.front());
        }
        auto entry = row.get<DatasetEntry>();
        if (!ids.insert(entry.commit.id).second) {
            throw SchemaError(path.string() + ": duplicate commit id " + entry.commit.id);
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

void save_dataset(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries) {
    std::vector<json> rows(entries.begin(), entries.end());
    write_jsonl(path, rows);
}

std::vector<DetectionResult> load_results(const std::filesystem::path& path) {
    std::vector<DetectionResult> out;
    for (const auto& row : read_jsonl(path)) out.push_back(row.get<DetectionResult>());
    return out;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xf];
    }
    return out;
}

std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace vfd
