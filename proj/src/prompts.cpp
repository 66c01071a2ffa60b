#include "vfd/prompts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

namespace vfd {

namespace {

constexpr std::string_view kCciSystem =
    "You are a helpful software developer assistant specializing in software development life-cycle "
    "to help other developers understand the characteristics of software patches.";

constexpr std::string_view kCciBody =
    "You are given the following software patch: {Commit}\n"
    "Think step by step and provide an analysis describing the following characteristics.\n"
    "1. Code Change Summary\n"
    "2. Purpose of the Change\n"
    "3. Implications of the Change\n"
    "Provide the analysis in bullet point format for each characteristic. Each bullet point should "
    "start with a key point and then briefly describe a main idea or fact from the text. Ensure each "
    "point is concise and captures the essence of the main idea it's summarizing. Here is an example "
    "of the desired format:\n"
    "1. Code Change Summary\n"
    "- [Key Point]: <description>\n"
    "- [Optional Key Point]: <description>\n"
    "2. Purpose of the Change\n"
    "- [Key Point]: <description>\n"
    "- [Optional Key Point]: <description>\n"
    "3. Implications of the Change\n"
    "- [Key Point]: <description>\n"
    "- [Optional Key Point]: <description>";

constexpr std::string_view kDaSystem =
    "You are a helpful software developer assistant specializing in software development lifecycle "
    "to help other developers understand characteristics of software components such as patches, "
    "issue reports, pull requests, etc.";

constexpr std::string_view kDaBody =
    "You are given the following Github issue report title and body information in JSON format "
    "which is related to a commit:{Commit}\n"
    "Think step by step and provide an analysis describing the following characteristics.\n"
    "1. Summary of the report\n"
    "2. Purpose of the report\n"
    "3. Implications of the report\n"
    "Provide the analysis in bullet point format for each characteristic. Each bullet point should "
    "start with a key point and then briefly describe a main idea or fact from the text. Ensure each "
    "point is concise and captures the essence of the main idea it's summarizing. Include 1-3 key "
    "points. Here is an example of the desired format:\n"
    "1. Summary of the report:\n"
    "- [Key Point]: <description>\n"
    "- [Optional Key Point]: <description>\n"
    "2. Purpose of the report:\n"
    "- [Key Point]: <description>\n"
    "- [Optional Key Point]: <description>\n"
    "3. Implications of the report:\n"
    "- [Key Point]: <description>\n"
    "- [Optional Key Point]: <description>";

constexpr std::string_view kCavfdSystem =
    "You are a helpful software developer assistant specializing in vulnerability detection to help "
    "other developers understand characteristics of software patches and discover potential "
    "vulnerabilities.";

constexpr std::string_view kOutputSyntax =
    "Your output should follow below syntax:\n"
    " {\"analysis\": \"<Detailed analysis of whether the patch is to fix a vulnerability>\",\n"
    " \"vulnerability_fix\": \"<yes or no>\"}";

constexpr std::string_view kCavfdBody =
    "You are given the following details for analysis:\n"
    "1. Patch Content: {Commit}\n"
    "2. Related Issue Report / Pull Request Summary: {DA component output}\n"
    "3. Three Aspect Analysis of the Patch: {CCI component output}\n"
    "4. Similar Historical Vulnerability Fix Information: {HV component output - CVE description}\n"
    "5. Three Aspect Analysis of the Historical Vulnerability Fix: {HV component output - 3-aspect summary}\n"
    "Task:\n"
    "1. Comparison:\n"
    "- Carefully compare the current patch with the historical vulnerability fix to avoid bias.\n"
    "- Ensure that you consider the similarities and differences highlighted in the three aspect "
    "analyses.\n"
    "2. Analysis:\n"
    "- Use the information from the Related Issue Report / Pull Request Summary to understand the "
    "context and motivation behind the patch.\n"
    "- Determine whether the current patch is intended to fix a vulnerability. You must provide "
    "evidence if you think its a vulnerability fix.\n"
    "Your output should follow below syntax:\n"
    " {\"analysis\": \"<Detailed analysis of whether the patch is to fix a vulnerability>\",\n"
    " \"vulnerability_fix\": \"<yes or no>\"}";

constexpr std::string_view kVanillaBody =
    "You are given the following details for analysis:\n"
    "1. Patch Content: {Commit}\n"
    "Task:\n"
    "- Determine whether the current patch is intended to fix a vulnerability. You must provide "
    "evidence if you think it's a vulnerability fix.\n"
    "Your output should follow below syntax:\n"
    " {\"analysis\": \"<Detailed analysis of whether the patch is to fix a vulnerability>\",\n"
    " \"vulnerability_fix\": \"<yes or no>\"}";

static_assert(kCavfdBody.ends_with(kOutputSyntax));
static_assert(kVanillaBody.ends_with(kOutputSyntax));

constexpr std::array kPlaceholders = {kCommitSlot, kDaSlot, kCciSlot, kHvDescriptionSlot, kHvSummarySlot};

constexpr std::array<std::string_view, 3> kCommitHeadings = {
    "Code Change Summary", "Purpose of the Change", "Implications of the Change"};
constexpr std::array<std::string_view, 3> kReportHeadings = {
    "Summary of the report", "Purpose of the report", "Implications of the report"};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_ws(s.back())) s.remove_suffix(1);
    return s;
}

/// Block value for the detection prompt: multi-line component output goes
/// on its own lines after the block label.
std::string block(const std::string& text) { return text.empty() ? std::string(kNoneAvailable) : "\n" + text; }

}  // namespace

// ---- ablation modes ----

std::string AblationMode::name() const {
    if (vanilla) return "vanilla";
    if (*this == full()) return "full";
    for (auto c : {Component::CCI, Component::DA, Component::HV}) {
        if (*this == without(c)) return "no-" + lower(to_string(c));
    }
    if (enabled.empty()) return "none";
    std::string out;
    for (auto c : enabled) {
        if (!out.empty()) out += '+';
        out += lower(to_string(c));
    }
    return out;
}

std::optional<AblationMode> AblationMode::parse(std::string_view name) {
    auto n = lower(name);
    if (n == "full") return full();
    if (n == "vanilla") return vanilla_mode();
    if (n == "none") return AblationMode{};
    auto component = [](std::string_view part) {
        std::string upper;
        for (char c : part) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return parse_component(upper);
    };
    if (n.starts_with("no-") || n.starts_with("w/o-")) {
        auto comp = component(std::string_view(n).substr(n.find('-') + 1));
        if (!comp) return std::nullopt;
        return without(*comp);
    }
    AblationMode mode;
    std::size_t start = 0;
    while (start <= n.size()) {
        auto plus = n.find('+', start);
        auto comp = component(
            std::string_view(n).substr(start, plus == std::string::npos ? std::string::npos : plus - start));
        if (!comp) return std::nullopt;
        mode.enabled.insert(*comp);
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    return mode;
}

std::vector<AblationMode> standard_ablation_modes() {
    return {AblationMode::full(), AblationMode::without(Component::CCI), AblationMode::without(Component::DA),
            AblationMode::without(Component::HV), AblationMode::vanilla_mode()};
}

// ---- templates ----

const PromptTemplate& prompt_template(PromptName name) {
    static const PromptTemplate kCci{PromptName::CCI, kCciSystem, kCciBody};
    static const PromptTemplate kDa{PromptName::DAIRPR, kDaSystem, kDaBody};
    static const PromptTemplate kCavfd{PromptName::CAVFD, kCavfdSystem, kCavfdBody};
    static const PromptTemplate kVanilla{PromptName::VanillaCAVFD, kCavfdSystem, kVanillaBody};
    switch (name) {
        case PromptName::CCI: return kCci;
        case PromptName::DAIRPR: return kDa;
        case PromptName::CAVFD: return kCavfd;
        case PromptName::VanillaCAVFD: return kVanilla;
    }
    throw std::logic_error("unknown prompt template");
}

std::string substitute(std::string_view body,
                       const std::vector<std::pair<std::string_view, std::string>>& bindings) {
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{') {
            auto rest = body.substr(i);
            auto slot = std::find_if(kPlaceholders.begin(), kPlaceholders.end(),
                                     [&](std::string_view p) { return rest.starts_with(p); });
            if (slot != kPlaceholders.end()) {
                auto bound = std::find_if(bindings.begin(), bindings.end(),
                                          [&](const auto& b) { return b.first == *slot; });
                if (bound == bindings.end()) {
                    throw std::logic_error("unbound placeholder " + std::string(*slot));
                }
                out += bound->second;
                i += slot->size();
                continue;
            }
        }
        out += body[i++];
    }
    return out;
}

std::string commit_text(const Commit& commit) { return commit.message + "\n" + commit.diff; }

ChatRequest render_cci(const Commit& commit) {
    if (commit.message.empty() && commit.diff.empty()) throw EmptyCommit();
    const auto& t = prompt_template(PromptName::CCI);
    ChatRequest req;
    req.system = std::string(t.system);
    req.user = substitute(t.body, {{kCommitSlot, commit_text(commit)}});
    return req;
}

ChatRequest render_da(const DevArtifact& artifact) {
    if (artifact.title.empty() && artifact.body.empty()) throw EmptyArtifact();
    nlohmann::ordered_json payload;
    payload["title"] = artifact.title;
    payload["body"] = artifact.body;
    const auto& t = prompt_template(PromptName::DAIRPR);
    ChatRequest req;
    req.system = std::string(t.system);
    req.user = substitute(t.body, {{kCommitSlot, payload.dump()}});
    return req;
}

std::string format_three_aspects(const ThreeAspectSummary& s, SummaryStyle style) {
    const auto& headings = style == SummaryStyle::Commit ? kCommitHeadings : kReportHeadings;
    const std::vector<KeyPoint>* sections[] = {&s.summary, &s.purpose, &s.implications};
    std::string out;
    for (std::size_t i = 0; i < 3; ++i) {
        if (i > 0) out += '\n';
        out += std::to_string(i + 1) + ". " + std::string(headings[i]);
        for (const auto& kp : *sections[i]) {
            out += "\n- [" + kp.label + "]: " + kp.description;
        }
    }
    return out;
}

ChatRequest render_cavfd(const Commit& commit, const CavfdInputs& inputs, const AblationMode& mode) {
    if (commit.message.empty() && commit.diff.empty()) throw EmptyCommit();
    if (!mode.valid()) throw std::invalid_argument("vanilla mode cannot enable components");

    if (mode.vanilla) {
        const auto& t = prompt_template(PromptName::VanillaCAVFD);
        return ChatRequest{std::string(t.system), substitute(t.body, {{kCommitSlot, commit_text(commit)}}), {},
                           {}, {}};
    }

    std::string da;
    if (mode.has(Component::DA) && inputs.da && !inputs.da->empty()) {
        std::size_t n = 0;
        for (const auto& item : *inputs.da) {
            if (n > 0) da += '\n';
            da += "Artifact " + std::to_string(++n) + " (" + std::string(to_string(item.kind)) + " #" +
                  std::to_string(item.number) + "):\n";
            da += format_three_aspects(item.summary, SummaryStyle::Report);
        }
    }
    std::string cci;
    if (mode.has(Component::CCI) && inputs.cci) cci = format_three_aspects(*inputs.cci);

    std::string hv_desc;
    std::string hv_summary;
    if (mode.has(Component::HV) && inputs.hv) {
        hv_desc = inputs.hv->description;
        hv_summary = format_three_aspects(inputs.hv->three_aspects);
    }

    const auto& t = prompt_template(PromptName::CAVFD);
    ChatRequest req;
    req.system = std::string(t.system);
    req.user = substitute(t.body, {{kCommitSlot, commit_text(commit)},
                                   {kDaSlot, block(da)},
                                   {kCciSlot, block(cci)},
                                   {kHvDescriptionSlot, hv_desc.empty() ? std::string(kNoneAvailable) : hv_desc},
                                   {kHvSummarySlot, block(hv_summary)}});
    return req;
}

// ---- parsing ----

namespace {

enum class Aspect { Summary, Purpose, Implications };

/// Recognizes a section header line such as "2. Purpose of the Change",
/// "### 3. Implications of the report:" or "**Code Change Summary**".
std::optional<Aspect> header_aspect(std::string_view raw) {
    auto line = trim(raw);
    if (line.empty() || line.front() == '-' || line.size() > 80) return std::nullopt;
    // Strip decoration: markdown heading marks, emphasis, numbering.
    while (!line.empty() && (line.front() == '#' || line.front() == '*' || line.front() == ' ')) {
        line.remove_prefix(1);
    }
    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits > 0 && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
        line.remove_prefix(digits + 1);
    }
    line = trim(line);
    while (!line.empty() && (line.back() == ':' || line.back() == '*' || line.back() == ' ')) {
        line.remove_suffix(1);
    }
    while (!line.empty() && line.front() == '*') line.remove_prefix(1);
    auto l = lower(trim(line));
    static const std::pair<std::string_view, Aspect> kNames[] = {
        {"code change summary", Aspect::Summary},
        {"summary of the report", Aspect::Summary},
        {"summary of the change", Aspect::Summary},
        {"summary", Aspect::Summary},
        {"purpose of the change", Aspect::Purpose},
        {"purpose of the report", Aspect::Purpose},
        {"purpose", Aspect::Purpose},
        {"implications of the change", Aspect::Implications},
        {"implications of the report", Aspect::Implications},
        {"implications", Aspect::Implications},
    };
    for (const auto& [name, aspect] : kNames) {
        if (l == name) return aspect;
    }
    return std::nullopt;
}

/// "- [label]: description" (also "* [label]: description").
std::optional<KeyPoint> bullet(std::string_view raw) {
    auto line = trim(raw);
    if (line.size() < 2 || (line.front() != '-' && line.front() != '*')) return std::nullopt;
    line = trim(line.substr(1));
    if (line.empty() || line.front() != '[') return std::nullopt;
    auto close = line.find(']');
    if (close == std::string_view::npos) return std::nullopt;
    auto label = trim(line.substr(1, close - 1));
    auto rest = line.substr(close + 1);
    if (rest.empty() || rest.front() != ':') return std::nullopt;
    auto description = trim(rest.substr(1));
    if (label.empty()) return std::nullopt;
    return KeyPoint{std::string(label), std::string(description)};
}

}  // namespace

ThreeAspectSummary parse_three_aspects(std::string_view text) {
    ThreeAspectSummary out;
    bool seen[3] = {false, false, false};
    std::optional<Aspect> current;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        if (auto aspect = header_aspect(line)) {
            current = aspect;
            seen[static_cast<int>(*aspect)] = true;
        } else if (current) {
            if (auto kp = bullet(line)) {
                switch (*current) {
                    case Aspect::Summary: out.summary.push_back(std::move(*kp)); break;
                    case Aspect::Purpose: out.purpose.push_back(std::move(*kp)); break;
                    case Aspect::Implications: out.implications.push_back(std::move(*kp)); break;
                }
            }
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    constexpr std::string_view kNames[] = {kSummarySection, kPurposeSection, kImplicationsSection};
    for (int i = 0; i < 3; ++i) {
        if (!seen[i]) throw MissingSection(std::string(kNames[i]));
    }
    const std::vector<KeyPoint>* lists[] = {&out.summary, &out.purpose, &out.implications};
    for (int i = 0; i < 3; ++i) {
        if (lists[i]->empty()) throw NoBullets(std::string(kNames[i]));
    }
    return out;
}

namespace {

/// End (exclusive) of the brace-balanced object starting at `start`, with
/// string literals skipped; npos if unbalanced.
std::size_t object_end(std::string_view text, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

/// Escapes raw control characters inside string literals, which models
/// commonly emit in long analyses.
std::string escape_raw_controls(std::string_view candidate) {
    std::string out;
    bool in_string = false;
    bool escaped = false;
    for (char c : candidate) {
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            } else if (c == '\n') {
                out += "\\n";
                continue;
            } else if (c == '\r') {
                out += "\\r";
                continue;
            } else if (c == '\t') {
                out += "\\t";
                continue;
            }
        } else if (c == '"') {
            in_string = true;
        }
        out += c;
    }
    return out;
}

std::optional<json> parse_object(std::string_view candidate) {
    try {
        return json::parse(candidate);
    } catch (const json::parse_error&) {
    }
    try {
        return json::parse(escape_raw_controls(candidate));
    } catch (const json::parse_error&) {
        return std::nullopt;
    }
}

}  // namespace

VerdictObject parse_verdict(std::string_view text) {
    for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
        auto end = object_end(text, start);
        if (end == std::string_view::npos) continue;
        auto obj = parse_object(text.substr(start, end - start));
        if (!obj || !obj->is_object() || !obj->contains("analysis") || !obj->contains("vulnerability_fix")) {
            continue;
        }
        const auto& analysis = (*obj)["analysis"];
        const auto& verdict = (*obj)["vulnerability_fix"];
        if (!analysis.is_string()) continue;
        std::string raw = verdict.is_string() ? verdict.get<std::string>() : verdict.dump();
        auto v = lower(trim(raw));
        VerdictObject out;
        out.analysis = analysis.get<std::string>();
        if (v == "yes") {
            out.vulnerability_fix = Verdict::Yes;
        } else if (v == "no") {
            out.vulnerability_fix = Verdict::No;
        } else {
            throw BadVerdictValue(raw);
        }
        return out;
    }
    throw NoObjectFound();
}

}  // namespace vfd
