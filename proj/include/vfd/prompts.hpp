#pragma once

// Prompt templates for the intention summary, the development-artifact
// summary and the final detection prompt, plus parsers for the structured
// replies they ask for.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vfd/ablation.hpp"
#include "vfd/llm_gateway.hpp"
#include "vfd/model.hpp"

namespace vfd {

enum class PromptName { CCI, DAIRPR, CAVFD, VanillaCAVFD };

struct PromptTemplate {
    PromptName name;
    std::string_view system;
    std::string_view body;  // contains {Placeholder} markers
};

const PromptTemplate& prompt_template(PromptName name);

/// Placeholders used in the template bodies.
inline constexpr std::string_view kCommitSlot = "{Commit}";
inline constexpr std::string_view kDaSlot = "{DA component output}";
inline constexpr std::string_view kCciSlot = "{CCI component output}";
inline constexpr std::string_view kHvDescriptionSlot = "{HV component output - CVE description}";
inline constexpr std::string_view kHvSummarySlot = "{HV component output - 3-aspect summary}";

inline constexpr std::string_view kNoneAvailable = "None available.";

/// Substitutes every placeholder in one left-to-right pass; inserted text is
/// never rescanned. Throws std::logic_error if the body names a placeholder
/// that has no binding.
std::string substitute(std::string_view body,
                       const std::vector<std::pair<std::string_view, std::string>>& bindings);

class EmptyCommit : public Error {
public:
    EmptyCommit() : Error("commit has an empty message and an empty diff") {}
};

class EmptyArtifact : public Error {
public:
    EmptyArtifact() : Error("artifact has an empty title and an empty body") {}
};

/// Text substituted for {Commit}: message, newline, diff.
std::string commit_text(const Commit& commit);

ChatRequest render_cci(const Commit& commit);
ChatRequest render_da(const DevArtifact& artifact);

struct HvContext {
    std::string description;
    ThreeAspectSummary three_aspects;
};

struct CavfdInputs {
    std::optional<ThreeAspectSummary> cci;
    std::optional<std::vector<DaSummary>> da;
    std::optional<HvContext> hv;
};

/// Blocks for components outside mode.enabled, or with no value, render as
/// "None available.". Vanilla mode emits the patch-only prompt.
ChatRequest render_cavfd(const Commit& commit, const CavfdInputs& inputs, const AblationMode& mode);

enum class SummaryStyle { Commit, Report };

/// Numbered-section bullet rendering, the same shape the templates ask for.
std::string format_three_aspects(const ThreeAspectSummary& s, SummaryStyle style = SummaryStyle::Commit);

// ---- reply parsing ----

/// Base for replies the pipeline retries once before giving up.
class UnusableResponse : public Error {
public:
    using Error::Error;
};

class MissingSection : public UnusableResponse {
public:
    explicit MissingSection(std::string section)
        : UnusableResponse("missing section: " + section), section_(std::move(section)) {}
    const std::string& section() const { return section_; }

private:
    std::string section_;
};

class NoBullets : public UnusableResponse {
public:
    explicit NoBullets(std::string section)
        : UnusableResponse("no bullets in section: " + section), section_(std::move(section)) {}
    const std::string& section() const { return section_; }

private:
    std::string section_;
};

class NoObjectFound : public UnusableResponse {
public:
    NoObjectFound() : UnusableResponse("no object with analysis and vulnerability_fix found") {}
};

class BadVerdictValue : public UnusableResponse {
public:
    explicit BadVerdictValue(std::string value)
        : UnusableResponse("vulnerability_fix value out of range: " + value), value_(std::move(value)) {}
    const std::string& value() const { return value_; }

private:
    std::string value_;
};

/// Section names reported by MissingSection / NoBullets.
inline constexpr std::string_view kSummarySection = "Summary";
inline constexpr std::string_view kPurposeSection = "Purpose";
inline constexpr std::string_view kImplicationsSection = "Implications";

/// Collects "- [label]: description" bullets under each numbered section,
/// matching sections by header text so their order does not matter.
ThreeAspectSummary parse_three_aspects(std::string_view text);

struct VerdictObject {
    std::string analysis;
    Verdict vulnerability_fix = Verdict::No;
};

/// First well-formed object literal holding both "analysis" and
/// "vulnerability_fix"; the verdict is matched case-insensitively.
VerdictObject parse_verdict(std::string_view text);

}  // namespace vfd
