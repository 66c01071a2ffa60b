#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <chrono>

#include "vfd/prompts.hpp"

using namespace vfd;
using ::testing::HasSubstr;
using ::testing::Not;

namespace {

const std::filesystem::path kGolden = std::filesystem::path(VFD_FIXTURES) / "golden";
const std::filesystem::path kParser = std::filesystem::path(VFD_FIXTURES) / "parser";

struct GoldenInputs {
    Commit commit;
    DevArtifact artifact;
    ThreeAspectSummary cci;
    std::vector<DaSummary> da;
    HvContext hv;
};

GoldenInputs golden_inputs() {
    auto j = json::parse(read_file(kGolden / "inputs.json"));
    GoldenInputs in;
    in.commit = j.at("commit").get<Commit>();
    in.artifact = j.at("artifact").get<DevArtifact>();
    in.cci = j.at("cci").get<ThreeAspectSummary>();
    in.da = j.at("da").get<std::vector<DaSummary>>();
    in.hv.description = j.at("hv").at("description").get<std::string>();
    in.hv.three_aspects = j.at("hv").at("three_aspects").get<ThreeAspectSummary>();
    return in;
}

std::string golden(const std::string& name) { return read_file(kGolden / name); }

CavfdInputs all_inputs(const GoldenInputs& g) { return {g.cci, g.da, g.hv}; }

}  // namespace

TEST(Golden, IntentionPrompt) {
    auto g = golden_inputs();
    auto r = render_cci(g.commit);
    EXPECT_EQ(r.system, golden("cci.system.txt"));
    EXPECT_EQ(r.user, golden("cci.user.txt"));
}

TEST(Golden, ArtifactPrompt) {
    auto g = golden_inputs();
    auto r = render_da(g.artifact);
    EXPECT_EQ(r.system, golden("da.system.txt"));
    EXPECT_EQ(r.user, golden("da.user.txt"));
}

TEST(Golden, FullDetectionPrompt) {
    auto g = golden_inputs();
    auto r = render_cavfd(g.commit, all_inputs(g), AblationMode::full());
    EXPECT_EQ(r.system, golden("cavfd.system.txt"));
    EXPECT_EQ(r.user, golden("cavfd_full.user.txt"));
}

TEST(Golden, VanillaPrompt) {
    auto g = golden_inputs();
    // Vanilla ignores whatever inputs are supplied.
    auto r = render_cavfd(g.commit, all_inputs(g), AblationMode::vanilla_mode());
    EXPECT_EQ(r.system, golden("cavfd.system.txt"));
    EXPECT_EQ(r.user, golden("vanilla.user.txt"));
}

TEST(Golden, RenderingIsFast) {
    auto g = golden_inputs();
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 1000; ++i) {
        render_cci(g.commit);
        render_da(g.artifact);
        render_cavfd(g.commit, all_inputs(g), AblationMode::full());
    }
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(1));
}

TEST(Cavfd, ExcludedComponentsRenderNoneAvailable) {
    auto g = golden_inputs();
    for (auto c : {Component::CCI, Component::DA, Component::HV}) {
        auto user = render_cavfd(g.commit, all_inputs(g), AblationMode::without(c)).user;
        if (c == Component::DA) {
            EXPECT_THAT(user, HasSubstr("Pull Request Summary: None available.\n"));
            EXPECT_THAT(user, Not(HasSubstr("Crash report")));
        }
        if (c == Component::CCI) {
            EXPECT_THAT(user, HasSubstr("Analysis of the Patch: None available.\n"));
            EXPECT_THAT(user, Not(HasSubstr("Bounds check")));
        }
        if (c == Component::HV) {
            EXPECT_THAT(user, HasSubstr("Fix Information: None available.\n"));
            EXPECT_THAT(user, HasSubstr("Historical Vulnerability Fix: None available.\n"));
            EXPECT_THAT(user, Not(HasSubstr("GPAC 1.0.1")));
            EXPECT_THAT(user, Not(HasSubstr("Size validation")));
        }
    }
}

TEST(Cavfd, MissingValuesRenderNoneAvailable) {
    auto g = golden_inputs();
    CavfdInputs empty{std::nullopt, std::vector<DaSummary>{}, std::nullopt};
    auto user = render_cavfd(g.commit, empty, AblationMode::full()).user;
    EXPECT_THAT(user, HasSubstr("Pull Request Summary: None available.\n"));
    EXPECT_THAT(user, HasSubstr("Analysis of the Patch: None available.\n"));
    EXPECT_THAT(user, HasSubstr("Fix Information: None available.\n"));
}

TEST(Cavfd, RejectsEmptyCommitAndInvalidMode) {
    Commit c;
    EXPECT_THROW(render_cavfd(c, {}, AblationMode::full()), EmptyCommit);
    EXPECT_THROW(render_cci(c), EmptyCommit);
    auto g = golden_inputs();
    AblationMode bad = AblationMode::full();
    bad.vanilla = true;
    EXPECT_THROW(render_cavfd(g.commit, {}, bad), std::invalid_argument);
}

TEST(Da, RejectsEmptyArtifactAndEscapesJson) {
    DevArtifact a;
    EXPECT_THROW(render_da(a), EmptyArtifact);
    a.title = "say \"hi\"";
    a.body = "line1\nline2";
    auto user = render_da(a).user;
    EXPECT_THAT(user, HasSubstr(R"(commit:{"title":"say \"hi\"","body":"line1\nline2"})"));
}

TEST(Substitute, InsertedTextIsNotRescanned) {
    auto out = substitute("A {Commit} B {CCI component output}",
                          {{kCommitSlot, "{CCI component output}"}, {kCciSlot, "x"}});
    EXPECT_EQ(out, "A {CCI component output} B x");
    EXPECT_EQ(substitute("{not a slot}", {}), "{not a slot}");
    EXPECT_THROW(substitute("{Commit}", {}), std::logic_error);
}

TEST(Ablation, NamesRoundTrip) {
    for (const auto& m : standard_ablation_modes()) {
        EXPECT_EQ(AblationMode::parse(m.name()), m) << m.name();
    }
    EXPECT_EQ(AblationMode::full().name(), "full");
    EXPECT_EQ(AblationMode::without(Component::DA).name(), "no-da");
    auto subset = AblationMode::parse("cci+hv");
    ASSERT_TRUE(subset);
    EXPECT_EQ(*subset, AblationMode::without(Component::DA));
    auto single = AblationMode::parse("hv");
    ASSERT_TRUE(single);
    EXPECT_EQ(single->name(), "hv");
    EXPECT_FALSE(AblationMode::parse("no-xyz"));
    EXPECT_FALSE(AblationMode::parse("cci+"));
}

TEST(ThreeAspects, FormatThenParseRoundTrips) {
    auto g = golden_inputs();
    EXPECT_EQ(parse_three_aspects(format_three_aspects(g.cci)), g.cci);
    EXPECT_EQ(parse_three_aspects(format_three_aspects(g.cci, SummaryStyle::Report)), g.cci);
}

TEST(ThreeAspects, TemplateExamplesParse) {
    for (auto name : {PromptName::CCI, PromptName::DAIRPR}) {
        auto body = prompt_template(name).body;
        auto at = body.find("desired format:\n");
        ASSERT_NE(at, std::string_view::npos);
        auto example = body.substr(at + 16);
        auto s = parse_three_aspects(example);
        ASSERT_EQ(s.summary.size(), 2u);
        ASSERT_EQ(s.purpose.size(), 2u);
        ASSERT_EQ(s.implications.size(), 2u);
        EXPECT_EQ(s.summary[0].label, "Key Point");
        EXPECT_EQ(s.summary[0].description, "<description>");
        EXPECT_EQ(s.implications[1].label, "Optional Key Point");
    }
}

TEST(ThreeAspects, FixtureCorpus) {
    auto manifest = json::parse(read_file(kParser / "manifest.json"));
    ASSERT_GE(manifest.size(), 10u);
    for (const auto& c : manifest) {
        const auto file = c.at("file").get<std::string>();
        SCOPED_TRACE(file);
        const auto text = read_file(kParser / file);
        if (c.contains("error")) {
            const auto kind = c.at("error").get<std::string>();
            const auto section = c.at("section").get<std::string>();
            try {
                parse_three_aspects(text);
                ADD_FAILURE() << "expected " << kind;
            } catch (const MissingSection& e) {
                EXPECT_EQ(kind, "MissingSection");
                EXPECT_EQ(e.section(), section);
            } catch (const NoBullets& e) {
                EXPECT_EQ(kind, "NoBullets");
                EXPECT_EQ(e.section(), section);
            }
        } else {
            auto s = parse_three_aspects(text);
            auto counts = c.at("counts").get<std::vector<std::size_t>>();
            EXPECT_EQ(s.summary.size(), counts[0]);
            EXPECT_EQ(s.purpose.size(), counts[1]);
            EXPECT_EQ(s.implications.size(), counts[2]);
            ASSERT_FALSE(s.summary.empty());
            EXPECT_EQ(s.summary[0].label, c.at("first_label").get<std::string>());
        }
    }
}

TEST(ThreeAspects, ErrorsAreUnusableResponses) {
    EXPECT_THROW(parse_three_aspects(""), UnusableResponse);
}

TEST(Verdict, ParsesEmbeddedObject) {
    auto v = parse_verdict("Sure.\n{\"analysis\": \"bounds check\", \"vulnerability_fix\": \"Yes\"}\nDone.");
    EXPECT_EQ(v.vulnerability_fix, Verdict::Yes);
    EXPECT_EQ(v.analysis, "bounds check");
    EXPECT_EQ(parse_verdict(R"({"analysis":"a","vulnerability_fix":" NO "})").vulnerability_fix, Verdict::No);
}

TEST(Verdict, SkipsUnrelatedObjects) {
    auto v = parse_verdict(R"(config {"x": 1} then {"analysis": "has } brace", "vulnerability_fix": "no"})");
    EXPECT_EQ(v.vulnerability_fix, Verdict::No);
    EXPECT_EQ(v.analysis, "has } brace");
}

TEST(Verdict, ToleratesRawNewlinesInStrings) {
    auto v = parse_verdict("{\"analysis\": \"line one\nline two\", \"vulnerability_fix\": \"yes\"}");
    EXPECT_EQ(v.analysis, "line one\nline two");
}

TEST(Verdict, Errors) {
    EXPECT_THROW(parse_verdict("I think yes."), NoObjectFound);
    EXPECT_THROW(parse_verdict(R"({"analysis": "a"})"), NoObjectFound);
    try {
        parse_verdict(R"({"analysis": "a", "vulnerability_fix": "maybe"})");
        FAIL();
    } catch (const BadVerdictValue& e) {
        EXPECT_EQ(e.value(), "maybe");
    }
}
