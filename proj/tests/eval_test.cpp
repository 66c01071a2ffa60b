#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <random>

#include "support/mock_world.hpp"
#include "support/oracles.hpp"
#include "vfd/eval.hpp"

using namespace vfd;
using ::testing::ElementsAre;
using ::testing::HasSubstr;
using ::testing::IsEmpty;

namespace {

std::string id(int i) { return "o/r@" + testsupport::hex40(static_cast<unsigned>(i)); }

DetectionResult result(int i, Verdict v) {
    DetectionResult r;
    r.commit_id = id(i);
    r.verdict = v;
    return r;
}

/// Results and labels that realize a given confusion matrix.
std::pair<std::vector<DetectionResult>, LabelMap> realize(const oracle::Cells& c) {
    std::vector<DetectionResult> results;
    LabelMap labels;
    int n = 0;
    auto add = [&](std::int64_t count, Verdict v, Label l) {
        for (std::int64_t k = 0; k < count; ++k) {
            results.push_back(result(n, v));
            labels[id(n)] = l;
            ++n;
        }
    };
    add(c.tp, Verdict::Yes, Label::VF);
    add(c.fp, Verdict::Yes, Label::NVF);
    add(c.fn, Verdict::No, Label::VF);
    add(c.tn, Verdict::No, Label::NVF);
    return {results, labels};
}

}  // namespace

TEST(Metrics, MatchOracleOnRandomMatrices) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        oracle::Cells c{static_cast<std::int64_t>(rng() % 51), static_cast<std::int64_t>(rng() % 51),
                        static_cast<std::int64_t>(rng() % 51), static_cast<std::int64_t>(rng() % 51)};
        auto [results, labels] = realize(c);
        auto r = score(results, labels);
        EXPECT_EQ(r.confusion.tp, static_cast<std::uint64_t>(c.tp));
        EXPECT_EQ(r.confusion.tn, static_cast<std::uint64_t>(c.tn));
        auto o = oracle::scores(c);
        EXPECT_NEAR(r.precision, static_cast<double>(o.precision), 1e-12);
        EXPECT_NEAR(r.recall, static_cast<double>(o.recall), 1e-12);
        EXPECT_NEAR(r.f1, static_cast<double>(o.f1), 1e-12);
        EXPECT_NEAR(r.mcc, static_cast<double>(o.mcc), 1e-12);
    }
}

TEST(Metrics, BoundsAndClassSwapInvariance) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 500; ++trial) {
        ConfusionMatrix cm{rng() % 51, rng() % 51, rng() % 51, rng() % 51};
        auto r = metrics(cm);
        for (double v : {r.precision, r.recall, r.f1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_GE(r.mcc, -1.0);
        EXPECT_LE(r.mcc, 1.0);
        // Swapping the positive class maps tp<->tn and fp<->fn.
        auto swapped = metrics(ConfusionMatrix{cm.tn, cm.fn, cm.fp, cm.tp});
        EXPECT_NEAR(swapped.mcc, r.mcc, 1e-12);
    }
}

TEST(Metrics, WorkedExample) {
    auto r = metrics(ConfusionMatrix{8, 2, 4, 86});
    EXPECT_DOUBLE_EQ(r.precision, 0.8);
    EXPECT_NEAR(r.recall, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(r.f1, 16.0 / 22.0, 1e-15);
    EXPECT_NEAR(r.mcc, (8.0 * 86 - 2.0 * 4) / std::sqrt(10.0 * 12 * 88 * 90), 1e-15);
    EXPECT_THAT(r.zero_denominator, IsEmpty());
}

TEST(Metrics, ZeroDenominatorsAreReported) {
    auto none_yes = metrics(ConfusionMatrix{0, 0, 5, 5});
    EXPECT_EQ(none_yes.precision, 0.0);
    EXPECT_EQ(none_yes.mcc, 0.0);
    EXPECT_THAT(none_yes.zero_denominator, ElementsAre("precision", "f1", "mcc"));
    auto empty = metrics(ConfusionMatrix{});
    EXPECT_THAT(empty.zero_denominator, ElementsAre("precision", "recall", "f1", "mcc"));
}

TEST(Metrics, JsonHasNoAccuracy) {
    json j = metrics(ConfusionMatrix{1, 1, 1, 1});
    EXPECT_FALSE(j.contains("accuracy"));
    EXPECT_TRUE(j.contains("mcc"));
    EXPECT_THAT(format_report(metrics(ConfusionMatrix{1, 1, 1, 1})), ::testing::Not(HasSubstr("accuracy")));
}

TEST(Confusion, Errors) {
    LabelMap labels{{id(1), Label::VF}};
    EXPECT_THROW(confusion({result(2, Verdict::Yes)}, labels), MissingLabel);
    EXPECT_THROW(confusion({result(1, Verdict::Yes), result(1, Verdict::No)}, labels), DuplicateResult);
}

TEST(Score, CountsFailuresAsNo) {
    LabelMap labels{{id(1), Label::VF}, {id(2), Label::NVF}};
    auto a = result(1, Verdict::No);
    a.failure_tag = ResultFailure::Unparseable;
    auto b = result(2, Verdict::No);
    b.failure_tag = ResultFailure::BackendError;
    auto r = score({a, b}, labels);
    EXPECT_EQ(r.confusion.fn, 1u);
    EXPECT_EQ(r.confusion.tn, 1u);
    EXPECT_EQ(r.unparseable_count, 1u);
    EXPECT_EQ(r.backend_error_count, 1u);
    EXPECT_THAT(format_report(r), HasSubstr("unparseable 1"));
}

TEST(LabelDigest, DependsOnlyOnTheSet) {
    LabelMap a{{"x", Label::VF}, {"y", Label::NVF}};
    LabelMap b{{"y", Label::NVF}, {"x", Label::VF}};
    LabelMap c{{"x", Label::NVF}, {"y", Label::NVF}};
    EXPECT_EQ(label_set_digest(a), label_set_digest(b));
    EXPECT_NE(label_set_digest(a), label_set_digest(c));
    EXPECT_EQ(label_set_digest(a), sha256_hex("x\tVF\ny\tNVF\n"));
}

TEST(Ablation, DeltasAgainstFull) {
    auto full = metrics(ConfusionMatrix{8, 2, 4, 86});
    auto no_cci = metrics(ConfusionMatrix{6, 3, 6, 85});
    full.label_set_digest = no_cci.label_set_digest = "d";
    auto rows = compare_runs({{"full", full}, {"no-cci", no_cci}});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].d_f1, 0.0);
    EXPECT_DOUBLE_EQ(rows[1].d_precision, no_cci.precision - full.precision);
    EXPECT_DOUBLE_EQ(rows[1].d_mcc, no_cci.mcc - full.mcc);
    auto table = format_ablation_table(rows);
    EXPECT_THAT(table, HasSubstr("no-cci"));
    EXPECT_THAT(table, HasSubstr("d_mcc"));
    auto csv = format_ablation_csv(rows);
    EXPECT_THAT(csv, HasSubstr("full,8,2,4,86,0.800000"));
}

TEST(Ablation, Errors) {
    auto a = metrics(ConfusionMatrix{1, 1, 1, 1});
    auto b = a;
    a.label_set_digest = "one";
    b.label_set_digest = "two";
    EXPECT_THROW(compare_runs({{"full", a}, {"no-da", b}}), LabelSetMismatch);
    EXPECT_THROW(compare_runs({{"no-da", b}}), Error);
}

TEST(FailureTags, Categories) {
    EXPECT_EQ(outcome_of(Verdict::Yes, Label::NVF), Outcome::FP);
    EXPECT_EQ(outcome_of(Verdict::No, Label::VF), Outcome::FN);
    EXPECT_TRUE(tag_applies(FailureTag::PotentialUnreportedFix, Outcome::FP));
    EXPECT_FALSE(tag_applies(FailureTag::PotentialUnreportedFix, Outcome::FN));
    EXPECT_TRUE(tag_applies(FailureTag::LongContextMiss, Outcome::FN));
    EXPECT_FALSE(tag_applies(FailureTag::LongContextMiss, Outcome::FP));
    EXPECT_TRUE(tag_applies(FailureTag::MisledByRetrievedVuln, Outcome::FP));
    EXPECT_TRUE(tag_applies(FailureTag::MisledByRetrievedVuln, Outcome::FN));
    EXPECT_FALSE(tag_applies(FailureTag::Other, Outcome::TP));
    for (auto t : {FailureTag::PotentialUnreportedFix, FailureTag::NotSecurityRelated, FailureTag::Other}) {
        EXPECT_EQ(parse_failure_tag(to_string(t)), t);
    }
    EXPECT_FALSE(parse_failure_tag("Bogus"));
}

TEST(FailureTags, StoreLatestWinsAndAggregates) {
    testsupport::TempDir dir;
    TagStore store(dir / "tags.jsonl");
    auto fp = result(1, Verdict::Yes);
    auto fn = result(2, Verdict::No);
    store.tag_failure(fp, Label::NVF, FailureTag::NotSecurityRelated, "first");
    store.tag_failure(fp, Label::NVF, FailureTag::PotentialUnreportedFix, "second");
    store.tag_failure(fn, Label::VF, FailureTag::LongContextMiss, "");
    auto current = store.current();
    ASSERT_EQ(current.size(), 2u);
    EXPECT_EQ(current.at(id(1)).tag, FailureTag::PotentialUnreportedFix);
    EXPECT_EQ(current.at(id(1)).note, "second");
    auto counts = store.aggregate();
    EXPECT_EQ((counts[{Outcome::FP, FailureTag::PotentialUnreportedFix}]), 1u);
    EXPECT_EQ((counts[{Outcome::FP, FailureTag::NotSecurityRelated}]), 0u);
    auto table = format_failure_table(store.aggregate());
    EXPECT_THAT(table, HasSubstr("LongContextMiss"));
    EXPECT_EQ(read_file(dir / "tags.jsonl").find("\n") != std::string::npos, true);
}

TEST(FailureTags, CategoryMismatch) {
    testsupport::TempDir dir;
    TagStore store(dir / "tags.jsonl");
    EXPECT_THROW(store.tag_failure(result(1, Verdict::Yes), Label::VF, FailureTag::Other, ""), CategoryMismatch);
    EXPECT_THROW(store.tag_failure(result(1, Verdict::Yes), Label::NVF, FailureTag::LongContextMiss, ""),
                 CategoryMismatch);
    EXPECT_TRUE(store.current().empty());
}

TEST(FailureTags, RecordJsonRoundTrip) {
    TagRecord r{id(3), Outcome::FN, FailureTag::MissedSecurityChange, "n", "2024-01-01T00:00:00Z"};
    auto back = json(r).get<TagRecord>();
    EXPECT_EQ(back.result_id, r.result_id);
    EXPECT_EQ(back.tag, r.tag);
    json bad = r;
    bad["tag"] = "Nope";
    EXPECT_THROW(bad.get<TagRecord>(), SchemaError);
}
