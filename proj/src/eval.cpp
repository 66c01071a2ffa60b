#include "vfd/eval.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace vfd {

LabelMap labels_from_dataset(const std::vector<DatasetEntry>& entries) {
    LabelMap labels;
    for (const auto& e : entries) labels.emplace(e.commit.id, e.label);
    return labels;
}

std::string label_set_digest(const LabelMap& labels) {
    std::string text;
    for (const auto& [id, label] : labels) {
        text += id;
        text += '\t';
        text += to_string(label);
        text += '\n';
    }
    return sha256_hex(text);
}

ConfusionMatrix confusion(const std::vector<DetectionResult>& results, const LabelMap& labels) {
    ConfusionMatrix cm;
    std::set<std::string> seen;
    for (const auto& r : results) {
        auto it = labels.find(r.commit_id);
        if (it == labels.end()) throw MissingLabel(r.commit_id);
        if (!seen.insert(r.commit_id).second) throw DuplicateResult(r.commit_id);
        const bool yes = r.verdict == Verdict::Yes;
        const bool vf = it->second == Label::VF;
        if (yes && vf) ++cm.tp;
        else if (yes) ++cm.fp;
        else if (vf) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

MetricReport metrics(const ConfusionMatrix& cm) {
    MetricReport r;
    r.confusion = cm;
    const double tp = static_cast<double>(cm.tp);
    const double fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn);
    const double tn = static_cast<double>(cm.tn);

    if (cm.tp + cm.fp == 0) r.zero_denominator.push_back("precision");
    else r.precision = tp / (tp + fp);
    if (cm.tp + cm.fn == 0) r.zero_denominator.push_back("recall");
    else r.recall = tp / (tp + fn);
    if (r.precision + r.recall == 0.0) r.zero_denominator.push_back("f1");
    else r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);

    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) r.zero_denominator.push_back("mcc");
    else r.mcc = (tp * tn - fp * fn) / std::sqrt(denom);
    return r;
}

MetricReport score(const std::vector<DetectionResult>& results, const LabelMap& labels) {
    auto r = metrics(confusion(results, labels));
    for (const auto& res : results) {
        if (res.failure_tag == ResultFailure::Unparseable) ++r.unparseable_count;
        if (res.failure_tag == ResultFailure::BackendError) ++r.backend_error_count;
    }
    r.label_set_digest = label_set_digest(labels);
    return r;
}

void to_json(json& j, const MetricReport& r) {
    j = json{{"confusion", r.confusion},
             {"precision", r.precision},
             {"recall", r.recall},
             {"f1", r.f1},
             {"mcc", r.mcc},
             {"unparseable_count", r.unparseable_count},
             {"backend_error_count", r.backend_error_count},
             {"zero_denominator_as_zero", r.zero_denominator},
             {"label_set_digest", r.label_set_digest}};
}

std::string format_report(const MetricReport& r) {
    std::string out;
    out += fmt::format("TP={} FP={} FN={} TN={} (n={})\n", r.confusion.tp, r.confusion.fp, r.confusion.fn,
                       r.confusion.tn, r.confusion.total());
    out += fmt::format("precision {:.4f}\nrecall    {:.4f}\nf1        {:.4f}\nmcc       {:.4f}\n", r.precision,
                       r.recall, r.f1, r.mcc);
    out += fmt::format("unparseable {} (counted as No)\n", r.unparseable_count);
    if (r.backend_error_count) out += fmt::format("backend errors {} (counted as No)\n", r.backend_error_count);
    if (!r.zero_denominator.empty()) {
        std::string names;
        for (const auto& n : r.zero_denominator) names += (names.empty() ? "" : ", ") + n;
        out += "zero denominator, reported as 0: " + names + "\n";
    }
    return out;
}

std::vector<AblationRow> compare_runs(const std::vector<std::pair<std::string, MetricReport>>& reports) {
    const MetricReport* full = nullptr;
    for (const auto& [mode, report] : reports) {
        if (mode == "full") full = &report;
    }
    if (!full) throw Error("ablation comparison needs a \"full\" run");
    std::vector<AblationRow> rows;
    for (const auto& [mode, report] : reports) {
        if (report.label_set_digest != full->label_set_digest) {
            throw LabelSetMismatch("run \"" + mode + "\" was scored on a different label set");
        }
        AblationRow row{mode, report};
        row.d_precision = report.precision - full->precision;
        row.d_recall = report.recall - full->recall;
        row.d_f1 = report.f1 - full->f1;
        row.d_mcc = report.mcc - full->mcc;
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::string delta(double d, bool is_full) {
    if (is_full) return "-";
    return fmt::format("{:+.4f}", d);
}

}  // namespace

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::string out = fmt::format("{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n", "mode", "precision",
                                  "recall", "f1", "mcc", "d_prec", "d_recall", "d_f1", "d_mcc");
    for (const auto& r : rows) {
        const bool f = r.mode == "full";
        out += fmt::format("{:<14} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f} {:>9} {:>9} {:>9} {:>9}\n", r.mode,
                           r.report.precision, r.report.recall, r.report.f1, r.report.mcc, delta(r.d_precision, f),
                           delta(r.d_recall, f), delta(r.d_f1, f), delta(r.d_mcc, f));
    }
    return out;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "mode,tp,fp,fn,tn,precision,recall,f1,mcc,delta_precision,delta_recall,delta_f1,delta_mcc\n";
    for (const auto& r : rows) {
        const auto& c = r.report.confusion;
        out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.mode, c.tp,
                           c.fp, c.fn, c.tn, r.report.precision, r.report.recall, r.report.f1, r.report.mcc,
                           r.d_precision, r.d_recall, r.d_f1, r.d_mcc);
    }
    return out;
}

Outcome outcome_of(Verdict verdict, Label label) {
    if (verdict == Verdict::Yes) return label == Label::VF ? Outcome::TP : Outcome::FP;
    return label == Label::VF ? Outcome::FN : Outcome::TN;
}

std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::TP: return "TP";
        case Outcome::FP: return "FP";
        case Outcome::FN: return "FN";
        case Outcome::TN: return "TN";
    }
    return "?";
}

namespace {

struct TagInfo {
    FailureTag tag;
    std::string_view name;
    bool fp;
    bool fn;
};

constexpr TagInfo kTags[] = {
    {FailureTag::PotentialUnreportedFix, "PotentialUnreportedFix", true, false},
    {FailureTag::NonVulnSecurityFixAsVF, "NonVulnSecurityFixAsVF", true, false},
    {FailureTag::NonFunctionalChange, "NonFunctionalChange", true, false},
    {FailureTag::NotSecurityRelated, "NotSecurityRelated", true, false},
    {FailureTag::MisledByRetrievedVuln, "MisledByRetrievedVuln", true, true},
    {FailureTag::VFAsNonVulnSecurityFix, "VFAsNonVulnSecurityFix", false, true},
    {FailureTag::MissedSecurityChange, "MissedSecurityChange", false, true},
    {FailureTag::LongContextMiss, "LongContextMiss", false, true},
    {FailureTag::Other, "Other", true, true},
};

const TagInfo& info(FailureTag t) {
    for (const auto& i : kTags) {
        if (i.tag == t) return i;
    }
    return kTags[std::size(kTags) - 1];
}

std::optional<Outcome> parse_outcome(std::string_view s) {
    for (auto o : {Outcome::TP, Outcome::FP, Outcome::FN, Outcome::TN}) {
        if (to_string(o) == s) return o;
    }
    return std::nullopt;
}

}  // namespace

std::string_view to_string(FailureTag t) { return info(t).name; }

std::optional<FailureTag> parse_failure_tag(std::string_view name) {
    for (const auto& i : kTags) {
        if (i.name == name) return i.tag;
    }
    return std::nullopt;
}

bool tag_applies(FailureTag tag, Outcome outcome) {
    const auto& i = info(tag);
    return (outcome == Outcome::FP && i.fp) || (outcome == Outcome::FN && i.fn);
}

void to_json(json& j, const TagRecord& r) {
    j = json{{"result_id", r.result_id},
             {"outcome", to_string(r.outcome)},
             {"tag", to_string(r.tag)},
             {"note", r.note},
             {"tagged_at", r.tagged_at}};
}

void from_json(const json& j, TagRecord& r) {
    try {
        r.result_id = j.at("result_id").get<std::string>();
        auto o = parse_outcome(j.at("outcome").get<std::string>());
        auto t = parse_failure_tag(j.at("tag").get<std::string>());
        if (!o || !t) throw SchemaError("bad tag record enum");
        r.outcome = *o;
        r.tag = *t;
        r.note = j.at("note").get<std::string>();
        r.tagged_at = j.at("tagged_at").get<std::string>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("tag record: ") + e.what());
    }
}

TagStore::TagStore(std::filesystem::path path) : path_(std::move(path)) {}

TagRecord TagStore::tag_failure(const DetectionResult& result, Label label, FailureTag tag, std::string note) {
    const auto o = outcome_of(result.verdict, label);
    if (o != Outcome::FP && o != Outcome::FN) {
        throw CategoryMismatch(result.commit_id + " is a " + std::string(to_string(o)) + ", not a failure");
    }
    if (!tag_applies(tag, o)) {
        throw CategoryMismatch(std::string(to_string(tag)) + " is not a " + std::string(to_string(o)) + " category");
    }
    TagRecord rec{result.commit_id, o, tag, std::move(note), utc_timestamp()};
    std::lock_guard lock(mu_);
    append_line_durable(path_, json(rec).dump());
    return rec;
}

std::map<std::string, TagRecord> TagStore::current() const {
    std::lock_guard lock(mu_);
    std::map<std::string, TagRecord> out;
    if (!std::filesystem::exists(path_)) return out;
    for (const auto& row : read_jsonl(path_)) {
        auto rec = row.get<TagRecord>();
        out[rec.result_id] = std::move(rec);
    }
    return out;
}

std::map<std::pair<Outcome, FailureTag>, std::size_t> TagStore::aggregate() const {
    std::map<std::pair<Outcome, FailureTag>, std::size_t> counts;
    for (const auto& [id, rec] : current()) ++counts[{rec.outcome, rec.tag}];
    return counts;
}

std::string format_failure_table(const std::map<std::pair<Outcome, FailureTag>, std::size_t>& counts) {
    std::string out = fmt::format("{:<5} {:<26} {:>5}\n", "type", "reason", "count");
    for (auto o : {Outcome::FP, Outcome::FN}) {
        for (const auto& i : kTags) {
            if (!tag_applies(i.tag, o)) continue;
            auto it = counts.find({o, i.tag});
            out += fmt::format("{:<5} {:<26} {:>5}\n", to_string(o), i.name, it == counts.end() ? 0 : it->second);
        }
    }
    return out;
}

}  // namespace vfd
