#include "vfd/review_service.hpp"

#include <charconv>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "vfd/eval.hpp"

namespace vfd {

std::string_view to_string(FinalVerdict f) {
    switch (f) {
        case FinalVerdict::ConfirmVF: return "ConfirmVF";
        case FinalVerdict::RejectVF: return "RejectVF";
        case FinalVerdict::Unsure: return "Unsure";
    }
    return "?";
}

std::optional<FinalVerdict> parse_final_verdict(std::string_view name) {
    for (auto f : {FinalVerdict::ConfirmVF, FinalVerdict::RejectVF, FinalVerdict::Unsure}) {
        if (to_string(f) == name) return f;
    }
    return std::nullopt;
}

void to_json(json& j, const VerdictRecord& r) {
    j = json{{"result_id", r.result_id},   {"reviewer", r.reviewer},
             {"answers", r.answers},       {"final", to_string(r.final)},
             {"comment", r.comment},       {"reviewed_at", r.reviewed_at}};
}

void from_json(const json& j, VerdictRecord& r) {
    try {
        r.result_id = j.at("result_id").get<std::string>();
        r.reviewer = j.at("reviewer").get<std::string>();
        r.answers = j.at("answers").get<std::array<bool, kQuestionCount>>();
        auto f = parse_final_verdict(j.at("final").get<std::string>());
        if (!f) throw SchemaError("verdict record: bad final value");
        r.final = *f;
        r.comment = j.at("comment").get<std::string>();
        r.reviewed_at = j.at("reviewed_at").get<std::string>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("verdict record: ") + e.what());
    }
}

VerdictStore::VerdictStore(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    for (const auto& row : read_jsonl(path_)) {
        auto rec = row.get<VerdictRecord>();
        active_[{rec.result_id, rec.reviewer}] = std::move(rec);
    }
}

void VerdictStore::append(const VerdictRecord& record) {
    std::lock_guard lock(mu_);
    append_line_durable(path_, json(record).dump());
    active_[{record.result_id, record.reviewer}] = record;
}

std::vector<VerdictRecord> VerdictStore::active_for(const std::string& result_id) const {
    std::lock_guard lock(mu_);
    std::vector<VerdictRecord> out;
    for (auto it = active_.lower_bound({result_id, ""}); it != active_.end() && it->first.first == result_id; ++it) {
        out.push_back(it->second);
    }
    return out;
}

bool VerdictStore::has_confirmation(const std::string& result_id) const {
    for (const auto& v : active_for(result_id)) {
        if (v.final == FinalVerdict::ConfirmVF) return true;
    }
    return false;
}

ReviewService::ReviewService(ReviewConfig config)
    : config_(std::move(config)), results_(load_results(config_.results_path)), verdicts_(config_.verdicts_path) {
    for (std::size_t i = 0; i < results_.size(); ++i) {
        if (!result_index_.emplace(results_[i].commit_id, i).second) {
            throw DuplicateResult(results_[i].commit_id);
        }
    }
    for (auto& e : load_dataset(config_.dataset_path)) entries_.emplace(e.commit.id, std::move(e));
    for (const auto& r : results_) {
        if (!entries_.count(r.commit_id)) throw MissingLabel(r.commit_id);
    }
    if (config_.hv_store_path && std::filesystem::exists(*config_.hv_store_path)) {
        auto store = HvStore::open(*config_.hv_store_path, true);
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto rec = store.record(i);
            if (rec.promoted) promoted_.insert(rec.promoted_from);
            cve_descriptions_.emplace(rec.cve_id, rec.cve_description);
        }
    }
}

const DetectionResult& ReviewService::result(const std::string& id) const {
    auto it = result_index_.find(id);
    if (it == result_index_.end()) throw ReviewError(404, "NotFound", "no result " + id);
    return results_[it->second];
}

std::string ReviewService::status_of(const std::string& id) const {
    {
        std::shared_lock lock(store_mu_);
        if (promoted_.count(id)) return "promoted";
    }
    return verdicts_.active_for(id).empty() ? "unreviewed" : "reviewed";
}

json ReviewService::item_brief(const DetectionResult& r, bool reveal) const {
    const auto& entry = entries_.at(r.commit_id);
    json j{{"id", r.commit_id},
           {"repo", entry.commit.repo},
           {"language", to_string(entry.commit.language)},
           {"committed_at", format_date(entry.commit.committed_at)},
           {"verdict", to_string(r.verdict)},
           {"failure_tag", r.failure_tag ? json(to_string(*r.failure_tag)) : json(nullptr)},
           {"status", status_of(r.commit_id)}};
    if (reveal) {
        j["label"] = to_string(entry.label);
        j["cve_id"] = entry.cve_id ? json(*entry.cve_id) : json(nullptr);
    }
    return j;
}

json ReviewService::list_items(std::size_t page, std::size_t page_size, const std::string& filter,
                               bool reveal) const {
    static const std::set<std::string> kFilters{"all", "unreviewed", "reviewed", "promoted", "yes", "no"};
    if (!kFilters.count(filter)) throw ReviewError(400, "BadRequest", "unknown filter: " + filter);
    if (page == 0 || page_size == 0 || page_size > 500) {
        throw ReviewError(400, "BadRequest", "page starts at 1; page_size must be 1..500");
    }
    std::vector<const DetectionResult*> matched;
    for (const auto& r : results_) {
        bool keep = true;
        if (filter == "yes") keep = r.verdict == Verdict::Yes;
        else if (filter == "no") keep = r.verdict == Verdict::No;
        else if (filter != "all") {
            auto s = status_of(r.commit_id);
            // A promoted item has also been reviewed.
            keep = filter == s || (filter == "reviewed" && s == "promoted");
        }
        if (keep) matched.push_back(&r);
    }
    json items = json::array();
    const std::size_t begin = (page - 1) * page_size;
    for (std::size_t i = begin; i < matched.size() && i < begin + page_size; ++i) {
        items.push_back(item_brief(*matched[i], reveal));
    }
    return json{{"page", page},
                {"page_size", page_size},
                {"total", matched.size()},
                {"filter", filter},
                {"labels_revealed", reveal},
                {"items", items}};
}

json ReviewService::item(const std::string& id, bool reveal) const {
    const auto& r = result(id);
    const auto& entry = entries_.at(id);
    auto j = item_brief(r, reveal);
    j["message"] = entry.commit.message;
    j["diff"] = entry.commit.diff;
    j["analysis"] = r.analysis;
    json used = json::array();
    for (auto c : r.inputs_used) used.push_back(to_string(c));
    j["inputs_used"] = used;
    j["cci_summary"] = r.cci_summary ? json(*r.cci_summary) : json(nullptr);
    j["da_summaries"] = r.da_summaries;
    if (r.hv_match) {
        json hv{{"cve_id", r.hv_match->cve_id}, {"distance", r.hv_match->distance}};
        std::shared_lock lock(store_mu_);
        auto it = cve_descriptions_.find(r.hv_match->cve_id);
        hv["description"] = it == cve_descriptions_.end() ? json(nullptr) : json(it->second);
        j["hv_match"] = hv;
    } else {
        j["hv_match"] = nullptr;
    }
    j["component_failures"] = r.component_failures;
    j["reviews"] = verdicts_.active_for(id);
    return j;
}

VerdictRecord ReviewService::submit_verdict(const std::string& id, const json& body,
                                            const std::string& header_reviewer) {
    result(id);
    if (!body.is_object()) throw ReviewError(400, "BadRequest", "body must be a JSON object");
    VerdictRecord rec;
    rec.result_id = id;
    if (body.contains("reviewer") && body["reviewer"].is_string()) rec.reviewer = body["reviewer"];
    if (rec.reviewer.empty()) rec.reviewer = header_reviewer;
    if (rec.reviewer.empty()) throw ReviewError(400, "BadRequest", "reviewer is required");

    const auto& answers = body.contains("answers") ? body["answers"] : json();
    if (!answers.is_array() || answers.size() != kQuestionCount) {
        throw ReviewError(400, "BadRequest", "answers must be an array of 5 booleans");
    }
    for (std::size_t i = 0; i < kQuestionCount; ++i) {
        if (!answers[i].is_boolean()) {
            throw ReviewError(400, "BadRequest", "answer " + std::to_string(i + 1) + " is not a boolean");
        }
        rec.answers[i] = answers[i].get<bool>();
    }
    std::optional<FinalVerdict> final;
    if (body.contains("final") && body["final"].is_string()) final = parse_final_verdict(body["final"].get<std::string>());
    if (!final) throw ReviewError(400, "BadRequest", "final must be ConfirmVF, RejectVF or Unsure");
    rec.final = *final;
    if (body.contains("comment")) {
        if (!body["comment"].is_string()) throw ReviewError(400, "BadRequest", "comment must be a string");
        rec.comment = body["comment"];
    }
    rec.reviewed_at = utc_timestamp();
    verdicts_.append(rec);
    return rec;
}

PromoteOutcome ReviewService::promote(const std::string& id, const json& body) {
    const auto& r = result(id);
    if (!config_.hv_store_path) throw ReviewError(409, "NoStore", "no HV store configured");
    if (!verdicts_.has_confirmation(id)) throw MissingVerdict(id);
    if (!r.cci_summary) throw MissingSummary(id);
    if (!config_.embedder) throw ReviewError(409, "NoEmbedder", "no embedder configured for promotion");
    const auto& entry = entries_.at(id);

    HVRecord rec;
    if (body.is_object() && body.contains("cve_id") && body["cve_id"].is_string()) {
        rec.cve_id = body["cve_id"];
    } else if (entry.cve_id) {
        rec.cve_id = *entry.cve_id;
    }
    if (rec.cve_id.empty()) throw ReviewError(422, "MissingCveId", "a cve_id is required to promote " + id);
    if (body.is_object() && body.contains("cve_description") && body["cve_description"].is_string()) {
        rec.cve_description = body["cve_description"];
    }
    rec.fix_commit = entry.commit;
    rec.three_aspects = *r.cci_summary;
    rec.language = entry.commit.language;
    rec.disclosed_at = entry.commit.committed_at;
    rec.promoted = true;
    rec.promoted_from = id;
    rec.embedding = embed(rec.three_aspects, *config_.embedder);

    std::unique_lock lock(store_mu_);
    const bool appended = HvStore::append(*config_.hv_store_path, rec);
    promoted_.insert(id);
    cve_descriptions_.emplace(rec.cve_id, rec.cve_description);
    return {appended, std::move(rec)};
}

json ReviewService::summary() const {
    std::map<std::string, std::size_t> by_status, by_verdict;
    for (const auto& r : results_) {
        ++by_status[status_of(r.commit_id)];
        ++by_verdict[std::string(to_string(r.verdict))];
    }
    json j{{"total", results_.size()},
           {"status", by_status},
           {"verdict", by_verdict},
           {"labels_released", config_.labels_released}};
    if (config_.labels_released) {
        LabelMap labels;
        for (const auto& r : results_) labels.emplace(r.commit_id, entries_.at(r.commit_id).label);
        j["metrics"] = score(results_, labels);
    }
    return j;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const ReviewError& e) {
            send_json(res, e.status(), {{"error", e.kind()}, {"message", e.what()}});
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", "BadRequest"}, {"message", e.what()}});
        } catch (const std::exception& e) {
            spdlog::error("{} {}: {}", req.method, req.path, e.what());
            send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
        }
    };
}

std::size_t size_param(const httplib::Request& req, const std::string& name, std::size_t fallback) {
    if (!req.has_param(name)) return fallback;
    const auto v = req.get_param_value(name);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ReviewError(400, "BadRequest", name + " must be a non-negative integer");
    }
    return out;
}

bool flag_param(const httplib::Request& req, const std::string& name) {
    if (!req.has_param(name)) return false;
    const auto v = req.get_param_value(name);
    return v == "1" || v == "true" || v == "yes";
}

json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
}

}  // namespace

void ReviewService::register_routes(httplib::Server& server) {
    server.Get("/api/items", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto filter = req.has_param("filter") ? req.get_param_value("filter") : "all";
                   send_json(res, 200,
                             list_items(size_param(req, "page", 1), size_param(req, "page_size", 20), filter,
                                        flag_param(req, "reveal")));
               }));
    server.Post(R"(/api/items/(.+)/verdict)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    auto rec = submit_verdict(req.matches[1], body_json(req), req.get_header_value("X-Reviewer"));
                    send_json(res, 201, rec);
                }));
    server.Post(R"(/api/items/(.+)/promote)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    auto out = promote(req.matches[1], body_json(req));
                    send_json(res, out.appended ? 201 : 200,
                              {{"promoted", true},
                               {"appended", out.appended},
                               {"result_id", out.record.promoted_from},
                               {"cve_id", out.record.cve_id}});
                }));
    server.Get(R"(/api/items/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, 200, item(req.matches[1], flag_param(req, "reveal")));
               }));
    server.Get("/api/summary", guarded([this](const httplib::Request&, httplib::Response& res) {
                   send_json(res, 200, summary());
               }));
    if (config_.static_dir) {
        if (!server.set_mount_point("/", config_.static_dir->string())) {
            throw Error("static directory not found: " + config_.static_dir->string());
        }
    }
}

}  // namespace vfd
