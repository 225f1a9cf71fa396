#pragma once

#include <charconv>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lll/lifelong.hpp"

namespace lll {

/// Shortest round-trip decimal form; keeps CSV and JSON output byte-stable
/// across runs.
inline std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

/// `{method}_{order}_{seed}`; the stem for a run's output files.
inline std::string run_file_stem(const std::string& method, const std::vector<std::string>& order,
                                 uint64_t seed) {
    return method + "_" + join(order, "-") + "_" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void write_eval_csv(std::ostream& os, const RunReport& report) {
    os << "epoch,training_task,eval_task,metric,value\n";
    for (const auto& r : report.evals)
        os << r.epoch << ',' << r.training_task << ',' << r.eval_task << ',' << r.metric_name << ','
           << fmt_double(r.value) << '\n';
}

struct CurvePoint {
    int epoch = 0;
    std::string training_task;
    std::string metric_name;
    double value = 0.0;
    bool task_boundary = false;  // last epoch trained on a task, except the final one
};

struct CurveTable {
    std::vector<std::string> eval_tasks;
    std::map<std::string, std::vector<CurvePoint>> points;  // per eval task, epoch ascending
};

/// Per-task score as a function of global epoch, with task-boundary epochs
/// marked. Requires a complete report (every epoch evaluated every task).
inline CurveTable learning_curves(const RunReport& report) {
    detail::require(!report.evals.empty(), "learning_curves: report has no evaluations");
    int max_epoch = 0;
    for (const auto& r : report.evals) max_epoch = std::max(max_epoch, r.epoch);
    CurveTable table;
    table.eval_tasks = report.order;
    std::map<int, std::string> trained_at;
    for (const auto& r : report.evals) trained_at[r.epoch] = r.training_task;
    detail::require(static_cast<int>(trained_at.size()) == max_epoch,
                    "learning_curves: evaluation rows missing for some epochs");
    for (const auto& task : table.eval_tasks) {
        auto& pts = table.points[task];
        for (int e = 1; e <= max_epoch; ++e) {
            const MetricRecord* found = nullptr;
            for (const auto& r : report.evals)
                if (r.epoch == e && r.eval_task == task) found = &r;
            detail::require(found != nullptr,
                            detail::str("learning_curves: no record for task ", task, " at epoch ", e));
            CurvePoint p;
            p.epoch = e;
            p.training_task = found->training_task;
            p.metric_name = found->metric_name;
            p.value = found->value;
            p.task_boundary = e < max_epoch && trained_at[e] != trained_at[e + 1];
            pts.push_back(p);
        }
    }
    return table;
}

inline void write_curve_csv(std::ostream& os, const std::string& eval_task, const CurveTable& table) {
    os << "epoch,eval_task,metric,value,training_task,task_boundary\n";
    for (const auto& p : table.points.at(eval_task))
        os << p.epoch << ',' << eval_task << ',' << p.metric_name << ',' << fmt_double(p.value)
           << ',' << p.training_task << ',' << (p.task_boundary ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["order"] = r.order;
    j["seed"] = r.seed;
    j["final_scores"] = r.final_scores;
    j["final_average"] = r.final_average;
    j["notes"] = r.notes;
    auto& evals = j["evals"] = nlohmann::json::array();
    for (const auto& e : r.evals)
        evals.push_back({{"epoch", e.epoch},
                         {"training_task", e.training_task},
                         {"eval_task", e.eval_task},
                         {"metric", e.metric_name},
                         {"value", e.value}});
    auto& batches = j["batches"] = nlohmann::json::array();
    for (const auto& b : r.batches)
        batches.push_back({{"step", b.step},
                           {"task_index", b.task_index},
                           {"training_task", b.training_task},
                           {"batch_kind", b.batch_kind},
                           {"loss_kind", b.loss_kind},
                           {"sample_count", b.sample_count},
                           {"origin_tasks", b.origin_tasks}});
    auto& pseudo = j["pseudo"] = nlohmann::json::array();
    for (const auto& p : r.pseudo) {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& t : p.per_task)
            per.push_back({{"task", t.task},
                           {"requested", t.requested},
                           {"accepted", t.accepted},
                           {"attempts", t.attempts},
                           {"rejects", t.rejects}});
        pseudo.push_back({{"task_index", p.task_index},
                          {"requested_total", p.requested_total},
                          {"per_task", std::move(per)}});
    }
    auto& teachers = j["teachers"] = nlohmann::json::array();
    for (const auto& t : r.teachers)
        teachers.push_back({{"task", t.task},
                            {"epoch_test_em", t.epoch_test_em},
                            {"gate_passed", t.gate_passed},
                            {"truncated_decodes", t.truncated_decodes}});
    return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.order = j.at("order").get<std::vector<std::string>>();
    r.seed = j.at("seed").get<uint64_t>();
    r.final_scores = j.at("final_scores").get<std::map<std::string, double>>();
    r.final_average = j.at("final_average").get<double>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
    for (const auto& e : j.at("evals")) {
        MetricRecord m;
        m.epoch = e.at("epoch").get<int>();
        m.training_task = e.at("training_task").get<std::string>();
        m.eval_task = e.at("eval_task").get<std::string>();
        m.metric_name = e.at("metric").get<std::string>();
        m.value = e.at("value").get<double>();
        r.evals.push_back(std::move(m));
    }
    for (const auto& b : j.at("batches")) {
        BatchRecord rec;
        rec.step = b.at("step").get<int>();
        rec.task_index = b.at("task_index").get<int>();
        rec.training_task = b.at("training_task").get<std::string>();
        rec.batch_kind = b.at("batch_kind").get<std::string>();
        rec.loss_kind = b.at("loss_kind").get<std::string>();
        rec.sample_count = b.at("sample_count").get<int>();
        rec.origin_tasks = b.at("origin_tasks").get<std::vector<std::string>>();
        r.batches.push_back(std::move(rec));
    }
    for (const auto& p : j.at("pseudo")) {
        PseudoRound round;
        round.task_index = p.at("task_index").get<int>();
        round.requested_total = p.at("requested_total").get<int>();
        for (const auto& t : p.at("per_task")) {
            PseudoTaskStat s;
            s.task = t.at("task").get<std::string>();
            s.requested = t.at("requested").get<int>();
            s.accepted = t.at("accepted").get<int>();
            s.attempts = t.at("attempts").get<int>();
            s.rejects = t.at("rejects").get<std::map<std::string, int>>();
            round.per_task.push_back(std::move(s));
        }
        r.pseudo.push_back(std::move(round));
    }
    for (const auto& t : j.at("teachers")) {
        TeacherStat s;
        s.task = t.at("task").get<std::string>();
        s.epoch_test_em = t.at("epoch_test_em").get<std::vector<double>>();
        s.gate_passed = t.at("gate_passed").get<bool>();
        s.truncated_decodes = t.at("truncated_decodes").get<int>();
        r.teachers.push_back(std::move(s));
    }
    return r;
}

inline void save_report(const std::string& dir, const RunReport& report) {
    const std::string stem = run_file_stem(report.method, report.order, report.seed);
    {
        std::ofstream os(dir + "/report.json");
        detail::require(static_cast<bool>(os), "save_report: cannot write to " + dir);
        os << report_to_json(report).dump(2) << '\n';
    }
    {
        std::ofstream os(dir + "/" + stem + ".csv");
        detail::require(static_cast<bool>(os), "save_report: cannot write to " + dir);
        write_eval_csv(os, report);
    }
}

}  // namespace lll
