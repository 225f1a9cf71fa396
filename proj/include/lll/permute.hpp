#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "lll/report.hpp"

namespace lll {

struct OrderResult {
    std::string method;
    std::vector<std::string> order;
    std::map<std::string, double> final_scores;
    double final_average = 0.0;
};

struct PermutationStats {
    std::map<std::string, double> mean_per_task, std_per_task;
    double mean_avg = 0.0, std_avg = 0.0;
};

struct PermutationReport {
    int n_orders = 0;
    std::vector<OrderResult> runs;                  // sorted by (method, order)
    std::map<std::string, PermutationStats> stats;  // per method
};

namespace detail {

// Population standard deviation; fixed choice, documented in the README.
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

inline std::string order_key(const std::vector<std::string>& order) { return join(order, "-"); }

}  // namespace detail

/// Recomputes per-task and averaged mean/std over all stored orders.
inline void recompute_stats(PermutationReport& report) {
    report.stats.clear();
    std::map<std::string, std::vector<const OrderResult*>> by_method;
    for (const auto& r : report.runs) by_method[r.method].push_back(&r);
    for (auto& [method, runs] : by_method) {
        PermutationStats st;
        std::vector<double> avgs;
        std::map<std::string, std::vector<double>> per_task;
        for (const auto* r : runs) {
            avgs.push_back(r->final_average);
            for (const auto& [task, v] : r->final_scores) per_task[task].push_back(v);
        }
        std::tie(st.mean_avg, st.std_avg) = detail::mean_std(avgs);
        for (auto& [task, xs] : per_task)
            std::tie(st.mean_per_task[task], st.std_per_task[task]) = detail::mean_std(xs);
        report.stats[method] = std::move(st);
    }
}

/// Runs every order of the task set for every method, one run per
/// (order, method) pair with the shared seed. Completed runs land in a
/// manifest, so an interrupted invocation resumes where it stopped.
/// `jobs` worker threads share the run queue; each run is self-contained.
inline PermutationReport permutation_harness(const std::vector<TaskDataset>& tasks,
                                             const Vocabulary& vocab, const StreamConfig& cfg,
                                             const std::vector<Method>& methods, int jobs = 1,
                                             const std::string& out_dir = "") {
    detail::require(tasks.size() >= 2 && tasks.size() <= 4,
                    "permutation_harness: task count must be in [2, 4] (factorial growth)");
    detail::require(!methods.empty(), "permutation_harness: no methods given");

    std::vector<std::vector<std::string>> orders;
    {
        std::vector<std::string> ids;
        for (const auto& t : tasks) ids.push_back(t.spec.task_id);
        std::sort(ids.begin(), ids.end());
        do {
            orders.push_back(ids);
        } while (std::next_permutation(ids.begin(), ids.end()));
    }

    // Resume support: skip (method, order) pairs recorded in the manifest.
    const std::string manifest_path =
        out_dir.empty() ? "" : out_dir + "/permute-manifest.json";
    nlohmann::json manifest;
    manifest["completed"] = nlohmann::json::object();
    if (!manifest_path.empty() && std::filesystem::exists(manifest_path)) {
        std::ifstream is(manifest_path);
        is >> manifest;
    }

    struct Job {
        Method method;
        std::vector<std::string> order;
    };
    std::vector<Job> queue;
    PermutationReport report;
    report.n_orders = static_cast<int>(orders.size());
    for (Method m : methods)
        for (const auto& order : orders) {
            const std::string key =
                std::string(method_name(m)) + "|" + detail::order_key(order);
            if (manifest["completed"].contains(key)) {
                const auto& entry = manifest["completed"][key];
                OrderResult r;
                r.method = method_name(m);
                r.order = order;
                r.final_scores = entry.at("final_scores").get<std::map<std::string, double>>();
                r.final_average = entry.at("final_average").get<double>();
                report.runs.push_back(std::move(r));
            } else {
                queue.push_back({m, order});
            }
        }

    std::mutex mu;
    size_t next = 0;
    auto worker = [&] {
        for (;;) {
            Job job;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= queue.size()) return;
                job = queue[next++];
            }
            std::vector<TaskDataset> ordered;
            for (const auto& id : job.order)
                for (const auto& t : tasks)
                    if (t.spec.task_id == id) ordered.push_back(t);
            const RunReport run = run_method(ordered, vocab, cfg, job.method);

            OrderResult r;
            r.method = run.method;
            r.order = job.order;
            r.final_scores = run.final_scores;
            r.final_average = run.final_average;
            std::lock_guard<std::mutex> lock(mu);
            if (!out_dir.empty()) {
                const std::string run_dir =
                    out_dir + "/" + run_file_stem(run.method, job.order, cfg.seed);
                std::filesystem::create_directories(run_dir);
                save_report(run_dir, run);
                const std::string key = run.method + "|" + detail::order_key(job.order);
                manifest["completed"][key] = {{"final_scores", r.final_scores},
                                              {"final_average", r.final_average},
                                              {"dir", run_dir}};
                std::ofstream os(manifest_path);
                os << manifest.dump(2) << '\n';
            }
            report.runs.push_back(std::move(r));
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < std::max(1, jobs); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::sort(report.runs.begin(), report.runs.end(), [](const OrderResult& a, const OrderResult& b) {
        return std::tie(a.method, a.order) < std::tie(b.method, b.order);
    });
    recompute_stats(report);
    return report;
}

inline nlohmann::json permutation_report_to_json(const PermutationReport& r) {
    nlohmann::json j;
    j["n_orders"] = r.n_orders;
    auto& runs = j["runs"] = nlohmann::json::array();
    for (const auto& run : r.runs)
        runs.push_back({{"method", run.method},
                        {"order", run.order},
                        {"final_scores", run.final_scores},
                        {"final_average", run.final_average}});
    auto& stats = j["stats"] = nlohmann::json::object();
    for (const auto& [method, st] : r.stats)
        stats[method] = {{"mean_per_task", st.mean_per_task},
                         {"std_per_task", st.std_per_task},
                         {"mean_avg", st.mean_avg},
                         {"std_avg", st.std_avg}};
    return j;
}

}  // namespace lll
