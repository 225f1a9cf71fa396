// lllab: lifelong language-learning lab driver.
//   lllab run <config.json>      one method, one order
//   lllab permute <config.json>  every order x every configured method
//   lllab analyze <run dir>      learning curves + teacher-split tables
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid config or missing
// artifacts. Logs go to stderr; data goes to files under the output dir.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "lll/analysis.hpp"
#include "lll/config.hpp"
#include "lll/permute.hpp"
#include "lll/report.hpp"
#include "lll/version.hpp"

namespace fs = std::filesystem;
using namespace lll;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct CommonArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> jobs;
};

std::optional<RunConfig> load_or_complain(const CommonArgs& args) {
    ConfigLoad load = load_run_config(args.config_path);
    if (!load.ok()) {
        std::cerr << "invalid config " << args.config_path << ":\n";
        for (const auto& e : load.errors) std::cerr << "  - " << e << "\n";
        return std::nullopt;
    }
    RunConfig cfg = std::move(*load.config);
    if (args.seed) cfg.stream.seed = *args.seed;
    if (args.out_dir) cfg.out_dir = *args.out_dir;
    if (args.jobs) cfg.jobs = *args.jobs;
    return cfg;
}

void echo_resolved(const RunConfig& cfg) {
    std::ofstream os(cfg.out_dir + "/resolved-config.json");
    os << resolved_json(cfg).dump(2) << '\n';
}

int cmd_run(const CommonArgs& args) {
    auto loaded = load_or_complain(args);
    if (!loaded) return kExitConfig;
    RunConfig cfg = std::move(*loaded);

    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    fs::create_directories(cfg.out_dir + "/checkpoints", ec);
    if (ec) {
        std::cerr << "cannot create output directory " << cfg.out_dir << ": " << ec.message() << "\n";
        return kExitConfig;
    }
    echo_resolved(cfg);

    Workbench w;
    try {
        w = build_workbench(cfg);
    } catch (const std::exception& e) {
        std::cerr << "task setup failed: " << e.what() << "\n";
        return kExitConfig;
    }
    StreamConfig stream = cfg.stream;
    stream.model.vocab_size = w.vocab.size();

    std::vector<std::pair<std::string, LanguageModel>> teachers;
    StreamHooks hooks;
    hooks.checkpoint_dir = cfg.out_dir + "/checkpoints";
    hooks.retain_teachers = cfg.retain_teachers;
    hooks.retained_teachers = &teachers;
    hooks.on_abort = [&](const LanguageModel& student, const RunReport& partial,
                         const std::string& what) {
        const std::string dump = cfg.out_dir + "/abort-state.ckpt";
        save_checkpoint(dump, student, w.vocab);
        std::ofstream os(cfg.out_dir + "/abort-report.json");
        os << report_to_json(partial).dump(2) << '\n';
        std::cerr << "training aborted: " << what << "\n"
                  << "state dump: " << dump << "\n";
    };

    try {
        const RunReport report = run_method(w.tasks, w.vocab, stream, cfg.method, hooks);
        save_report(cfg.out_dir, report);
        if (cfg.retain_teachers && !teachers.empty()) {
            fs::create_directories(cfg.out_dir + "/teachers");
            for (const auto& [task, model] : teachers)
                save_checkpoint(cfg.out_dir + "/teachers/" + task + ".ckpt", model, w.vocab);
        }
        std::cerr << "run complete: " << method_name(cfg.method) << " over "
                  << join(report.order, " -> ") << ", final average "
                  << fmt_double(report.final_average) << "\n";
        return 0;
    } catch (const TeacherGateError& e) {
        std::cerr << "teacher gate failure: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_permute(const CommonArgs& args) {
    auto loaded = load_or_complain(args);
    if (!loaded) return kExitConfig;
    RunConfig cfg = std::move(*loaded);

    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) {
        std::cerr << "cannot create output directory " << cfg.out_dir << ": " << ec.message() << "\n";
        return kExitConfig;
    }
    echo_resolved(cfg);

    try {
        const Workbench w = build_workbench(cfg);
        StreamConfig stream = cfg.stream;
        stream.model.vocab_size = w.vocab.size();
        const PermutationReport report =
            permutation_harness(w.tasks, w.vocab, stream, cfg.methods, cfg.jobs, cfg.out_dir);
        {
            std::ofstream os(cfg.out_dir + "/permutation_report.json");
            os << permutation_report_to_json(report).dump(2) << '\n';
        }
        {
            std::ofstream os(cfg.out_dir + "/permutation_summary.csv");
            os << "method,task,mean,std\n";
            for (const auto& [method, st] : report.stats) {
                for (const auto& [task, mean] : st.mean_per_task)
                    os << method << ',' << task << ',' << fmt_double(mean) << ','
                       << fmt_double(st.std_per_task.at(task)) << '\n';
                os << method << ",avg," << fmt_double(st.mean_avg) << ','
                   << fmt_double(st.std_avg) << '\n';
            }
        }
        std::cerr << "permutation sweep complete: " << report.runs.size() << " runs over "
                  << report.n_orders << " orders\n";
        return 0;
    } catch (const TeacherGateError& e) {
        std::cerr << "teacher gate failure: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "permutation sweep failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_analyze(const std::string& run_dir) {
    std::vector<std::string> missing;
    const std::string report_path = run_dir + "/report.json";
    const std::string config_path = run_dir + "/resolved-config.json";
    if (!fs::exists(report_path)) missing.push_back(report_path);
    if (!fs::exists(config_path)) missing.push_back(config_path);
    if (!missing.empty()) {
        std::cerr << "analyze: missing artifacts:\n";
        for (const auto& m : missing) std::cerr << "  - " << m << "\n";
        return kExitConfig;
    }

    RunReport report;
    RunConfig cfg;
    try {
        nlohmann::json rj;
        std::ifstream(report_path) >> rj;
        report = report_from_json(rj);
        ConfigLoad load = load_run_config(config_path);
        detail::require(load.ok(), "resolved config failed to parse");
        cfg = std::move(*load.config);
    } catch (const std::exception& e) {
        std::cerr << "analyze: cannot read run artifacts: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        const CurveTable curves = learning_curves(report);
        for (const auto& task : curves.eval_tasks) {
            std::ofstream os(run_dir + "/curve_" + task + ".csv");
            write_curve_csv(os, task, curves);
        }
        std::cerr << "analyze: wrote " << curves.eval_tasks.size() << " curve files\n";
    } catch (const std::exception& e) {
        std::cerr << "analyze: learning curves failed: " << e.what() << "\n";
        return kExitRuntime;
    }

    // Split analysis needs the final student and the retained teachers.
    const std::string student_path =
        run_dir + "/checkpoints/student-after-" + report.order.back() + ".ckpt";
    bool have_all = fs::exists(student_path);
    for (const auto& task : report.order)
        if (!fs::exists(run_dir + "/teachers/" + task + ".ckpt")) have_all = false;
    if (!have_all) {
        std::cerr << "analyze: split analysis skipped; missing:\n";
        if (!fs::exists(student_path)) std::cerr << "  - " << student_path << "\n";
        for (const auto& task : report.order)
            if (!fs::exists(run_dir + "/teachers/" + task + ".ckpt"))
                std::cerr << "  - " << run_dir << "/teachers/" << task << ".ckpt\n";
        return 0;  // curves alone are a valid analysis
    }

    try {
        const Checkpoint student = load_checkpoint(student_path);
        const Workbench w = build_workbench(cfg);
        std::ofstream combined(run_dir + "/split_analysis.csv");
        combined << "task,n,n_a,n_b,acc,acc_a,acc_b\n";
        for (const auto& task : w.tasks) {
            const Checkpoint teacher =
                load_checkpoint(run_dir + "/teachers/" + task.spec.task_id + ".ckpt");
            const SplitReport split =
                teacher_split_analysis(student.model, teacher.model, task, w.vocab);
            nlohmann::json j{{"task", task.spec.task_id},
                             {"n", split.n},
                             {"n_a", split.n_a},
                             {"n_b", split.n_b},
                             {"acc", split.acc}};
            if (split.acc_a) j["acc_a"] = *split.acc_a;
            if (split.acc_b) j["acc_b"] = *split.acc_b;
            std::ofstream os(run_dir + "/split_" + task.spec.task_id + ".json");
            os << j.dump(2) << '\n';
            combined << task.spec.task_id << ',' << split.n << ',' << split.n_a << ',' << split.n_b
                     << ',' << fmt_double(split.acc) << ','
                     << (split.acc_a ? fmt_double(*split.acc_a) : "") << ','
                     << (split.acc_b ? fmt_double(*split.acc_b) : "") << '\n';
        }
        std::cerr << "analyze: wrote split tables for " << w.tasks.size() << " tasks\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "analyze: split analysis failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale lifelong language learning lab"};
    app.set_version_flag("--version", lll::kVersion);
    app.require_subcommand(1);

    CommonArgs args;
    uint64_t seed_arg = 0;
    std::string out_arg;
    int jobs_arg = 0;

    auto add_common = [&](CLI::App* sub, bool with_jobs) {
        sub->add_option("config", args.config_path, "path to a run config JSON")->required();
        auto* s = sub->add_option("--seed", seed_arg, "override the config seed");
        auto* o = sub->add_option("--out", out_arg, "override the output directory");
        CLI::Option* j = nullptr;
        if (with_jobs) j = sub->add_option("--jobs", jobs_arg, "parallel workers for orders");
        sub->callback([&, s, o, j] {
            if (s->count()) args.seed = seed_arg;
            if (o->count()) args.out_dir = out_arg;
            if (j && j->count()) args.jobs = jobs_arg;
        });
    };

    auto* run = app.add_subcommand("run", "execute one configured method");
    add_common(run, false);
    auto* permute = app.add_subcommand("permute", "run every task order for each method");
    add_common(permute, true);
    std::string analyze_dir;
    auto* analyze = app.add_subcommand("analyze", "derive curves and split tables from a run");
    analyze->add_option("dir", analyze_dir, "directory of a completed run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    if (run->parsed()) return cmd_run(args);
    if (permute->parsed()) return cmd_permute(args);
    return cmd_analyze(analyze_dir);
}
