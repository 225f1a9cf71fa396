#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lll/lifelong.hpp"

namespace lll {

/// Everything one experiment needs, loadable from a flat JSON file. The
/// resolved form (all defaults materialized) is echoed next to the outputs so
/// any run can be reproduced from its own directory.
struct RunConfig {
    Method method = Method::kLamol;
    std::vector<Method> methods;  // permute only; defaults to {method}
    std::vector<TaskSpec> tasks;
    std::vector<std::string> order;  // defaults to task listing order
    StreamConfig stream;
    std::string out_dir = "runs/out";
    bool retain_teachers = false;
    int jobs = 1;

    std::vector<TaskSpec> ordered_specs() const {
        std::vector<TaskSpec> out;
        for (const auto& id : order)
            for (const auto& t : tasks)
                if (t.task_id == id) out.push_back(t);
        return out;
    }
};

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& into, std::vector<std::string>& errors) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const std::exception& e) {
        errors.push_back(lll::detail::str(key, ": ", e.what()));
    }
}

}  // namespace detail

struct ConfigLoad {
    std::optional<RunConfig> config;
    std::vector<std::string> errors;
    bool ok() const { return config.has_value() && errors.empty(); }
};

inline ConfigLoad parse_run_config(const nlohmann::json& j) {
    ConfigLoad out;
    RunConfig cfg;
    auto& errors = out.errors;

    std::string method_str = method_name(cfg.method);
    detail::take(j, "method", method_str, errors);
    try {
        cfg.method = method_from(method_str);
    } catch (const std::exception& e) {
        errors.push_back(lll::detail::str("method: ", e.what()));
    }
    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : j.at("methods")) {
            try {
                cfg.methods.push_back(method_from(m.get<std::string>()));
            } catch (const std::exception& e) {
                errors.push_back(lll::detail::str("methods: ", e.what()));
            }
        }
    }
    if (cfg.methods.empty()) cfg.methods = {cfg.method};

    detail::take(j, "seed", cfg.stream.seed, errors);
    detail::take(j, "out_dir", cfg.out_dir, errors);
    detail::take(j, "gamma", cfg.stream.gamma, errors);
    detail::take(j, "epochs_per_task", cfg.stream.epochs_per_task, errors);
    detail::take(j, "batch_size", cfg.stream.batch_size, errors);
    detail::take(j, "temperature", cfg.stream.temperature, errors);
    detail::take(j, "top_k", cfg.stream.top_k, errors);
    detail::take(j, "lm_weight", cfg.stream.lm_weight, errors);
    detail::take(j, "reset_optimizer_per_task", cfg.stream.reset_optimizer_per_task, errors);
    detail::take(j, "teacher_gate_em", cfg.stream.teacher_gate_em, errors);
    detail::take(j, "pseudo_retry_factor", cfg.stream.pseudo_retry_factor, errors);
    detail::take(j, "pseudo_apportion", cfg.stream.pseudo_apportion, errors);
    detail::take(j, "retain_teachers", cfg.retain_teachers, errors);
    detail::take(j, "jobs", cfg.jobs, errors);

    if (j.contains("model")) {
        const auto& mj = j.at("model");
        detail::take(mj, "n_layers", cfg.stream.model.n_layers, errors);
        detail::take(mj, "n_heads", cfg.stream.model.n_heads, errors);
        detail::take(mj, "d_model", cfg.stream.model.d_model, errors);
        detail::take(mj, "context_len", cfg.stream.model.context_len, errors);
    }
    if (j.contains("optimizer")) {
        const auto& oj = j.at("optimizer");
        detail::take(oj, "lr_max", cfg.stream.optim.lr_max, errors);
        detail::take(oj, "beta1", cfg.stream.optim.beta1, errors);
        detail::take(oj, "beta2", cfg.stream.optim.beta2, errors);
        detail::take(oj, "epsilon", cfg.stream.optim.epsilon, errors);
        detail::take(oj, "weight_decay", cfg.stream.optim.weight_decay, errors);
        detail::take(oj, "warmup_ratio", cfg.stream.optim.warmup_ratio, errors);
        detail::take(oj, "max_grad_norm", cfg.stream.optim.max_grad_norm, errors);
    }

    if (j.contains("tasks")) {
        for (const auto& tj : j.at("tasks")) {
            TaskSpec spec;
            detail::take(tj, "task_id", spec.task_id, errors);
            std::string kind = task_kind_name(spec.kind);
            detail::take(tj, "kind", kind, errors);
            try {
                spec.kind = task_kind_from(kind);
            } catch (const std::exception& e) {
                errors.push_back(lll::detail::str("tasks.kind: ", e.what()));
            }
            detail::take(tj, "alphabet", spec.alphabet, errors);
            detail::take(tj, "len_min", spec.len_min, errors);
            detail::take(tj, "len_max", spec.len_max, errors);
            detail::take(tj, "n_train", spec.n_train, errors);
            detail::take(tj, "n_test", spec.n_test, errors);
            detail::take(tj, "seed", spec.seed, errors);
            std::string metric = metric_name(spec.metric);
            detail::take(tj, "metric", metric, errors);
            try {
                spec.metric = metric_from(metric);
            } catch (const std::exception& e) {
                errors.push_back(lll::detail::str("tasks.metric: ", e.what()));
            }
            cfg.tasks.push_back(std::move(spec));
        }
    }
    detail::take(j, "order", cfg.order, errors);
    if (cfg.order.empty())
        for (const auto& t : cfg.tasks) cfg.order.push_back(t.task_id);

    // field-level validation, collected rather than thrown
    if (cfg.stream.gamma < 0) errors.push_back("gamma: must be nonnegative");
    if (cfg.stream.epochs_per_task < 1) errors.push_back("epochs_per_task: must be at least 1");
    if (cfg.stream.batch_size < 1) errors.push_back("batch_size: must be at least 1");
    if (cfg.stream.temperature <= 0) errors.push_back("temperature: must be positive");
    if (cfg.stream.top_k < 1) errors.push_back("top_k: must be at least 1");
    if (cfg.stream.lm_weight < 0) errors.push_back("lm_weight: must be nonnegative");
    if (cfg.stream.pseudo_retry_factor < 1) errors.push_back("pseudo_retry_factor: must be at least 1");
    if (cfg.stream.pseudo_apportion != "uniform" && cfg.stream.pseudo_apportion != "by-size")
        errors.push_back("pseudo_apportion: must be \"uniform\" or \"by-size\"");
    if (cfg.jobs < 1) errors.push_back("jobs: must be at least 1");
    if (cfg.tasks.empty()) errors.push_back("tasks: at least one task required");
    std::set<std::string> ids;
    for (const auto& t : cfg.tasks) {
        if (!ids.insert(t.task_id).second)
            errors.push_back("tasks: duplicate task_id " + t.task_id);
        try {
            t.validate();
        } catch (const std::exception& e) {
            errors.push_back(lll::detail::str("tasks.", t.task_id, ": ", e.what()));
        }
    }
    std::set<std::string> order_seen;
    for (const auto& id : cfg.order) {
        if (!ids.count(id)) errors.push_back("order: unknown task " + id);
        if (!order_seen.insert(id).second) errors.push_back("order: duplicate task " + id);
    }
    if (cfg.order.size() != cfg.tasks.size())
        errors.push_back("order: must list every task exactly once");

    if (errors.empty()) out.config = std::move(cfg);
    return out;
}

inline ConfigLoad load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) return {std::nullopt, {"cannot open config file " + path}};
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        return {std::nullopt, {lll::detail::str("invalid JSON: ", e.what())}};
    }
    return parse_run_config(j);
}

/// Full round-trippable echo: parse(resolved_json(c)) reproduces c.
inline nlohmann::json resolved_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["method"] = method_name(cfg.method);
    nlohmann::json methods = nlohmann::json::array();
    for (Method m : cfg.methods) methods.push_back(method_name(m));
    j["methods"] = std::move(methods);
    j["seed"] = cfg.stream.seed;
    j["out_dir"] = cfg.out_dir;
    j["gamma"] = cfg.stream.gamma;
    j["epochs_per_task"] = cfg.stream.epochs_per_task;
    j["batch_size"] = cfg.stream.batch_size;
    j["temperature"] = cfg.stream.temperature;
    j["top_k"] = cfg.stream.top_k;
    j["lm_weight"] = cfg.stream.lm_weight;
    j["reset_optimizer_per_task"] = cfg.stream.reset_optimizer_per_task;
    j["teacher_gate_em"] = cfg.stream.teacher_gate_em;
    j["pseudo_retry_factor"] = cfg.stream.pseudo_retry_factor;
    j["pseudo_apportion"] = cfg.stream.pseudo_apportion;
    j["retain_teachers"] = cfg.retain_teachers;
    j["jobs"] = cfg.jobs;
    j["model"] = {{"n_layers", cfg.stream.model.n_layers},
                  {"n_heads", cfg.stream.model.n_heads},
                  {"d_model", cfg.stream.model.d_model},
                  {"context_len", cfg.stream.model.context_len}};
    j["optimizer"] = {{"lr_max", cfg.stream.optim.lr_max},
                      {"beta1", cfg.stream.optim.beta1},
                      {"beta2", cfg.stream.optim.beta2},
                      {"epsilon", cfg.stream.optim.epsilon},
                      {"weight_decay", cfg.stream.optim.weight_decay},
                      {"warmup_ratio", cfg.stream.optim.warmup_ratio},
                      {"max_grad_norm", cfg.stream.optim.max_grad_norm}};
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : cfg.tasks)
        tasks.push_back({{"task_id", t.task_id},
                         {"kind", task_kind_name(t.kind)},
                         {"alphabet", t.alphabet},
                         {"len_min", t.len_min},
                         {"len_max", t.len_max},
                         {"n_train", t.n_train},
                         {"n_test", t.n_test},
                         {"seed", t.seed},
                         {"metric", metric_name(t.metric)}});
    j["tasks"] = std::move(tasks);
    j["order"] = cfg.order;
    return j;
}

/// Vocabulary plus datasets for the configured tasks, in `order`.
struct Workbench {
    Vocabulary vocab;
    std::vector<TaskDataset> tasks;
};

inline Workbench build_workbench(const RunConfig& cfg) {
    Workbench w;
    const auto specs = cfg.ordered_specs();
    w.vocab = Vocabulary::build(specs);
    StreamConfig stream = cfg.stream;
    stream.model.vocab_size = w.vocab.size();
    for (const auto& spec : specs)
        w.tasks.push_back(generate_task(w.vocab, spec, stream.model.context_len));
    return w;
}

}  // namespace lll
