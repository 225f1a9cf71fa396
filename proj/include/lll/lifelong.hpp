#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lll/checkpoint.hpp"
#include "lll/distill.hpp"
#include "lll/metrics.hpp"
#include "lll/optim.hpp"

namespace lll {

enum class Method {
    kFinetune,
    kLamol,
    kL2kdWord,
    kL2kdSeq,
    kL2kdSeqSoft,
    kMultitask,
    kMultitaskSeqKd,
};

inline const char* method_name(Method m) {
    switch (m) {
        case Method::kFinetune: return "finetune";
        case Method::kLamol: return "lamol";
        case Method::kL2kdWord: return "l2kd-word";
        case Method::kL2kdSeq: return "l2kd-seq";
        case Method::kL2kdSeqSoft: return "l2kd-seqsoft";
        case Method::kMultitask: return "multitask";
        case Method::kMultitaskSeqKd: return "multitask-seqkd";
    }
    return "?";
}

inline Method method_from(const std::string& s) {
    for (Method m : {Method::kFinetune, Method::kLamol, Method::kL2kdWord, Method::kL2kdSeq,
                     Method::kL2kdSeqSoft, Method::kMultitask, Method::kMultitaskSeqKd})
        if (s == method_name(m)) return m;
    throw std::invalid_argument("unknown method: " + s);
}

inline LossKind loss_kind_of(Method m) {
    switch (m) {
        case Method::kFinetune:
        case Method::kLamol:
        case Method::kMultitask: return LossKind::kNll;
        case Method::kL2kdWord: return LossKind::kWordKd;
        case Method::kL2kdSeq:
        case Method::kMultitaskSeqKd: return LossKind::kSeqKd;
        case Method::kL2kdSeqSoft: return LossKind::kSeqKdSoft;
    }
    return LossKind::kNll;
}

struct StreamConfig {
    double gamma = 0.2;
    int epochs_per_task = 9;
    int batch_size = 8;
    uint64_t seed = 0;
    double temperature = 2.0;
    int top_k = 20;
    double lm_weight = 1.0;
    bool reset_optimizer_per_task = true;
    double teacher_gate_em = 95.0;
    int pseudo_retry_factor = 5;
    std::string pseudo_apportion = "uniform";  // or "by-size"
    ModelConfig model;
    AdamConfig optim;

    void validate(size_t n_tasks) const {
        detail::require(gamma >= 0.0, "config: gamma must be nonnegative");
        detail::require(epochs_per_task >= 1, "config: epochs_per_task must be at least 1");
        detail::require(batch_size >= 1, "config: batch_size must be at least 1");
        detail::require(temperature > 0.0, "config: temperature must be positive");
        detail::require(top_k >= 1, "config: top_k must be at least 1");
        detail::require(pseudo_retry_factor >= 1, "config: pseudo_retry_factor must be at least 1");
        detail::require(pseudo_apportion == "uniform" || pseudo_apportion == "by-size",
                        "config: pseudo_apportion must be \"uniform\" or \"by-size\"");
        detail::require(n_tasks >= 1, "config: at least one task required");
    }
};

// ---------------------------------------------------------------------------
// report types
// ---------------------------------------------------------------------------

struct MetricRecord {
    int epoch = 0;  // global, 1-based
    std::string training_task;
    std::string eval_task;
    std::string metric_name;
    double value = 0.0;
};

struct BatchRecord {
    int step = 0;  // global optimizer step, 0-based
    int task_index = 0;
    std::string training_task;
    std::string batch_kind;  // "new" | "pseudo" | "teacher"
    std::string loss_kind;
    int sample_count = 0;
    std::vector<std::string> origin_tasks;
};

struct PseudoTaskStat {
    std::string task;
    int requested = 0;
    int accepted = 0;
    int attempts = 0;
    std::map<std::string, int> rejects;
};

struct PseudoRound {
    int task_index = 0;  // the incoming task when sampling happened
    int requested_total = 0;
    std::vector<PseudoTaskStat> per_task;
};

struct TeacherStat {
    std::string task;
    std::vector<double> epoch_test_em;
    bool gate_passed = false;
    int truncated_decodes = 0;
};

struct RunReport {
    std::string method;
    std::vector<std::string> order;
    uint64_t seed = 0;
    std::vector<MetricRecord> evals;
    std::vector<BatchRecord> batches;
    std::vector<PseudoRound> pseudo;
    std::vector<TeacherStat> teachers;
    std::map<std::string, double> final_scores;
    double final_average = 0.0;
    std::vector<std::string> notes;
};

struct PseudoDataset {
    std::vector<Sample> samples;
    PseudoRound stats;
};

/// Type-erased teacher; satisfies TeacherLM. Lets the drivers treat trained
/// models and test oracles uniformly.
struct TeacherOracle {
    std::function<std::vector<std::vector<double>>(std::span<const int>, double)> soft_fn;
    std::function<std::vector<double>(std::span<const int>)> logits_fn;
    int vocab = 0;

    std::vector<std::vector<double>> soft_targets(std::span<const int> seq, double tau) const {
        return soft_fn(seq, tau);
    }
    std::vector<double> next_logits(std::span<const int> seq) const { return logits_fn(seq); }
    int vocab_size() const { return vocab; }

    static TeacherOracle wrap(const LanguageModel& m) {
        TeacherOracle t;
        t.vocab = m.config.vocab_size;
        t.soft_fn = [&m](std::span<const int> seq, double tau) {
            return TeacherHandle{&m}.soft_targets(seq, tau);
        };
        t.logits_fn = [&m](std::span<const int> seq) { return m.next_logits(seq); };
        return t;
    }
};

/// Optional driver seams: checkpointing, teacher retention for later
/// analysis, a teacher override for tests, and a state sink for aborts.
struct StreamHooks {
    std::string checkpoint_dir;  // empty = no checkpoints
    bool retain_teachers = false;
    std::vector<std::pair<std::string, LanguageModel>>* retained_teachers = nullptr;
    std::function<std::optional<TeacherOracle>(const TaskDataset&, int)> teacher_override;
    std::function<void(const LanguageModel&, const RunReport&, const std::string&)> on_abort;
};

/// Blocking failure of the teacher quality gate.
struct TeacherGateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// internals
// ---------------------------------------------------------------------------

namespace detail {

inline int batches_per_epoch(int n_samples, int batch_size) {
    return (n_samples + batch_size - 1) / batch_size;
}

/// Mean of per-sample scalar loss nodes.
inline int mean_loss(Tape& tape, const std::vector<int>& ids) {
    require(!ids.empty(), "mean_loss: empty batch");
    int total = ids[0];
    for (size_t i = 1; i < ids.size(); ++i) total = add(tape, total, ids[i]);
    return mul(tape, total, tape.constant(Tensor::scalar(1.0 / static_cast<double>(ids.size()))));
}

struct StepContext {
    LanguageModel* student = nullptr;
    AdamState* adam = nullptr;
    double max_grad_norm = 1.0;
};

/// One optimizer step over a batch of already-prepared samples.
inline void optimize_batch(StepContext& ctx, const std::vector<const PreparedSample*>& batch,
                           double tau, double lm_weight) {
    Tape tape;
    TrainableStudent student(tape, *ctx.student);
    std::vector<int> losses;
    losses.reserve(batch.size());
    for (const PreparedSample* p : batch)
        losses.push_back(new_task_loss(student, *p, tau, lm_weight).id);
    const int loss = mean_loss(tape, losses);
    ctx.student->zero_grads();
    tape.backward(loss);
    auto params = ctx.student->params();
    clip_global_norm(params, ctx.max_grad_norm);
    adam_step(*ctx.adam, params);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// spec operations
// ---------------------------------------------------------------------------

/// Trains a fresh model on one task with the NLL (QA+LM) objective and
/// freezes it. Blocks the stream when the quality gate is never reached
/// within the configured epochs.
inline LanguageModel train_teacher(const TaskDataset& task, const Vocabulary& vocab,
                                   const StreamConfig& cfg, uint64_t init_seed,
                                   TeacherStat* stat_out = nullptr,
                                   std::vector<BatchRecord>* audit = nullptr,
                                   int* global_step = nullptr, int task_index = 0) {
    detail::require(!task.train.empty(), "train_teacher: empty task");
    LanguageModel teacher = LanguageModel::init(cfg.model, init_seed);
    Rng rng(derive_seed(init_seed, "teacher-order"));

    const int n = static_cast<int>(task.train.size());
    const int batches = detail::batches_per_epoch(n, cfg.batch_size);
    AdamConfig oc = cfg.optim;
    oc.total_steps = static_cast<long>(cfg.epochs_per_task) * batches;
    AdamState adam(oc, teacher.params());
    detail::StepContext ctx{&teacher, &adam, oc.max_grad_norm};

    std::vector<PreparedSample> prepared(task.train.size());
    for (size_t i = 0; i < task.train.size(); ++i) {
        prepared[i].kind = LossKind::kNll;
        prepared[i].gold = &task.train[i];
    }

    TeacherStat stat;
    stat.task = task.spec.task_id;
    std::vector<int> order(task.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    int local_step = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
        rng.shuffle(order);
        for (int b = 0; b < batches; ++b) {
            std::vector<const PreparedSample*> batch;
            for (int i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
                batch.push_back(&prepared[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            detail::optimize_batch(ctx, batch, 1.0, cfg.lm_weight);
            if (audit) {
                BatchRecord rec;
                rec.step = global_step ? (*global_step)++ : local_step;
                rec.task_index = task_index;
                rec.training_task = task.spec.task_id;
                rec.batch_kind = "teacher";
                rec.loss_kind = loss_kind_name(LossKind::kNll);
                rec.sample_count = static_cast<int>(batch.size());
                rec.origin_tasks = {task.spec.task_id};
                audit->push_back(std::move(rec));
            }
            ++local_step;
        }
        // gate metric is always exact match, whatever the task reports
        double em = 0.0;
        for (const Sample& s : task.test) {
            const Decoded d = decode_answer(teacher, s, vocab, cfg.model.context_len - s.a1);
            em += 100.0 * exact_match(d.tokens, s.answer, vocab.eos);
        }
        stat.epoch_test_em.push_back(em / static_cast<double>(task.test.size()));
    }
    const double best = *std::max_element(stat.epoch_test_em.begin(), stat.epoch_test_em.end());
    stat.gate_passed = best >= cfg.teacher_gate_em;
    if (stat_out) *stat_out = stat;
    if (!stat.gate_passed)
        throw TeacherGateError(detail::str(
            "teacher for task \"", task.spec.task_id, "\" reached only ", best,
            "% exact match within ", cfg.epochs_per_task, " epochs (gate ", cfg.teacher_gate_em,
            "%); last epoch ", stat.epoch_test_em.back(), "%"));
    return teacher;
}

/// Draws `count` accepted pseudo-samples from the student via top-k sampling
/// on per-task begin tokens, apportioned across the previous tasks. Shortfall
/// after the retry cap shrinks the pool, it is not an error.
template <NextTokenModel M>
PseudoDataset sample_pseudo_data(const M& student,
                                 const std::vector<const TaskDataset*>& prev_tasks, int count,
                                 const StreamConfig& cfg, const Vocabulary& vocab, Rng& rng) {
    PseudoDataset out;
    if (prev_tasks.empty() || count <= 0) return out;

    const int n_prev = static_cast<int>(prev_tasks.size());
    std::vector<int> quota(static_cast<size_t>(n_prev), 0);
    if (cfg.pseudo_apportion == "by-size") {
        long total = 0;
        for (const auto* t : prev_tasks) total += t->spec.n_train;
        long assigned = 0;
        for (int i = 0; i < n_prev; ++i) {
            quota[static_cast<size_t>(i)] =
                static_cast<int>(static_cast<long>(count) * prev_tasks[static_cast<size_t>(i)]->spec.n_train / total);
            assigned += quota[static_cast<size_t>(i)];
        }
        for (int i = 0; assigned < count; ++i, ++assigned) quota[static_cast<size_t>(i % n_prev)]++;
    } else {
        for (int i = 0; i < n_prev; ++i)
            quota[static_cast<size_t>(i)] = count / n_prev + (i < count % n_prev ? 1 : 0);
    }

    for (int i = 0; i < n_prev; ++i) {
        const TaskDataset& task = *prev_tasks[static_cast<size_t>(i)];
        PseudoTaskStat stat;
        stat.task = task.spec.task_id;
        stat.requested = quota[static_cast<size_t>(i)];
        const auto prefix = make_lm_prefix(vocab, task.spec.task_id);
        const int max_attempts = cfg.pseudo_retry_factor * stat.requested;
        const int max_gen = cfg.model.context_len - 2;  // room for BOS and EOS
        const int k = std::min(cfg.top_k, student.vocab_size());
        while (stat.accepted < stat.requested && stat.attempts < max_attempts) {
            ++stat.attempts;
            const Decoded d = top_k_sample(student, prefix, k, rng, vocab.eos, max_gen, vocab.pad);
            if (d.truncated) {
                stat.rejects["no end-of-sequence within budget"] += 1;
                continue;
            }
            std::vector<int> seq = prefix;
            seq.insert(seq.end(), d.tokens.begin(), d.tokens.end());
            seq.push_back(vocab.eos);
            auto parsed = parse_pseudo(vocab, seq);
            if (!parsed.ok()) {
                stat.rejects[parsed.reject_reason] += 1;
                continue;
            }
            out.samples.push_back(std::move(*parsed.sample));
            ++stat.accepted;
        }
        out.stats.per_task.push_back(std::move(stat));
    }
    out.stats.requested_total = count;
    return out;
}

// ---------------------------------------------------------------------------
// stream driver
// ---------------------------------------------------------------------------

namespace detail {

struct ActiveTeacher {
    std::unique_ptr<LanguageModel> model;  // owned when trained here
    TeacherOracle oracle;
};

inline RunReport run_sequential_stream(const std::vector<TaskDataset>& tasks,
                                       const Vocabulary& vocab, StreamConfig cfg, Method method,
                                       const StreamHooks& hooks) {
    const LossKind kind = loss_kind_of(method);
    cfg.validate(tasks.size());
    RunReport report;
    report.method = method_name(method);
    report.seed = cfg.seed;
    for (const auto& t : tasks) report.order.push_back(t.spec.task_id);

    if (method == Method::kFinetune && cfg.gamma != 0.0) {
        report.notes.push_back("gamma forced to 0 for finetune");
        cfg.gamma = 0.0;
    }

    LanguageModel student = LanguageModel::init(cfg.model, derive_seed(cfg.seed, "student"));
    Rng rng(derive_seed(cfg.seed, "stream"));
    int global_step = 0;
    int global_epoch = 0;

    // Schedule sizes are known up front; needed when the optimizer persists
    // across task boundaries.
    auto new_batches_of = [&](size_t m) {
        return batches_per_epoch(static_cast<int>(tasks[m].train.size()), cfg.batch_size);
    };
    auto pseudo_batches_of = [&](size_t m) {
        return m == 0 || cfg.gamma <= 0.0
                   ? 0
                   : static_cast<int>(cfg.gamma * static_cast<double>(new_batches_of(m)));
    };
    std::optional<AdamState> adam;
    if (!cfg.reset_optimizer_per_task) {
        long total = 0;
        for (size_t m = 0; m < tasks.size(); ++m)
            total += static_cast<long>(cfg.epochs_per_task) * (new_batches_of(m) + pseudo_batches_of(m));
        AdamConfig oc = cfg.optim;
        oc.total_steps = total;
        adam.emplace(oc, student.params());
    }

    std::vector<Sample> pseudo_pool;
    try {
    for (size_t m = 0; m < tasks.size(); ++m) {
        const TaskDataset& task = tasks[m];

        // Algorithm step 1: a disposable teacher for the incoming task.
        std::optional<ActiveTeacher> teacher;
        if (needs_teacher(kind)) {
            teacher.emplace();
            std::optional<TeacherOracle> injected;
            if (hooks.teacher_override) injected = hooks.teacher_override(task, static_cast<int>(m));
            if (injected) {
                teacher->oracle = std::move(*injected);
            } else {
                TeacherStat stat;
                teacher->model = std::make_unique<LanguageModel>(
                    train_teacher(task, vocab, cfg, derive_seed(cfg.seed, "teacher", m), &stat,
                                  &report.batches, &global_step, static_cast<int>(m)));
                teacher->oracle = TeacherOracle::wrap(*teacher->model);
                report.teachers.push_back(std::move(stat));
            }
        }

        // Algorithm step 2: sample gamma * |D_m| pseudo-data from the student.
        pseudo_pool.clear();
        if (m > 0 && cfg.gamma > 0.0) {
            std::vector<const TaskDataset*> prev;
            for (size_t p = 0; p < m; ++p) prev.push_back(&tasks[p]);
            const int want = static_cast<int>(cfg.gamma * static_cast<double>(task.train.size()));
            Rng prng(derive_seed(cfg.seed, "pseudo", m));
            PseudoDataset ps = sample_pseudo_data(student, prev, want, cfg, vocab, prng);
            ps.stats.task_index = static_cast<int>(m);
            pseudo_pool = std::move(ps.samples);
            report.pseudo.push_back(std::move(ps.stats));
        }

        // Teacher work is fixed for the task; cache it per sample.
        std::vector<PreparedSample> prepared(task.train.size());
        int truncated = 0;
        for (size_t i = 0; i < task.train.size(); ++i) {
            if (kind == LossKind::kNll) {
                prepared[i].kind = LossKind::kNll;
                prepared[i].gold = &task.train[i];
            } else {
                prepared[i] = prepare_sample(teacher->oracle, task.train[i], kind, cfg.temperature,
                                             vocab, cfg.model.context_len - task.train[i].a1);
                if (prepared[i].truncated) ++truncated;
            }
        }
        if (truncated > 0) {
            report.notes.push_back(detail::str(truncated, " truncated teacher decodes excluded on ",
                                               task.spec.task_id));
            if (!report.teachers.empty() && report.teachers.back().task == task.spec.task_id)
                report.teachers.back().truncated_decodes = truncated;
        }
        std::vector<int> trainable;  // indices into prepared, truncation removed
        for (size_t i = 0; i < prepared.size(); ++i)
            if (!prepared[i].truncated) trainable.push_back(static_cast<int>(i));
        detail::require(!trainable.empty(),
                        "stream: every teacher decode truncated; nothing to train on");

        const int new_batches = batches_per_epoch(static_cast<int>(trainable.size()), cfg.batch_size);
        const int pseudo_batches = pseudo_pool.empty()
                                       ? 0
                                       : static_cast<int>(cfg.gamma * static_cast<double>(new_batches));
        if (cfg.reset_optimizer_per_task) {
            AdamConfig oc = cfg.optim;
            oc.total_steps = static_cast<long>(cfg.epochs_per_task) * (new_batches + pseudo_batches);
            adam.emplace(oc, student.params());
        }
        StepContext ctx{&student, &*adam, cfg.optim.max_grad_norm};

        std::vector<int> pseudo_order(pseudo_pool.size());
        for (size_t i = 0; i < pseudo_order.size(); ++i) pseudo_order[i] = static_cast<int>(i);
        size_t pseudo_cursor = pseudo_order.size();  // forces shuffle on first use

        for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
            rng.shuffle(trainable);
            // Slot plan: new-task batches with pseudo batches interleaved
            // uniformly, never clumped at the epoch end.
            std::vector<int> slots(static_cast<size_t>(new_batches), 0);
            slots.resize(static_cast<size_t>(new_batches + pseudo_batches), 1);
            rng.shuffle(slots);

            int next_new = 0;
            for (int slot : slots) {
                std::vector<const PreparedSample*> batch;
                std::vector<Sample> pseudo_batch;
                BatchRecord rec;
                rec.step = global_step;
                rec.task_index = static_cast<int>(m);
                rec.training_task = task.spec.task_id;
                if (slot == 0) {
                    const int begin = next_new * cfg.batch_size;
                    const int end = std::min<int>(static_cast<int>(trainable.size()),
                                                  begin + cfg.batch_size);
                    for (int i = begin; i < end; ++i)
                        batch.push_back(&prepared[static_cast<size_t>(trainable[static_cast<size_t>(i)])]);
                    ++next_new;
                    rec.batch_kind = "new";
                    rec.loss_kind = loss_kind_name(kind);
                    rec.origin_tasks = {task.spec.task_id};
                    rec.sample_count = static_cast<int>(batch.size());
                    optimize_batch(ctx, batch, cfg.temperature, cfg.lm_weight);
                } else {
                    // Pseudo replay: NLL only, by Algorithm 1.
                    std::vector<PreparedSample> ps(static_cast<size_t>(cfg.batch_size));
                    std::vector<const PreparedSample*> refs;
                    std::vector<std::string> origins;
                    for (int i = 0; i < cfg.batch_size; ++i) {
                        if (pseudo_cursor >= pseudo_order.size()) {
                            rng.shuffle(pseudo_order);
                            pseudo_cursor = 0;
                        }
                        const Sample& s =
                            pseudo_pool[static_cast<size_t>(pseudo_order[pseudo_cursor++])];
                        ps[static_cast<size_t>(i)].kind = LossKind::kNll;
                        ps[static_cast<size_t>(i)].gold = &s;
                        refs.push_back(&ps[static_cast<size_t>(i)]);
                        if (std::find(origins.begin(), origins.end(), s.task_id) == origins.end())
                            origins.push_back(s.task_id);
                    }
                    rec.batch_kind = "pseudo";
                    rec.loss_kind = loss_kind_name(LossKind::kNll);
                    rec.origin_tasks = std::move(origins);
                    rec.sample_count = cfg.batch_size;
                    optimize_batch(ctx, refs, 1.0, cfg.lm_weight);
                }
                report.batches.push_back(std::move(rec));
                ++global_step;
            }

            ++global_epoch;
            for (const TaskDataset& eval_task : tasks) {
                MetricRecord r;
                r.epoch = global_epoch;
                r.training_task = task.spec.task_id;
                r.eval_task = eval_task.spec.task_id;
                r.metric_name = metric_name(eval_task.spec.metric);
                r.value = evaluate_task(student, eval_task, vocab);
                report.evals.push_back(std::move(r));
            }
        }

        if (hooks.retain_teachers && teacher && teacher->model && hooks.retained_teachers)
            hooks.retained_teachers->emplace_back(task.spec.task_id, *teacher->model);
        if (!hooks.checkpoint_dir.empty())
            save_checkpoint(hooks.checkpoint_dir + "/student-after-" + task.spec.task_id + ".ckpt",
                            student, vocab);
        // Teacher goes out of scope here: discarded before the next task.
    }
    } catch (const TeacherGateError&) {
        throw;
    } catch (const std::exception& e) {
        if (hooks.on_abort) hooks.on_abort(student, report, e.what());
        throw std::runtime_error(detail::str("stream aborted at step ", global_step, " (epoch ",
                                             global_epoch + 1, "): ", e.what()));
    }

    for (const auto& t : tasks) {
        double last = 0.0;
        for (const auto& r : report.evals)
            if (r.eval_task == t.spec.task_id && r.epoch == global_epoch) last = r.value;
        report.final_scores[t.spec.task_id] = last;
    }
    double sum = 0.0;
    for (const auto& [k2, v] : report.final_scores) sum += v;
    report.final_average = sum / static_cast<double>(report.final_scores.size());
    return report;
}

inline RunReport run_multitask_impl(const std::vector<TaskDataset>& tasks, const Vocabulary& vocab,
                                    StreamConfig cfg, bool with_seq_kd, const StreamHooks& hooks) {
    cfg.validate(tasks.size());
    RunReport report;
    report.method = method_name(with_seq_kd ? Method::kMultitaskSeqKd : Method::kMultitask);
    report.seed = cfg.seed;
    for (const auto& t : tasks) report.order.push_back(t.spec.task_id);

    LanguageModel student = LanguageModel::init(cfg.model, derive_seed(cfg.seed, "student"));
    Rng rng(derive_seed(cfg.seed, "stream"));
    int global_step = 0;

    // Single-task teachers come first when distilling.
    std::vector<std::unique_ptr<LanguageModel>> teachers;
    if (with_seq_kd) {
        for (size_t m = 0; m < tasks.size(); ++m) {
            TeacherStat stat;
            teachers.push_back(std::make_unique<LanguageModel>(
                train_teacher(tasks[m], vocab, cfg, derive_seed(cfg.seed, "teacher", m), &stat,
                              &report.batches, &global_step, static_cast<int>(m))));
            report.teachers.push_back(std::move(stat));
        }
    }

    std::vector<PreparedSample> prepared;
    std::vector<std::string> origin;
    for (size_t m = 0; m < tasks.size(); ++m) {
        const TeacherOracle oracle =
            with_seq_kd ? TeacherOracle::wrap(*teachers[m]) : TeacherOracle{};
        for (const Sample& s : tasks[m].train) {
            PreparedSample p;
            if (with_seq_kd)
                p = prepare_sample(oracle, s, LossKind::kSeqKd, cfg.temperature, vocab,
                                   cfg.model.context_len - s.a1);
            else {
                p.kind = LossKind::kNll;
                p.gold = &s;
            }
            if (p.truncated) continue;
            prepared.push_back(std::move(p));
            origin.push_back(tasks[m].spec.task_id);
        }
    }
    detail::require(!prepared.empty(), "multitask: no trainable samples");

    const int n = static_cast<int>(prepared.size());
    const int batches = batches_per_epoch(n, cfg.batch_size);
    const int epochs = cfg.epochs_per_task * static_cast<int>(tasks.size());
    AdamConfig oc = cfg.optim;
    oc.total_steps = static_cast<long>(epochs) * batches;
    AdamState adam(oc, student.params());
    StepContext ctx{&student, &adam, oc.max_grad_norm};

    std::vector<int> order(prepared.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        rng.shuffle(order);
        for (int b = 0; b < batches; ++b) {
            std::vector<const PreparedSample*> batch;
            std::vector<std::string> origins;
            for (int i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i) {
                const int idx = order[static_cast<size_t>(i)];
                batch.push_back(&prepared[static_cast<size_t>(idx)]);
                if (std::find(origins.begin(), origins.end(), origin[static_cast<size_t>(idx)]) ==
                    origins.end())
                    origins.push_back(origin[static_cast<size_t>(idx)]);
            }
            optimize_batch(ctx, batch, cfg.temperature, cfg.lm_weight);
            BatchRecord rec;
            rec.step = global_step++;
            rec.task_index = 0;
            rec.training_task = "multitask";
            rec.batch_kind = "new";
            rec.loss_kind = loss_kind_name(with_seq_kd ? LossKind::kSeqKd : LossKind::kNll);
            rec.sample_count = static_cast<int>(batch.size());
            rec.origin_tasks = std::move(origins);
            report.batches.push_back(std::move(rec));
        }
        for (const TaskDataset& eval_task : tasks) {
            MetricRecord r;
            r.epoch = epoch;
            r.training_task = "multitask";
            r.eval_task = eval_task.spec.task_id;
            r.metric_name = metric_name(eval_task.spec.metric);
            r.value = evaluate_task(student, eval_task, vocab);
            report.evals.push_back(std::move(r));
        }
    }

    if (!hooks.checkpoint_dir.empty())
        save_checkpoint(hooks.checkpoint_dir + "/student-final.ckpt", student, vocab);
    for (const auto& t : tasks) {
        double last = 0.0;
        for (const auto& r : report.evals)
            if (r.eval_task == t.spec.task_id && r.epoch == epochs) last = r.value;
        report.final_scores[t.spec.task_id] = last;
    }
    double sum = 0.0;
    for (const auto& [k2, v] : report.final_scores) sum += v;
    report.final_average = sum / static_cast<double>(report.final_scores.size());
    return report;
}

}  // namespace detail

/// Algorithm 1: KD on the incoming task, NLL replay on self-generated
/// pseudo-data, one disposable teacher at a time.
inline RunReport run_l2kd_stream(const std::vector<TaskDataset>& tasks, const Vocabulary& vocab,
                                 const StreamConfig& cfg, Method method,
                                 const StreamHooks& hooks = {}) {
    detail::require(method == Method::kL2kdWord || method == Method::kL2kdSeq ||
                        method == Method::kL2kdSeqSoft,
                    "run_l2kd_stream: method must be a distillation variant");
    return detail::run_sequential_stream(tasks, vocab, cfg, method, hooks);
}

/// Pseudo-replay baseline: same stream, NLL everywhere, no teacher.
inline RunReport run_lamol_stream(const std::vector<TaskDataset>& tasks, const Vocabulary& vocab,
                                  const StreamConfig& cfg, const StreamHooks& hooks = {}) {
    return detail::run_sequential_stream(tasks, vocab, cfg, Method::kLamol, hooks);
}

/// Sequential finetuning with no replay at all (gamma forced to 0).
inline RunReport run_finetune_stream(const std::vector<TaskDataset>& tasks, const Vocabulary& vocab,
                                     const StreamConfig& cfg, const StreamHooks& hooks = {}) {
    return detail::run_sequential_stream(tasks, vocab, cfg, Method::kFinetune, hooks);
}

/// Joint-training upper bound on the shuffled union of all tasks, trained
/// epochs_per_task * |tasks| epochs; optionally Seq-KD from per-task teachers.
inline RunReport run_multitask(const std::vector<TaskDataset>& tasks, const Vocabulary& vocab,
                               const StreamConfig& cfg, bool with_seq_kd,
                               const StreamHooks& hooks = {}) {
    return detail::run_multitask_impl(tasks, vocab, cfg, with_seq_kd, hooks);
}

/// Single entry point used by the CLI.
inline RunReport run_method(const std::vector<TaskDataset>& tasks, const Vocabulary& vocab,
                            const StreamConfig& cfg, Method method, const StreamHooks& hooks = {}) {
    switch (method) {
        case Method::kMultitask: return run_multitask(tasks, vocab, cfg, false, hooks);
        case Method::kMultitaskSeqKd: return run_multitask(tasks, vocab, cfg, true, hooks);
        case Method::kFinetune: return run_finetune_stream(tasks, vocab, cfg, hooks);
        case Method::kLamol: return run_lamol_stream(tasks, vocab, cfg, hooks);
        default: return run_l2kd_stream(tasks, vocab, cfg, method, hooks);
    }
}

}  // namespace lll
