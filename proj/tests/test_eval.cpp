#include <catch2/catch_amalgamated.hpp>

#include "lll/analysis.hpp"
#include "lll/metrics.hpp"
#include "lll/permute.hpp"
#include "lll/report.hpp"

using namespace lll;

namespace {

const int kEos = 1;

std::vector<TaskSpec> stream_specs() {
    TaskSpec rev;
    rev.task_id = "reverse";
    rev.kind = TaskKind::kReverse;
    rev.alphabet = {"a", "b", "c", "d"};
    rev.len_min = 2;
    rev.len_max = 3;
    rev.n_train = 20;
    rev.n_test = 12;
    rev.seed = 3;
    TaskSpec cp = rev;
    cp.task_id = "copy";
    cp.kind = TaskKind::kCopy;
    cp.seed = 4;
    return {rev, cp};
}

// Answers every question with a fixed scripted continuation.
struct FixedAnswerModel {
    std::vector<int> script;
    int eos;
    int vocab;
    std::vector<double> next_logits(std::span<const int> seq) const {
        // Steps are counted from the ANS token, which this model locates by
        // assuming the prefix it is handed ends at a1 (decode_answer does).
        std::vector<double> l(static_cast<size_t>(vocab), 0.0);
        const size_t done = seq.size() - prefix_len;
        l[static_cast<size_t>(done < script.size() ? script[done] : eos)] = 20.0;
        return l;
    }
    int vocab_size() const { return vocab; }
    size_t prefix_len = 0;
};

RunReport synthetic_report(int n_tasks, int epochs_per_task) {
    RunReport r;
    r.method = "finetune";
    for (int t = 0; t < n_tasks; ++t) r.order.push_back("task" + std::to_string(t));
    for (int e = 1; e <= n_tasks * epochs_per_task; ++e) {
        const std::string trainer = r.order[static_cast<size_t>((e - 1) / epochs_per_task)];
        for (const auto& task : r.order) {
            MetricRecord m;
            m.epoch = e;
            m.training_task = trainer;
            m.eval_task = task;
            m.metric_name = "exact_match";
            m.value = e * 1.0 + (task == trainer ? 10.0 : 0.0);
            r.evals.push_back(m);
        }
    }
    return r;
}

}  // namespace

TEST_CASE("exact_match", "[eval]") {
    const std::vector<int> a{4, 5, 6};
    const std::vector<int> b{4, 5};
    CHECK(exact_match(a, a, kEos) == 1);
    CHECK(exact_match(b, a, kEos) == 0);  // prefix only
    CHECK(exact_match(std::vector<int>{}, std::vector<int>{}, kEos) == 1);
    // EOS stripping is idempotent and symmetric
    const std::vector<int> a_eos{4, 5, 6, kEos};
    CHECK(exact_match(a_eos, a, kEos) == 1);
    CHECK(exact_match(a, a_eos, kEos) == 1);
}

TEST_CASE("token_f1", "[eval]") {
    const std::vector<int> x{7, 8};
    CHECK(token_f1(x, x, kEos) == 100.0);
    CHECK(token_f1(std::vector<int>{7}, std::vector<int>{9}, kEos) == 0.0);
    // pred {a,b} vs gold {a,c}: P = R = 0.5
    CHECK(token_f1(std::vector<int>{4, 5}, std::vector<int>{4, 6}, kEos) == Catch::Approx(50.0));
    CHECK(token_f1(std::vector<int>{}, std::vector<int>{}, kEos) == 100.0);
    CHECK(token_f1(std::vector<int>{}, x, kEos) == 0.0);
    CHECK(token_f1(x, std::vector<int>{}, kEos) == 0.0);
}

TEST_CASE("token_f1 stays within bounds on random multisets", "[eval][property]") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> p(static_cast<size_t>(rng.uniform_int(6)));
        std::vector<int> g(static_cast<size_t>(rng.uniform_int(6)));
        for (auto& t : p) t = 3 + rng.uniform_int(5);
        for (auto& t : g) t = 3 + rng.uniform_int(5);
        const double f1 = token_f1(p, g, kEos);
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 100.0);
        CHECK(token_f1(p, p, kEos) == 100.0);
    }
}

TEST_CASE("evaluate_task", "[eval]") {
    const auto specs = stream_specs();
    const auto vocab = Vocabulary::build(specs);
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.context_len = 16;
    cfg.vocab_size = vocab.size();
    const auto ds = generate_task(vocab, specs[0], cfg.context_len);

    SECTION("an untrained model scores near zero on a structured task") {
        const auto m = LanguageModel::init(cfg, 77);
        CHECK(evaluate_task(m, ds, vocab) <= 10.0);
    }
    SECTION("aggregation is order invariant") {
        const auto m = LanguageModel::init(cfg, 78);
        TaskDataset shuffled = ds;
        std::reverse(shuffled.test.begin(), shuffled.test.end());
        CHECK(evaluate_task(m, ds, vocab) == evaluate_task(m, shuffled, vocab));
    }
    SECTION("vocabulary mismatch is an error") {
        ModelConfig other = cfg;
        other.vocab_size = vocab.size() + 3;
        const auto m = LanguageModel::init(other, 79);
        CHECK_THROWS_WITH(evaluate_task(m, ds, vocab),
                          Catch::Matchers::ContainsSubstring("vocabulary"));
    }
}

TEST_CASE("learning_curves", "[eval]") {
    SECTION("three tasks, nine epochs each") {
        const RunReport r = synthetic_report(3, 9);
        const CurveTable table = learning_curves(r);
        for (const auto& task : r.order) {
            const auto& pts = table.points.at(task);
            CHECK(pts.size() == 27);
            std::vector<int> boundaries;
            for (const auto& p : pts)
                if (p.task_boundary) boundaries.push_back(p.epoch);
            CHECK(boundaries == std::vector<int>{9, 18});
        }
    }
    SECTION("incomplete reports are rejected") {
        RunReport r = synthetic_report(2, 3);
        r.evals.pop_back();
        CHECK_THROWS_WITH(learning_curves(r), Catch::Matchers::ContainsSubstring("no record"));
        RunReport empty;
        CHECK_THROWS_AS(learning_curves(empty), std::invalid_argument);
    }
}

TEST_CASE("permutation statistics recompute from stored per-order scores", "[eval]") {
    PermutationReport report;
    report.n_orders = 2;
    OrderResult r1{"lamol", {"a", "b"}, {{"a", 60.0}, {"b", 80.0}}, 70.0};
    OrderResult r2{"lamol", {"b", "a"}, {{"a", 40.0}, {"b", 100.0}}, 70.0};
    OrderResult r3{"finetune", {"a", "b"}, {{"a", 10.0}, {"b", 90.0}}, 50.0};
    OrderResult r4{"finetune", {"b", "a"}, {{"a", 90.0}, {"b", 10.0}}, 50.0};
    report.runs = {r1, r2, r3, r4};
    recompute_stats(report);

    const auto& lamol = report.stats.at("lamol");
    CHECK(lamol.mean_per_task.at("a") == Catch::Approx(50.0));
    // population std of {60, 40} = 10
    CHECK(lamol.std_per_task.at("a") == Catch::Approx(10.0));
    CHECK(lamol.std_avg == Catch::Approx(0.0).margin(1e-12));  // identical averages
    const auto& ft = report.stats.at("finetune");
    CHECK(ft.std_per_task.at("a") == Catch::Approx(40.0));
    CHECK(ft.mean_avg == Catch::Approx(50.0));
}

TEST_CASE("teacher_split_analysis partitions by teacher correctness", "[eval]") {
    const auto specs = stream_specs();
    const auto vocab = Vocabulary::build(specs);
    auto ds = generate_task(vocab, specs[1], 24);  // copy task

    // Teacher that answers the first token of the context and stops: right
    // exactly on the length-1 copies... none exist here (len >= 2), so craft
    // a split by hand: teacher echoes the full context only when it starts
    // with token "a".
    struct EchoIfA {
        const Vocabulary* vocab;
        int a_id;
        std::vector<double> next_logits(std::span<const int> seq) const {
            // Prefix layout: BOS ctx... "copy" ANS answer...
            std::vector<int> ctx(seq.begin() + 1, seq.begin() + static_cast<long>(prefix) - 2);
            const size_t done = seq.size() - prefix;
            std::vector<double> l(static_cast<size_t>(vocab->size()), 0.0);
            int want = vocab->eos;
            if (ctx[0] == a_id && done < ctx.size()) want = ctx[done];
            l[static_cast<size_t>(want)] = 20.0;
            return l;
        }
        int vocab_size() const { return vocab->size(); }
        size_t prefix;
    };
    // All test samples share a1 only if same context length; restrict to a
    // fixed-length task to keep the stub simple.
    TaskSpec fixed = specs[1];
    fixed.len_min = fixed.len_max = 2;
    fixed.n_test = 24;
    ds = generate_task(vocab, fixed, 24);
    const size_t a1 = static_cast<size_t>(ds.test.front().a1);
    EchoIfA teacher{&vocab, vocab.id("a"), a1};

    SECTION("teacher against itself is exactly (100, 0)") {
        const auto split = teacher_split_analysis(teacher, teacher, ds, vocab, 24);
        REQUIRE(split.n_a > 0);
        REQUIRE(split.n_b > 0);
        CHECK(split.acc_a.value() == 100.0);
        CHECK(split.acc_b.value() == 0.0);
        CHECK(split.n == split.n_a + split.n_b);
    }
    SECTION("weighted-mean identity holds") {
        EchoIfA student{&vocab, vocab.id("b"), a1};  // different partition
        const auto split = teacher_split_analysis(student, teacher, ds, vocab, 24);
        const double lhs = split.acc;
        double rhs = 0.0;
        if (split.acc_a) rhs += static_cast<double>(split.n_a) / split.n * *split.acc_a;
        if (split.acc_b) rhs += static_cast<double>(split.n_b) / split.n * *split.acc_b;
        CHECK(lhs == Catch::Approx(rhs).margin(1e-9));
    }
    SECTION("a student identical to the teacher inherits its partition accuracies") {
        const auto self = teacher_split_analysis(teacher, teacher, ds, vocab, 24);
        EchoIfA clone = teacher;
        const auto twin = teacher_split_analysis(clone, teacher, ds, vocab, 24);
        CHECK(twin.acc == self.acc);
        CHECK(twin.acc_a == self.acc_a);
        CHECK(twin.acc_b == self.acc_b);
    }
}

TEST_CASE("report JSON round trip and CSV shape", "[eval]") {
    RunReport r = synthetic_report(2, 3);
    r.seed = 42;
    r.final_scores = {{"task0", 5.0}, {"task1", 16.0}};
    r.final_average = 10.5;
    r.notes = {"gamma forced to 0 for finetune"};
    BatchRecord b;
    b.step = 0;
    b.training_task = "task0";
    b.batch_kind = "new";
    b.loss_kind = "nll";
    b.sample_count = 8;
    b.origin_tasks = {"task0"};
    r.batches.push_back(b);

    const auto j = report_to_json(r);
    const RunReport back = report_from_json(j);
    CHECK(report_to_json(back) == j);

    std::ostringstream csv;
    write_eval_csv(csv, r);
    std::istringstream lines(csv.str());
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 1 + static_cast<int>(r.evals.size()));
    CHECK(csv.str().substr(0, 44) == "epoch,training_task,eval_task,metric,value\n1");
}

TEST_CASE("file stem encodes method, order, and seed", "[eval]") {
    CHECK(run_file_stem("lamol", {"reverse", "sort", "copy"}, 7) == "lamol_reverse-sort-copy_7");
}
