#pragma once

#include <optional>

#include "lll/metrics.hpp"

namespace lll {

/// Test questions split by teacher correctness: group A answered exactly by
/// the teacher, group B missed. Empty groups report no accuracy at all.
struct SplitReport {
    int n = 0, n_a = 0, n_b = 0;
    double acc = 0.0;
    std::optional<double> acc_a, acc_b;
};

template <NextTokenModel S, NextTokenModel T>
SplitReport teacher_split_analysis(const S& student, const T& teacher, const TaskDataset& task,
                                   const Vocabulary& vocab, int context_len) {
    SplitReport r;
    int correct = 0, correct_a = 0, correct_b = 0;
    for (const Sample& s : task.test) {
        const int budget = context_len - s.a1;
        const int teacher_em =
            exact_match(decode_answer(teacher, s, vocab, budget).tokens, s.answer, vocab.eos);
        const int student_em =
            exact_match(decode_answer(student, s, vocab, budget).tokens, s.answer, vocab.eos);
        r.n += 1;
        correct += student_em;
        if (teacher_em) {
            r.n_a += 1;
            correct_a += student_em;
        } else {
            r.n_b += 1;
            correct_b += student_em;
        }
    }
    detail::require(r.n > 0, "teacher_split_analysis: empty test set");
    r.acc = 100.0 * correct / r.n;
    if (r.n_a > 0) r.acc_a = 100.0 * correct_a / r.n_a;
    if (r.n_b > 0) r.acc_b = 100.0 * correct_b / r.n_b;
    return r;
}

inline SplitReport teacher_split_analysis(const LanguageModel& student, const LanguageModel& teacher,
                                          const TaskDataset& task, const Vocabulary& vocab) {
    detail::require(student.config.vocab_size == vocab.size() &&
                        teacher.config.vocab_size == vocab.size(),
                    "teacher_split_analysis: model and task vocabularies differ");
    return teacher_split_analysis<LanguageModel, LanguageModel>(student, teacher, task, vocab,
                                                                student.config.context_len);
}

}  // namespace lll
