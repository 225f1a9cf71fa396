#pragma once

#include <concepts>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lll/decode.hpp"
#include "lll/model.hpp"
#include "lll/tape.hpp"
#include "lll/taskdata.hpp"

namespace lll {

enum class LossKind { kNll, kWordKd, kSeqKdSoft, kSeqKd };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::kNll: return "nll";
        case LossKind::kWordKd: return "word-kd";
        case LossKind::kSeqKdSoft: return "seq-kd-soft";
        case LossKind::kSeqKd: return "seq-kd";
    }
    return "?";
}

inline bool needs_teacher(LossKind k) { return k != LossKind::kNll; }

/// A differentiable next-token log-probability matrix on some tape.
/// Row r holds log P(token r+1 | tokens 0..r), for r = 0..rows-1.
struct LogProbGraph {
    Tape* tape = nullptr;
    int logp = -1;    // [rows, vocab] log-probabilities (at the requested tau)
    int logits = -1;  // underlying unscaled logits node
    int rows = 0;
    int vocab = 0;
};

/// Student side of a distillation loss: anything that can build a
/// differentiable log-prob graph for a full encoded sequence.
template <class S>
concept StudentLM = requires(S& s, std::span<const int> seq, double tau) {
    { s.build_log_probs(seq, tau) } -> std::convertible_to<LogProbGraph>;
};

/// Teacher side: per-position next-token distributions along a given
/// sequence, plus the decoding interface. Always consulted without gradient
/// tracking; nothing here can mutate the teacher.
template <class T>
concept TeacherLM = requires(const T& t, std::span<const int> seq, double tau) {
    { t.soft_targets(seq, tau) } -> std::convertible_to<std::vector<std::vector<double>>>;
    { t.next_logits(seq) } -> std::convertible_to<std::vector<double>>;
    { t.vocab_size() } -> std::convertible_to<int>;
};

/// LanguageModel as student: binds the parameters once per tape.
struct TrainableStudent {
    Tape* tape;
    LanguageModel* model;
    ModelGraph graph;

    TrainableStudent(Tape& t, LanguageModel& m)
        : tape(&t), model(&m), graph(ModelGraph::bind_trainable(t, m)) {}

    LogProbGraph build_log_probs(std::span<const int> sequence, double tau) const {
        detail::require(sequence.size() >= 2, "loss: sequence needs at least two tokens");
        const auto input = sequence.first(sequence.size() - 1);
        const int logits = graph.logits(input);
        int scaled = logits;
        if (tau != 1.0) {
            detail::require(tau > 0.0, "loss: temperature must be positive");
            const int s = tape->constant(Tensor::scalar(1.0 / tau));
            scaled = mul(*tape, logits, broadcast(*tape, s, tape->value(logits).shape));
        }
        LogProbGraph g;
        g.tape = tape;
        g.logits = logits;
        g.logp = log_softmax(*tape, scaled);
        g.rows = static_cast<int>(input.size());
        g.vocab = model->config.vocab_size;
        return g;
    }
};

/// LanguageModel as frozen teacher ("the teacher model is always fixed").
struct TeacherHandle {
    const LanguageModel* model = nullptr;

    std::vector<std::vector<double>> soft_targets(std::span<const int> sequence, double tau) const {
        detail::require(sequence.size() >= 2, "soft_targets: sequence needs at least two tokens");
        const auto input = sequence.first(sequence.size() - 1);
        const Tensor logits = model->forward_logits(input);
        const int vocab = model->config.vocab_size;
        std::vector<std::vector<double>> out;
        out.reserve(input.size());
        for (size_t r = 0; r < input.size(); ++r) {
            const std::span<const double> row(logits.data.data() + r * static_cast<size_t>(vocab),
                                              static_cast<size_t>(vocab));
            auto lp = log_probs_with_temperature(row, tau);
            for (auto& v : lp) v = std::exp(v);
            out.push_back(std::move(lp));
        }
        return out;
    }

    std::vector<double> next_logits(std::span<const int> tokens) const {
        return model->next_logits(tokens);
    }
    int vocab_size() const { return model->config.vocab_size; }
};

struct LossNode {
    int id = -1;      // scalar loss node
    int logits_id = -1;  // the student logits feeding it (gradient probe point)
};

namespace detail {

// 0-based positions t = max(t0,1)..T-1 are prediction targets; the first
// token has an empty prefix and is never predicted. Row t-1 of the log-prob
// matrix scores position t.
inline int first_target(int t0) { return std::max(t0, 1); }

inline void check_t0(int t0, const Sample& sample) {
    require(t0 >= 0 && t0 < sample.length(),
            str("loss: t0 = ", t0, " outside [0, ", sample.length(), ") for task ", sample.task_id));
}

// Shared reduction: loss = sum over selected rows of -<target_row, logp_row>.
inline LossNode masked_cross_entropy(const LogProbGraph& g,
                                     const std::function<void(int t, double* row)>& fill_neg_target,
                                     int t0, int seq_len) {
    Tensor pick = Tensor::zeros({g.rows, g.vocab});
    for (int t = first_target(t0); t < seq_len; ++t)
        fill_neg_target(t, pick.data.data() + static_cast<long>(t - 1) * g.vocab);
    const int loss = reduce_sum(*g.tape, mul(*g.tape, g.logp, g.tape->constant(std::move(pick))));
    return LossNode{loss, g.logits};
}

}  // namespace detail

/// Negative log-likelihood of the sample's own tokens from position t0,
/// summed over positions. t0 = a1 gives the QA objective, t0 = 0 the LM one.
template <StudentLM S>
LossNode nll_loss(S& student, const Sample& sample, int t0) {
    detail::check_t0(t0, sample);
    const LogProbGraph g = student.build_log_probs(sample.encoded, 1.0);
    return detail::masked_cross_entropy(
        g,
        [&](int t, double* row) { row[sample.encoded[static_cast<size_t>(t)]] = -1.0; },
        t0, sample.length());
}

/// Word-KD against precomputed teacher distributions (one teacher forward per
/// sample per task instead of per epoch).
template <StudentLM S>
LossNode word_kd_loss_from_targets(S& student, const std::vector<std::vector<double>>& targets,
                                   const Sample& sample, int t0, double tau) {
    detail::check_t0(t0, sample);
    const LogProbGraph g = student.build_log_probs(sample.encoded, tau);
    detail::require(static_cast<int>(targets.size()) == g.rows,
                    detail::str("word_kd_loss: ", targets.size(), " teacher rows for ", g.rows,
                                " student rows"));
    for (const auto& row : targets)
        detail::require(static_cast<int>(row.size()) == g.vocab,
                        detail::str("word_kd_loss: vocabulary mismatch, teacher row of ", row.size(),
                                    " vs student vocab ", g.vocab));
    return detail::masked_cross_entropy(
        g,
        [&](int t, double* row) {
            const auto& p = targets[static_cast<size_t>(t - 1)];
            for (int k = 0; k < g.vocab; ++k) row[k] = -p[static_cast<size_t>(k)];
        },
        t0, sample.length());
}

/// Word-level distillation: cross-entropy between teacher and student
/// next-token distributions along the ground-truth prefix, both at
/// temperature tau. The teacher term carries no gradient.
template <StudentLM S, TeacherLM T>
LossNode word_kd_loss(S& student, const T& teacher, const Sample& sample, int t0, double tau) {
    detail::check_t0(t0, sample);
    const auto targets = teacher.soft_targets(sample.encoded, tau);
    return word_kd_loss_from_targets(student, targets, sample, t0, tau);
}

/// Teacher-generated sample: context and question kept, answer replaced by
/// the teacher's greedy decode from the ANS-terminated prefix.
struct DecodedSample {
    Sample sample;
    bool truncated = false;
};

template <TeacherLM T>
DecodedSample teacher_decode_answer(const T& teacher, const Sample& gold, const Vocabulary& vocab,
                                    int max_len) {
    const std::span<const int> prefix(gold.encoded.data(), static_cast<size_t>(gold.a1));
    const Decoded d = greedy_decode(teacher, prefix, vocab.eos, max_len, vocab.pad);
    DecodedSample out;
    out.truncated = d.truncated;
    Sample& s = out.sample;
    s.task_id = gold.task_id;
    s.context = gold.context;
    s.question = gold.question;
    s.answer = d.tokens;
    s.encoded.assign(prefix.begin(), prefix.end());
    s.encoded.insert(s.encoded.end(), d.tokens.begin(), d.tokens.end());
    s.encoded.push_back(vocab.eos);
    s.a1 = gold.a1;
    return out;
}

/// Sequence-level distillation: plain NLL on the teacher's decode.
template <StudentLM S>
LossNode seq_kd_loss(S& student, const DecodedSample& xhat, int t0) {
    detail::require(!xhat.truncated, "seq_kd_loss: truncated teacher decode");
    return nll_loss(student, xhat.sample, t0);
}

/// Soft sequence-level distillation: Word-KD along the teacher's decode.
template <StudentLM S, TeacherLM T>
LossNode seq_kd_soft_loss(S& student, const T& teacher, const DecodedSample& xhat, int t0,
                          double tau) {
    detail::require(!xhat.truncated, "seq_kd_soft_loss: truncated teacher decode");
    return word_kd_loss(student, teacher, xhat.sample, t0, tau);
}

/// Per-sample teacher work cached once per task: the decode for the
/// sequence-level kinds, the soft targets for the word-level ones.
struct PreparedSample {
    LossKind kind = LossKind::kNll;
    const Sample* gold = nullptr;
    Sample xhat;
    bool truncated = false;
    std::vector<std::vector<double>> soft;

    const Sample& training_sequence() const {
        return kind == LossKind::kSeqKd || kind == LossKind::kSeqKdSoft ? xhat : *gold;
    }
};

template <TeacherLM T>
PreparedSample prepare_sample(const T& teacher, const Sample& gold, LossKind kind, double tau,
                              const Vocabulary& vocab, int max_decode_len) {
    PreparedSample p;
    p.kind = kind;
    p.gold = &gold;
    switch (kind) {
        case LossKind::kNll:
            break;
        case LossKind::kWordKd:
            p.soft = teacher.soft_targets(gold.encoded, tau);
            break;
        case LossKind::kSeqKd:
        case LossKind::kSeqKdSoft: {
            auto d = teacher_decode_answer(teacher, gold, vocab, max_decode_len);
            p.truncated = d.truncated;
            p.xhat = std::move(d.sample);
            if (!p.truncated && kind == LossKind::kSeqKdSoft)
                p.soft = teacher.soft_targets(p.xhat.encoded, tau);
            break;
        }
    }
    return p;
}

/// L_new = L^QA + lm_weight * L^LM: the chosen loss at t0 = a1 plus the same
/// loss at t0 = 0, sharing one student forward pass.
template <StudentLM S>
LossNode new_task_loss(S& student, const PreparedSample& prepared, double tau, double lm_weight) {
    detail::require(!prepared.truncated, "new_task_loss: truncated teacher decode must be excluded");
    const Sample& seq = prepared.training_sequence();
    const bool soft = prepared.kind == LossKind::kWordKd || prepared.kind == LossKind::kSeqKdSoft;
    const LogProbGraph g = student.build_log_probs(seq.encoded, soft ? tau : 1.0);
    if (soft)
        detail::require(static_cast<int>(prepared.soft.size()) == g.rows,
                        "new_task_loss: teacher target rows do not match the sequence");

    auto fill = [&](int t, double* row) {
        if (soft) {
            const auto& p = prepared.soft[static_cast<size_t>(t - 1)];
            detail::require(static_cast<int>(p.size()) == g.vocab,
                            "new_task_loss: vocabulary mismatch between teacher and student");
            for (int k = 0; k < g.vocab; ++k) row[k] = -p[static_cast<size_t>(k)];
        } else {
            row[seq.encoded[static_cast<size_t>(t)]] = -1.0;
        }
    };
    const LossNode qa = detail::masked_cross_entropy(g, fill, seq.a1, seq.length());
    LossNode lm = detail::masked_cross_entropy(g, fill, 0, seq.length());
    Tape& tape = *g.tape;
    if (lm_weight != 1.0) {
        const int w = tape.constant(Tensor::scalar(lm_weight));
        lm.id = mul(tape, lm.id, w);
    }
    return LossNode{add(tape, qa.id, lm.id), g.logits};
}

/// Convenience overload that runs the teacher work inline.
template <StudentLM S, TeacherLM T>
LossNode new_task_loss(S& student, const T* teacher, const Sample& sample, LossKind kind, double tau,
                       const Vocabulary& vocab, int max_decode_len, double lm_weight = 1.0) {
    if (kind == LossKind::kNll) {
        PreparedSample p;
        p.kind = kind;
        p.gold = &sample;
        return new_task_loss(student, p, tau, lm_weight);
    }
    detail::require(teacher != nullptr,
                    detail::str("new_task_loss: ", loss_kind_name(kind), " requires a teacher"));
    const PreparedSample p = prepare_sample(*teacher, sample, kind, tau, vocab, max_decode_len);
    return new_task_loss(student, p, tau, lm_weight);
}

/// L_prev: plain NLL (QA + LM) on a pseudo-sample. Previous teachers are gone
/// by construction, so no distillation ever happens here.
template <StudentLM S>
LossNode prev_task_loss(S& student, const Sample& pseudo, double lm_weight = 1.0) {
    PreparedSample p;
    p.kind = LossKind::kNll;
    p.gold = &pseudo;
    return new_task_loss(student, p, /*tau=*/1.0, lm_weight);
}

}  // namespace lll
