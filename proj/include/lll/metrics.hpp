#pragma once

#include <map>
#include <span>
#include <vector>

#include "lll/decode.hpp"
#include "lll/model.hpp"
#include "lll/taskdata.hpp"

namespace lll {

namespace detail {

inline std::vector<int> strip_token(std::span<const int> seq, int token) {
    std::vector<int> out;
    out.reserve(seq.size());
    for (int t : seq)
        if (t != token) out.push_back(t);
    return out;
}

}  // namespace detail

/// 1 iff the sequences are identical after EOS stripping.
inline int exact_match(std::span<const int> prediction, std::span<const int> gold, int eos) {
    return detail::strip_token(prediction, eos) == detail::strip_token(gold, eos) ? 1 : 0;
}

/// Harmonic mean of token-multiset precision and recall, scaled to [0, 100].
/// Both empty scores 100; exactly one empty scores 0.
inline double token_f1(std::span<const int> prediction, std::span<const int> gold, int eos) {
    const auto pred = detail::strip_token(prediction, eos);
    const auto ref = detail::strip_token(gold, eos);
    if (pred.empty() && ref.empty()) return 100.0;
    if (pred.empty() || ref.empty()) return 0.0;
    std::map<int, int> want;
    for (int t : ref) want[t] += 1;
    int overlap = 0;
    for (int t : pred)
        if (auto it = want.find(t); it != want.end() && it->second > 0) {
            it->second -= 1;
            overlap += 1;
        }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

/// Greedy answer for one sample from its ANS-terminated prefix.
template <NextTokenModel M>
Decoded decode_answer(const M& model, const Sample& sample, const Vocabulary& vocab, int max_len) {
    const std::span<const int> prefix(sample.encoded.data(), static_cast<size_t>(sample.a1));
    return greedy_decode(model, prefix, vocab.eos, max_len, vocab.pad);
}

/// Mean task metric over the test split, in [0, 100].
inline double evaluate_task(const LanguageModel& model, const TaskDataset& task,
                            const Vocabulary& vocab) {
    detail::require(model.config.vocab_size == vocab.size(),
                    detail::str("evaluate_task: model vocabulary of ", model.config.vocab_size,
                                " does not match task vocabulary of ", vocab.size()));
    detail::require(!task.test.empty(), "evaluate_task: empty test split");
    double total = 0.0;
    for (const Sample& s : task.test) {
        const int budget = model.config.context_len - s.a1;
        const Decoded d = decode_answer(model, s, vocab, budget);
        if (task.spec.metric == Metric::kExactMatch)
            total += 100.0 * exact_match(d.tokens, s.answer, vocab.eos);
        else
            total += token_f1(d.tokens, s.answer, vocab.eos);
    }
    return total / static_cast<double>(task.test.size());
}

}  // namespace lll
