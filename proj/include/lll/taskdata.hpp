#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "lll/rng.hpp"
#include "lll/tensor.hpp"

namespace lll {

// ---------------------------------------------------------------------------
// task specs
// ---------------------------------------------------------------------------

enum class TaskKind { kCopy, kReverse, kSort, kAddMod, kSlotFill, kClassify };
enum class Metric { kExactMatch, kTokenF1 };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::kCopy: return "copy";
        case TaskKind::kReverse: return "reverse";
        case TaskKind::kSort: return "sort";
        case TaskKind::kAddMod: return "add_mod";
        case TaskKind::kSlotFill: return "slot_fill";
        case TaskKind::kClassify: return "classify";
    }
    return "?";
}

inline TaskKind task_kind_from(const std::string& s) {
    for (TaskKind k : {TaskKind::kCopy, TaskKind::kReverse, TaskKind::kSort, TaskKind::kAddMod,
                       TaskKind::kSlotFill, TaskKind::kClassify})
        if (s == task_kind_name(k)) return k;
    throw std::invalid_argument("unknown task kind: " + s);
}

inline const char* metric_name(Metric m) {
    return m == Metric::kExactMatch ? "exact_match" : "token_f1";
}

inline Metric metric_from(const std::string& s) {
    if (s == "exact_match") return Metric::kExactMatch;
    if (s == "token_f1") return Metric::kTokenF1;
    throw std::invalid_argument("unknown metric: " + s);
}

/// Deterministic synthetic task: every sample is a pure function of
/// (seed, index), with the answer fixed by the generator rule.
struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::kCopy;
    std::vector<std::string> alphabet;
    int len_min = 3;
    int len_max = 5;
    int n_train = 100;
    int n_test = 40;
    uint64_t seed = 0;
    Metric metric = Metric::kExactMatch;

    int n_labels() const { return std::min<int>(4, static_cast<int>(alphabet.size())); }

    void validate() const {
        detail::require(!task_id.empty(), "task spec: empty task_id");
        detail::require(n_train > 0 && n_test > 0, "task spec: n_train and n_test must be positive");
        detail::require(len_min >= 1 && len_max >= len_min,
                        detail::str("task spec ", task_id, ": bad length range [", len_min, ", ",
                                    len_max, "]"));
        std::vector<std::string> sorted = alphabet;
        std::sort(sorted.begin(), sorted.end());
        detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                        detail::str("task spec ", task_id, ": alphabet tokens must be distinct"));
        const size_t need = kind == TaskKind::kSlotFill ? 4 : kind == TaskKind::kAddMod ? 2 : 1;
        detail::require(alphabet.size() >= need,
                        detail::str("task spec ", task_id, ": alphabet too small for ",
                                    task_kind_name(kind), " (needs ", need, " distinct tokens)"));
    }

    std::string question_keyword() const {
        switch (kind) {
            case TaskKind::kCopy: return "copy";
            case TaskKind::kReverse: return "rev";
            case TaskKind::kSort: return "sort";
            case TaskKind::kAddMod: return "add";
            case TaskKind::kSlotFill: return "which";
            case TaskKind::kClassify: return "cls";
        }
        return "?";
    }

    /// Everything this task can put into a sample besides specials.
    std::vector<std::string> content_tokens() const {
        std::vector<std::string> out = alphabet;
        out.push_back(question_keyword());
        if (kind == TaskKind::kClassify)
            for (int i = 0; i < n_labels(); ++i) out.push_back("lab" + std::to_string(i));
        return out;
    }
};

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

/// Shared fixed vocabulary: specials first, then one begin-of-sequence token
/// per task, then content tokens in first-seen order. Ids are stable for the
/// lifetime of a run and across checkpoint save/load.
struct Vocabulary {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;
    int pad = 0, eos = 1, ans = 2;
    std::vector<std::pair<std::string, int>> task_bos;  // registration order

    static Vocabulary build(std::span<const TaskSpec> specs) {
        Vocabulary v;
        v.push("<pad>");
        v.push("<eos>");
        v.push("<ans>");
        for (const auto& spec : specs) {
            spec.validate();
            for (const auto& other : v.task_bos)
                detail::require(other.first != spec.task_id,
                                "vocabulary: duplicate task id " + spec.task_id);
            v.task_bos.emplace_back(spec.task_id, v.push("<" + spec.task_id + ">"));
        }
        for (const auto& spec : specs)
            for (const auto& tok : spec.content_tokens())
                if (!v.index.count(tok)) v.push(tok);
        return v;
    }

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& tok) const {
        auto it = index.find(tok);
        if (it == index.end()) throw std::invalid_argument("vocabulary: unknown token \"" + tok + "\"");
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size())
            throw std::invalid_argument(detail::str("vocabulary: id ", id, " out of range"));
        return tokens[static_cast<size_t>(id)];
    }

    int bos(const std::string& task_id) const {
        for (const auto& [t, id] : task_bos)
            if (t == task_id) return id;
        throw std::invalid_argument("vocabulary: unknown task \"" + task_id + "\"");
    }

    /// Task id owning a BOS token, or nullopt when the id is not a BOS.
    std::optional<std::string> task_of_bos(int id) const {
        for (const auto& [t, b] : task_bos)
            if (b == id) return t;
        return std::nullopt;
    }

    std::vector<int> encode_tokens(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    std::string decode_string(std::span<const int> ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += token(ids[i]);
        }
        return out;
    }

private:
    int push(std::string tok) {
        index.emplace(tok, size());
        tokens.push_back(std::move(tok));
        return size() - 1;
    }
};

// ---------------------------------------------------------------------------
// samples
// ---------------------------------------------------------------------------

/// One encoded training example:
///   encoded = [BOS_task] context question [ANS] answer [EOS]
/// a1 indexes the first answer token.
struct Sample {
    std::string task_id;
    std::vector<int> context, question, answer;
    std::vector<int> encoded;
    int a1 = 0;

    int length() const { return static_cast<int>(encoded.size()); }
};

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline Sample encode_sample(const Vocabulary& vocab, const std::string& task_id,
                            const std::string& context, const std::string& question,
                            const std::string& answer, int max_len = 0) {
    Sample s;
    s.task_id = task_id;
    s.context = vocab.encode_tokens(split_ws(context));
    s.question = vocab.encode_tokens(split_ws(question));
    s.answer = vocab.encode_tokens(split_ws(answer));
    s.encoded.push_back(vocab.bos(task_id));
    s.encoded.insert(s.encoded.end(), s.context.begin(), s.context.end());
    s.encoded.insert(s.encoded.end(), s.question.begin(), s.question.end());
    s.encoded.push_back(vocab.ans);
    s.a1 = static_cast<int>(s.encoded.size());
    s.encoded.insert(s.encoded.end(), s.answer.begin(), s.answer.end());
    s.encoded.push_back(vocab.eos);
    if (max_len > 0 && s.length() > max_len)
        throw std::invalid_argument(detail::str("encode_sample: encoded length ", s.length(),
                                                " exceeds limit ", max_len, " for task ", task_id));
    return s;
}

inline std::vector<int> make_lm_prefix(const Vocabulary& vocab, const std::string& task_id) {
    return {vocab.bos(task_id)};
}

struct ParseResult {
    std::optional<Sample> sample;
    std::string reject_reason;
    bool ok() const { return sample.has_value(); }
};

/// Validates a generated token sequence as a pseudo-sample. Rejection is a
/// value, not an error: the caller resamples. Accepted samples put all
/// pre-separator tokens into `context` (the context/question boundary is not
/// recoverable from the flat encoding, and no loss needs it).
inline ParseResult parse_pseudo(const Vocabulary& vocab, std::span<const int> generated) {
    auto reject = [](std::string why) { return ParseResult{std::nullopt, std::move(why)}; };
    if (generated.empty()) return reject("empty sequence");
    const auto task = vocab.task_of_bos(generated[0]);
    if (!task) return reject("no task begin token");
    int ans_pos = -1;
    for (size_t i = 0; i < generated.size(); ++i) {
        const int id = generated[i];
        if (id == vocab.pad) return reject("padding token in sequence");
        if (id == vocab.ans) {
            if (ans_pos >= 0) return reject("multiple answer separators");
            ans_pos = static_cast<int>(i);
        }
        if (id == vocab.eos && i + 1 != generated.size()) return reject("interior end-of-sequence");
        if (i > 0 && vocab.task_of_bos(id)) return reject("interior begin token");
    }
    if (ans_pos < 0) return reject("no answer separator");
    if (generated.back() != vocab.eos) return reject("missing end-of-sequence");
    const int answer_len = static_cast<int>(generated.size()) - ans_pos - 2;
    if (answer_len <= 0) return reject("empty answer");

    Sample s;
    s.task_id = *task;
    s.context.assign(generated.begin() + 1, generated.begin() + ans_pos);
    s.answer.assign(generated.begin() + ans_pos + 1, generated.end() - 1);
    s.encoded.assign(generated.begin(), generated.end());
    s.a1 = ans_pos + 1;
    return ParseResult{std::move(s), ""};
}

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

struct TaskDataset {
    TaskSpec spec;
    std::vector<Sample> train, test;
};

namespace detail {

struct RawExample {
    std::vector<std::string> context, question, answer;
};

inline RawExample generate_example(const TaskSpec& spec, uint64_t index) {
    Rng rng(derive_seed(spec.seed, "sample", index));
    const auto& a = spec.alphabet;
    const int len = spec.len_min + rng.uniform_int(spec.len_max - spec.len_min + 1);
    auto draw = [&] { return a[static_cast<size_t>(rng.uniform_int(static_cast<int>(a.size())))]; };
    auto index_of = [&](const std::string& tok) {
        return static_cast<int>(std::find(a.begin(), a.end(), tok) - a.begin());
    };

    RawExample ex;
    switch (spec.kind) {
        case TaskKind::kCopy:
        case TaskKind::kReverse:
        case TaskKind::kSort: {
            for (int i = 0; i < len; ++i) ex.context.push_back(draw());
            ex.question = {spec.question_keyword()};
            ex.answer = ex.context;
            if (spec.kind == TaskKind::kReverse)
                std::reverse(ex.answer.begin(), ex.answer.end());
            if (spec.kind == TaskKind::kSort)
                std::sort(ex.answer.begin(), ex.answer.end(),
                          [&](const std::string& x, const std::string& y) {
                              return index_of(x) < index_of(y);
                          });
            break;
        }
        case TaskKind::kAddMod: {
            int sum = 0;
            for (int i = 0; i < len; ++i) {
                ex.context.push_back(draw());
                sum += index_of(ex.context.back());
            }
            ex.question = {spec.question_keyword()};
            ex.answer = {a[static_cast<size_t>(sum % static_cast<int>(a.size()))]};
            break;
        }
        case TaskKind::kSlotFill: {
            const int n_keys = static_cast<int>(a.size()) / 2;
            std::vector<std::string> keys(a.begin(), a.begin() + n_keys);
            const std::vector<std::string> values(a.begin() + n_keys, a.end());
            rng.shuffle(keys);
            const int pairs = std::min<int>(len, n_keys);
            std::vector<std::pair<std::string, std::string>> slots;
            for (int i = 0; i < pairs; ++i) {
                const auto& val = values[static_cast<size_t>(rng.uniform_int(static_cast<int>(values.size())))];
                slots.emplace_back(keys[static_cast<size_t>(i)], val);
                ex.context.push_back(slots.back().first);
                ex.context.push_back(slots.back().second);
            }
            const auto& asked = slots[static_cast<size_t>(rng.uniform_int(pairs))];
            ex.question = {asked.first};
            ex.answer = {asked.second};
            break;
        }
        case TaskKind::kClassify: {
            for (int i = 0; i < len; ++i) ex.context.push_back(draw());
            ex.question = {spec.question_keyword()};
            const int label = index_of(ex.context.front()) % spec.n_labels();
            ex.answer = {"lab" + std::to_string(label)};
            break;
        }
    }
    return ex;
}

inline std::string join_ws(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

}  // namespace detail

/// Deterministic dataset for one task. Train sample i uses generator index i,
/// test sample j uses index n_train + j, so the index ranges never overlap.
inline TaskDataset generate_task(const Vocabulary& vocab, const TaskSpec& spec, int max_len = 0) {
    spec.validate();
    TaskDataset ds;
    ds.spec = spec;
    auto make = [&](uint64_t index) {
        const auto ex = detail::generate_example(spec, index);
        return encode_sample(vocab, spec.task_id, detail::join_ws(ex.context),
                             detail::join_ws(ex.question), detail::join_ws(ex.answer), max_len);
    };
    ds.train.reserve(static_cast<size_t>(spec.n_train));
    for (int i = 0; i < spec.n_train; ++i) ds.train.push_back(make(static_cast<uint64_t>(i)));
    ds.test.reserve(static_cast<size_t>(spec.n_test));
    for (int i = 0; i < spec.n_test; ++i)
        ds.test.push_back(make(static_cast<uint64_t>(spec.n_train + i)));
    return ds;
}

}  // namespace lll
