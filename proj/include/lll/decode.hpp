#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "lll/rng.hpp"

namespace lll {

/// Anything that can score the next token given a prefix. Satisfied by
/// LanguageModel and by the table-driven stubs the tests use.
template <class M>
concept NextTokenModel = requires(const M& m, std::span<const int> tokens) {
    { m.next_logits(tokens) } -> std::convertible_to<std::vector<double>>;
    { m.vocab_size() } -> std::convertible_to<int>;
};

struct Decoded {
    std::vector<int> tokens;  // continuation only, stop token excluded
    bool truncated = false;   // max_len reached without the stop token
};

/// log_softmax(logits / tau).
inline std::vector<double> log_probs_with_temperature(std::span<const double> logits, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("log_probs_with_temperature: tau must be positive");
    if (logits.empty()) throw std::invalid_argument("log_probs_with_temperature: empty logits");
    std::vector<double> out(logits.size());
    double mx = logits[0] / tau;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] / tau;
        mx = std::max(mx, out[i]);
    }
    double sum = 0.0;
    for (double v : out) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : out) v -= lse;
    return out;
}

/// Greedy continuation until stop_token or max_len; ties break toward the
/// lowest token id, and exclude_token (the padding id) never gets emitted.
template <NextTokenModel M>
Decoded greedy_decode(const M& model, std::span<const int> prefix, int stop_token, int max_len,
                      int exclude_token = -1) {
    if (prefix.empty()) throw std::invalid_argument("greedy_decode: prefix must be non-empty");
    std::vector<int> seq(prefix.begin(), prefix.end());
    Decoded out;
    for (int step = 0; step < max_len; ++step) {
        const std::vector<double> logits = model.next_logits(seq);
        int best = -1;
        for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
            if (i == exclude_token) continue;
            if (best < 0 || logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
        }
        if (best == stop_token) return out;
        out.tokens.push_back(best);
        seq.push_back(best);
    }
    out.truncated = true;
    return out;
}

/// Samples from the renormalized top-k of each next-token distribution.
/// k = 1 reduces to greedy_decode; seeding the rng pins the output.
template <NextTokenModel M>
Decoded top_k_sample(const M& model, std::span<const int> prefix, int k, Rng& rng, int stop_token,
                     int max_len, int exclude_token = -1) {
    if (prefix.empty()) throw std::invalid_argument("top_k_sample: prefix must be non-empty");
    const int vocab = model.vocab_size();
    if (k < 1 || k > vocab)
        throw std::invalid_argument("top_k_sample: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(vocab) + "]");
    std::vector<int> seq(prefix.begin(), prefix.end());
    Decoded out;
    std::vector<int> order;
    for (int step = 0; step < max_len; ++step) {
        const std::vector<double> logits = model.next_logits(seq);
        order.clear();
        for (int i = 0; i < static_cast<int>(logits.size()); ++i)
            if (i != exclude_token) order.push_back(i);
        const int kk = std::min<int>(k, static_cast<int>(order.size()));
        std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](int a, int b) {
            const double la = logits[static_cast<size_t>(a)];
            const double lb = logits[static_cast<size_t>(b)];
            return la != lb ? la > lb : a < b;
        });
        // Renormalized softmax over the k survivors.
        double mx = logits[static_cast<size_t>(order[0])];
        double sum = 0.0;
        for (int i = 0; i < kk; ++i) sum += std::exp(logits[static_cast<size_t>(order[static_cast<size_t>(i)])] - mx);
        const double r = rng.uniform01() * sum;
        double acc = 0.0;
        int pick = order[static_cast<size_t>(kk - 1)];
        for (int i = 0; i < kk; ++i) {
            acc += std::exp(logits[static_cast<size_t>(order[static_cast<size_t>(i)])] - mx);
            if (r < acc) {
                pick = order[static_cast<size_t>(i)];
                break;
            }
        }
        if (pick == stop_token) return out;
        out.tokens.push_back(pick);
        seq.push_back(pick);
    }
    out.truncated = true;
    return out;
}

}  // namespace lll
