#include <catch2/catch_amalgamated.hpp>

#include "lll/decode.hpp"
#include "lll/gradcheck.hpp"
#include "lll/model.hpp"

using namespace lll;

namespace {

ModelConfig tiny_config(int vocab = 8) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.context_len = 16;
    cfg.vocab_size = vocab;
    return cfg;
}

// Scripted model: at step t emits logits favoring script[t], then the stop
// token once the script runs out.
struct ScriptedModel {
    std::vector<int> script;
    int stop;
    int vocab;
    std::vector<double> next_logits(std::span<const int> tokens) const {
        const size_t step = tokens.size() - 1;  // steps beyond a 1-token prefix
        std::vector<double> logits(static_cast<size_t>(vocab), 0.0);
        const int want = step < script.size() ? script[step] : stop;
        logits[static_cast<size_t>(want)] = 10.0;
        return logits;
    }
    int vocab_size() const { return vocab; }
};

struct UniformModel {
    int vocab;
    std::vector<double> next_logits(std::span<const int>) const {
        return std::vector<double>(static_cast<size_t>(vocab), 0.0);
    }
    int vocab_size() const { return vocab; }
};

}  // namespace

TEST_CASE("forward produces one row of scores per input token", "[model]") {
    auto m = LanguageModel::init(tiny_config(), 1);
    const std::vector<int> tokens{0, 3, 5, 1};
    const Tensor logits = m.forward_logits(tokens);
    CHECK(logits.shape == Shape{4, 8});
}

TEST_CASE("zeroed token embedding yields uniform next-token distributions", "[model]") {
    auto m = LanguageModel::init(tiny_config(), 1);
    std::fill(m.tok_emb.data.begin(), m.tok_emb.data.end(), 0.0);  // tied head reads this
    const std::vector<int> tokens{0, 1, 2};
    const Tensor logits = m.forward_logits(tokens);
    for (double v : logits.data) CHECK(v == 0.0);
    const auto lp = log_probs_with_temperature(
        std::span<const double>(logits.data).subspan(0, 8), 1.0);
    for (double v : lp) CHECK(std::exp(v) == Catch::Approx(1.0 / 8));
}

TEST_CASE("causal masking: future tokens never affect earlier rows", "[model]") {
    auto m = LanguageModel::init(tiny_config(), 7);
    std::vector<int> tokens{2, 4, 6};
    const Tensor before = m.forward_logits(tokens);
    tokens.push_back(1);
    const Tensor after = m.forward_logits(tokens);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 8; ++c)
            CHECK(before.data[static_cast<size_t>(r * 8 + c)] ==
                  Catch::Approx(after.data[static_cast<size_t>(r * 8 + c)]).margin(1e-12));

    // Changing a future token leaves rows at or before t unchanged too.
    std::vector<int> alt = tokens;
    alt[3] = 7;
    const Tensor changed = m.forward_logits(alt);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 8; ++c)
            CHECK(after.data[static_cast<size_t>(r * 8 + c)] ==
                  Catch::Approx(changed.data[static_cast<size_t>(r * 8 + c)]).margin(1e-12));
}

TEST_CASE("forward rejects overlong input and unknown token ids", "[model]") {
    auto m = LanguageModel::init(tiny_config(), 3);
    std::vector<int> overlong(17, 0);
    CHECK_THROWS_WITH(m.forward_logits(overlong), Catch::Matchers::ContainsSubstring("context_len"));
    const std::vector<int> oov{0, 8};
    CHECK_THROWS_WITH(m.forward_logits(oov), Catch::Matchers::ContainsSubstring("vocabulary"));
}

TEST_CASE("full transformer NLL-style loss passes the finite-difference oracle", "[model][gradcheck]") {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.context_len = 8;
    cfg.vocab_size = 6;
    auto m = LanguageModel::init(cfg, 11);
    const std::vector<int> tokens{0, 2, 3, 1, 4};
    auto params = m.params();

    auto eval = [&](bool with_grad) {
        Tape tape;
        const ModelGraph g = ModelGraph::bind_trainable(tape, m);
        const int lp = log_softmax(tape, g.logits(std::span<const int>(tokens).first(4)));
        // -sum of log-probs of the observed next tokens
        Tensor pick = Tensor::zeros({4, 6});
        for (int r = 0; r < 4; ++r)
            pick.data[static_cast<size_t>(r * 6 + tokens[static_cast<size_t>(r + 1)])] = -1.0;
        const int loss = reduce_sum(tape, mul(tape, lp, tape.constant(pick)));
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };
    m.zero_grads();
    for (Tensor* p : params) p->ensure_grad();
    eval(true);
    const double err = check_gradients([&] { return eval(false); }, params, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("greedy decode on scripted logits", "[decode]") {
    SECTION("stop-favoring model yields an empty continuation") {
        ScriptedModel m{{}, 3, 6};
        const auto d = greedy_decode(m, std::vector<int>{0}, 3, 10);
        CHECK(d.tokens.empty());
        CHECK_FALSE(d.truncated);
    }
    SECTION("scripted a, b, STOP") {
        ScriptedModel m{{4, 2}, 3, 6};
        const auto d = greedy_decode(m, std::vector<int>{0}, 3, 10);
        CHECK(d.tokens == std::vector<int>{4, 2});
        CHECK_FALSE(d.truncated);
    }
    SECTION("running out of budget flags truncation") {
        ScriptedModel m{{4, 4, 4, 4}, 3, 6};
        const auto d = greedy_decode(m, std::vector<int>{0}, 3, 2);
        CHECK(d.tokens == std::vector<int>{4, 4});
        CHECK(d.truncated);
    }
    SECTION("argmax ties break toward the lowest token id") {
        UniformModel m{5};
        const auto d = greedy_decode(m, std::vector<int>{0}, 4, 3);
        CHECK(d.tokens == std::vector<int>{0, 0, 0});
    }
    SECTION("excluded token is never emitted") {
        UniformModel m{5};
        const auto d = greedy_decode(m, std::vector<int>{0}, 4, 3, /*exclude=*/0);
        CHECK(d.tokens == std::vector<int>{1, 1, 1});
    }
}

TEST_CASE("greedy decode is invariant under positive logit rescaling", "[decode][property]") {
    struct Scaled {
        const LanguageModel* m;
        double scale;
        std::vector<double> next_logits(std::span<const int> t) const {
            auto l = m->next_logits(t);
            for (auto& v : l) v *= scale;
            return l;
        }
        int vocab_size() const { return m->vocab_size(); }
    };
    auto m = LanguageModel::init(tiny_config(), 21);
    const std::vector<int> prefix{1, 5};
    const auto base = greedy_decode(Scaled{&m, 1.0}, prefix, 0, 6);
    for (double s : {0.5, 3.0, 17.0})
        CHECK(greedy_decode(Scaled{&m, s}, prefix, 0, 6).tokens == base.tokens);
}

TEST_CASE("top-k sampling", "[decode]") {
    Rng rng(17);
    SECTION("k=1 equals greedy for a real model") {
        auto m = LanguageModel::init(tiny_config(), 5);
        const std::vector<int> prefix{2};
        const auto g = greedy_decode(m, prefix, 0, 8);
        const auto s = top_k_sample(m, prefix, 1, rng, 0, 8);
        CHECK(g.tokens == s.tokens);
        CHECK(g.truncated == s.truncated);
    }
    SECTION("fixed seed reproduces the sample") {
        auto m = LanguageModel::init(tiny_config(), 5);
        Rng r1(5), r2(5);
        const std::vector<int> prefix{2};
        const auto a = top_k_sample(m, prefix, 4, r1, 0, 8);
        const auto b = top_k_sample(m, prefix, 4, r2, 0, 8);
        CHECK(a.tokens == b.tokens);
    }
    SECTION("k out of range throws") {
        UniformModel m{5};
        CHECK_THROWS_AS(top_k_sample(m, std::vector<int>{0}, 0, rng, 0, 4), std::invalid_argument);
        CHECK_THROWS_AS(top_k_sample(m, std::vector<int>{0}, 6, rng, 0, 4), std::invalid_argument);
    }
    SECTION("k=|V| with uniform logits draws every token uniformly") {
        UniformModel m{5};
        // One-step decodes; an immediate stop counts as drawing the stop token.
        std::vector<int> counts(5, 0);
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            const auto d = top_k_sample(m, std::vector<int>{0}, 5, rng, /*stop=*/4, /*max_len=*/1);
            if (d.tokens.empty() && !d.truncated)
                counts[4]++;
            else
                counts[static_cast<size_t>(d.tokens[0])]++;
        }
        const double expect = n / 5.0;
        const double sigma = std::sqrt(n * 0.2 * 0.8);
        for (int c : counts) CHECK(std::abs(c - expect) < 3.0 * sigma);
    }
}

TEST_CASE("log_probs_with_temperature", "[decode]") {
    SECTION("tau=1 on equal logits") {
        const std::vector<double> logits{0.0, 0.0};
        const auto lp = log_probs_with_temperature(logits, 1.0);
        CHECK(lp[0] == Catch::Approx(std::log(0.5)));
        CHECK(lp[1] == Catch::Approx(std::log(0.5)));
    }
    SECTION("huge tau flattens any bounded logits") {
        const std::vector<double> logits{10.0, -10.0, 3.0};
        const auto lp = log_probs_with_temperature(logits, 1e6);
        double mx = -1e300, mn = 1e300;
        for (double v : lp) {
            mx = std::max(mx, std::exp(v));
            mn = std::min(mn, std::exp(v));
        }
        CHECK(mx - mn < 1e-4);
    }
    SECTION("logits [2,0] at tau=2 give softmax([1,0])") {
        const std::vector<double> logits{2.0, 0.0};
        const auto lp = log_probs_with_temperature(logits, 2.0);
        const double e = std::exp(1.0);
        CHECK(std::exp(lp[0]) == Catch::Approx(e / (e + 1.0)).epsilon(1e-12));
        CHECK(std::exp(lp[1]) == Catch::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
    }
    SECTION("probabilities sum to one for random rows and temperatures") {
        Rng rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> logits(static_cast<size_t>(2 + rng.uniform_int(10)));
            for (auto& v : logits) v = rng.normal(0.0, 5.0);
            const double tau = std::exp(rng.normal(0.0, 2.0));
            const auto lp = log_probs_with_temperature(logits, tau);
            double sum = 0.0;
            for (double v : lp) sum += std::exp(v);
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
    SECTION("non-positive temperature throws") {
        const std::vector<double> logits{1.0};
        CHECK_THROWS_AS(log_probs_with_temperature(logits, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(log_probs_with_temperature(logits, -2.0), std::invalid_argument);
    }
}

TEST_CASE("model init is deterministic per seed", "[model]") {
    auto a = LanguageModel::init(tiny_config(), 42);
    auto b = LanguageModel::init(tiny_config(), 42);
    auto c = LanguageModel::init(tiny_config(), 43);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());
}
