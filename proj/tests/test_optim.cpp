#include <catch2/catch_amalgamated.hpp>

#include "lll/optim.hpp"
#include "lll/rng.hpp"

using namespace lll;

TEST_CASE("clip_global_norm scales only above the bound", "[optim]") {
    Tensor a({2}, {0.0, 0.0});

    a.grad = {2.0, 0.0};  // norm 2
    CHECK(clip_global_norm(std::vector<Tensor*>{&a}, 1.0) == Catch::Approx(0.5));
    CHECK(a.grad[0] == Catch::Approx(1.0));

    a.grad = {0.3, 0.0};  // norm 0.3, untouched
    CHECK(clip_global_norm(std::vector<Tensor*>{&a}, 1.0) == 1.0);
    CHECK(a.grad[0] == Catch::Approx(0.3));

    a.grad = {3.0, 4.0};  // 3-4-5 triangle
    CHECK(clip_global_norm(std::vector<Tensor*>{&a}, 1.0) == Catch::Approx(0.2));
    CHECK(a.grad[0] == Catch::Approx(0.6));
    CHECK(a.grad[1] == Catch::Approx(0.8));

    a.grad = {0.0, 0.0};
    CHECK(clip_global_norm(std::vector<Tensor*>{&a}, 1.0) == 1.0);
}

TEST_CASE("clip_global_norm is idempotent", "[optim][property]") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a({5}, std::vector<double>(5, 0.0));
        a.grad.resize(5);
        for (auto& g : a.grad) g = rng.normal(0.0, 2.0);
        clip_global_norm(std::vector<Tensor*>{&a}, 1.0);
        const auto once = a.grad;
        clip_global_norm(std::vector<Tensor*>{&a}, 1.0);
        for (size_t i = 0; i < once.size(); ++i)
            CHECK(a.grad[i] == Catch::Approx(once[i]).margin(1e-12));
    }
}

TEST_CASE("warmup-linear schedule", "[optim]") {
    AdamConfig cfg;
    cfg.lr_max = 1.0;
    cfg.warmup_ratio = 0.1;
    cfg.total_steps = 100;
    CHECK(lr_at(cfg, 0) == 0.0);
    CHECK(lr_at(cfg, 5) == Catch::Approx(0.5));
    CHECK(lr_at(cfg, 10) == Catch::Approx(1.0));
    CHECK(lr_at(cfg, 55) == Catch::Approx(0.5));
    CHECK(lr_at(cfg, 100) == Catch::Approx(0.0));
    for (long s = 0; s <= 100; ++s) {
        CHECK(lr_at(cfg, s) >= 0.0);
        CHECK(lr_at(cfg, s) <= cfg.lr_max);
    }
}

TEST_CASE("adam leaves params alone when gradient and decay are zero", "[optim]") {
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.total_steps = 10;
    cfg.lr_max = 0.1;
    cfg.warmup_ratio = 0.0;
    Tensor p({2}, {1.5, -2.5});
    p.grad = {0.0, 0.0};
    AdamState st(cfg, std::vector<Tensor*>{&p});
    adam_step(st, std::vector<Tensor*>{&p});
    CHECK(p.data == std::vector<double>{1.5, -2.5});
}

TEST_CASE("warmup step zero applies zero learning rate", "[optim]") {
    AdamConfig cfg;
    cfg.total_steps = 100;
    cfg.warmup_ratio = 0.1;
    cfg.lr_max = 0.5;
    Tensor p({1}, {1.0});
    p.grad = {123.0};
    AdamState st(cfg, std::vector<Tensor*>{&p});
    adam_step(st, std::vector<Tensor*>{&p});
    CHECK(p.data[0] == 1.0);
    CHECK(st.step == 1);
}

TEST_CASE("scalar adam matches a hand-rolled recurrence", "[optim]") {
    AdamConfig cfg;
    cfg.lr_max = 0.1;
    cfg.warmup_ratio = 0.0;
    cfg.total_steps = 4;
    cfg.weight_decay = 0.01;
    cfg.epsilon = 1e-4;
    Tensor p({1}, {1.0});
    AdamState st(cfg, std::vector<Tensor*>{&p});

    // Independent recurrence for two steps with constant gradient 1.0.
    double m = 0.0, v = 0.0, x = 1.0;
    for (long t = 1; t <= 2; ++t) {
        const double lr = lr_at(cfg, t - 1);
        m = cfg.beta1 * m + (1 - cfg.beta1) * 1.0;
        v = cfg.beta2 * v + (1 - cfg.beta2) * 1.0;
        const double mhat = m / (1 - std::pow(cfg.beta1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(cfg.beta2, static_cast<double>(t)));
        x = x - lr * mhat / (std::sqrt(vhat) + cfg.epsilon) - lr * cfg.weight_decay * x;
    }

    for (int step = 0; step < 2; ++step) {
        p.grad = {1.0};
        adam_step(st, std::vector<Tensor*>{&p});
    }
    CHECK(p.data[0] == Catch::Approx(x).epsilon(1e-12));
}

TEST_CASE("adam rejects schedule exhaustion and length mismatch", "[optim]") {
    AdamConfig cfg;
    cfg.total_steps = 1;
    Tensor p({1}, {1.0});
    p.grad = {1.0};
    AdamState st(cfg, std::vector<Tensor*>{&p});
    adam_step(st, std::vector<Tensor*>{&p});
    CHECK_THROWS_AS(adam_step(st, std::vector<Tensor*>{&p}), std::invalid_argument);

    AdamState st2(cfg, std::vector<Tensor*>{&p});
    Tensor q({1}, {1.0});
    CHECK_THROWS_AS(adam_step(st2, std::vector<Tensor*>{&p, &q}), std::invalid_argument);
}

TEST_CASE("adam trajectory is deterministic for identical state", "[optim]") {
    auto run = [] {
        Rng rng(99);
        AdamConfig cfg;
        cfg.lr_max = 0.05;
        cfg.total_steps = 50;
        Tensor p({8}, std::vector<double>(8, 0.5));
        AdamState st(cfg, std::vector<Tensor*>{&p});
        for (int s = 0; s < 50; ++s) {
            p.grad.assign(8, 0.0);
            for (auto& g : p.grad) g = rng.normal();
            clip_global_norm(std::vector<Tensor*>{&p}, cfg.max_grad_norm);
            adam_step(st, std::vector<Tensor*>{&p});
        }
        return p.data;
    };
    CHECK(run() == run());
}
