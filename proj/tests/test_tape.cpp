#include <catch2/catch_amalgamated.hpp>

#include "lll/gradcheck.hpp"
#include "lll/rng.hpp"
#include "lll/tape.hpp"

using namespace lll;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Builds loss = reduce_sum(op(...)) over parameter leaves, backpropagates, and
// compares every coordinate against central differences.
double op_grad_error(const std::function<int(Tape&, std::vector<int>)>& build,
                     std::vector<Tensor*> params, double h = 1e-5) {
    auto eval = [&](bool with_grad) {
        Tape tape;
        std::vector<int> ids;
        ids.reserve(params.size());
        for (Tensor* p : params) ids.push_back(tape.param(*p));
        const int loss = reduce_sum(tape, build(tape, ids));
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };
    for (Tensor* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    eval(true);
    return check_gradients([&] { return eval(false); }, params, h);
}

}  // namespace

TEST_CASE("matmul with identity matrix", "[tape]") {
    Tape tape;
    const int a = tape.constant({2, 2}, {1, 2, 3, 4});
    const int eye = tape.constant({2, 2}, {1, 0, 0, 1});
    const int out = matmul(tape, a, eye);
    CHECK(tape.value(out).data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("batched matmul matches per-slice result", "[tape]") {
    Rng rng(7);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 4, 5}, rng);
    Tape tape;
    const int out = matmul(tape, tape.constant(a), tape.constant(b));
    for (int s = 0; s < 2; ++s) {
        Tape t2;
        Tensor as({3, 4}, {a.data.begin() + s * 12, a.data.begin() + (s + 1) * 12});
        Tensor bs({4, 5}, {b.data.begin() + s * 20, b.data.begin() + (s + 1) * 20});
        const int o2 = matmul(t2, t2.constant(as), t2.constant(bs));
        for (int i = 0; i < 15; ++i)
            CHECK(tape.value(out).data[static_cast<size_t>(s * 15 + i)] ==
                  Catch::Approx(t2.value(o2).data[static_cast<size_t>(i)]));
    }
}

TEST_CASE("shape mismatch errors name the op and shapes", "[tape]") {
    Tape tape;
    const int a = tape.constant({2, 3}, std::vector<double>(6, 1.0));
    const int b = tape.constant({4, 5}, std::vector<double>(20, 1.0));
    CHECK_THROWS_WITH(matmul(tape, a, b),
                      Catch::Matchers::ContainsSubstring("matmul") &&
                          Catch::Matchers::ContainsSubstring("[2, 3]") &&
                          Catch::Matchers::ContainsSubstring("[4, 5]"));
    CHECK_THROWS_WITH(add(tape, a, b), Catch::Matchers::ContainsSubstring("add"));
}

TEST_CASE("non-finite input is rejected", "[tape]") {
    Tape tape;
    Tensor bad({2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(tape.constant(bad), std::runtime_error);
}

TEST_CASE("softmax of equal logits is uniform", "[tape]") {
    Tape tape;
    const int x = tape.constant({2}, {0.0, 0.0});
    const int y = softmax(tape, x);
    CHECK(tape.value(y).data[0] == Catch::Approx(0.5));
    CHECK(tape.value(y).data[1] == Catch::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and log_softmax agrees", "[tape][property]") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int rows = 1 + rng.uniform_int(4);
        const int cols = 2 + rng.uniform_int(6);
        Tensor x = random_tensor({rows, cols}, rng, 3.0);
        Tape tape;
        const int xid = tape.constant(x);
        const auto& sm = tape.value(softmax(tape, xid));
        const auto& lsm = tape.value(log_softmax(tape, xid));
        for (int r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (int c = 0; c < cols; ++c) {
                const double p = sm.data[static_cast<size_t>(r * cols + c)];
                sum += p;
                CHECK(std::abs(std::log(p) - lsm.data[static_cast<size_t>(r * cols + c)]) < 1e-9);
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("layernorm of a constant vector returns the bias", "[tape]") {
    Tape tape;
    const int x = tape.constant({4}, {3.0, 3.0, 3.0, 3.0});
    const int g = tape.constant({4}, {2.0, 2.0, 2.0, 2.0});
    const int b = tape.constant({4}, {0.5, -0.5, 1.5, 0.0});
    const auto& y = tape.value(layernorm(tape, x, g, b));
    CHECK(y.data[0] == Catch::Approx(0.5));
    CHECK(y.data[1] == Catch::Approx(-0.5));
    CHECK(y.data[2] == Catch::Approx(1.5));
    CHECK(y.data[3] == Catch::Approx(0.0));
}

TEST_CASE("broadcast, concat, transpose, reshape forward semantics", "[tape]") {
    Tape tape;
    const int row = tape.constant({1, 3}, {1, 2, 3});
    const auto& b = tape.value(broadcast(tape, row, {2, 3}));
    CHECK(b.data == std::vector<double>{1, 2, 3, 1, 2, 3});

    const int a = tape.constant({2, 2}, {1, 2, 3, 4});
    const int c = tape.constant({1, 2}, {5, 6});
    const std::vector<int> ids{a, c};
    const auto& cat = tape.value(concat(tape, ids, 0));
    CHECK(cat.shape == Shape{3, 2});
    CHECK(cat.data == std::vector<double>{1, 2, 3, 4, 5, 6});

    const auto& tr = tape.value(transpose(tape, a, {1, 0}));
    CHECK(tr.data == std::vector<double>{1, 3, 2, 4});

    const auto& rs = tape.value(reshape(tape, a, {4}));
    CHECK(rs.shape == Shape{4});
    CHECK(rs.data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("masked_fill replaces masked entries and blocks their gradient", "[tape]") {
    Tape tape;
    Tensor x({2, 2}, {1, 2, 3, 4});
    const int xid = tape.param(x);
    const int y = masked_fill(tape, xid, {0, 1, 1, 0}, -9.0);
    CHECK(tape.value(y).data == std::vector<double>{1, -9, -9, 4});
    tape.backward(reduce_sum(tape, y));
    CHECK(x.grad == std::vector<double>{1, 0, 0, 1});
}

TEST_CASE("embedding gather rejects out-of-range ids", "[tape]") {
    Tape tape;
    const int table = tape.constant({3, 2}, {0, 1, 2, 3, 4, 5});
    CHECK_THROWS_WITH(embedding_gather(tape, table, {0, 3}),
                      Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("backward of sum gives unit gradients", "[tape]") {
    Tape tape;
    Tensor x({3}, {4.0, -1.0, 2.5});
    const int xid = tape.param(x);
    tape.backward(reduce_sum(tape, xid));
    CHECK(x.grad == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of sum of squares doubles the input", "[tape]") {
    Tape tape;
    Tensor x({2}, {1.0, 2.0});
    const int xid = tape.param(x);
    tape.backward(reduce_sum(tape, mul(tape, xid, xid)));
    CHECK(x.grad == std::vector<double>{2, 4});
}

TEST_CASE("backward accumulates into existing gradients", "[tape]") {
    Tensor x({2}, {1.0, 2.0});
    x.grad = {10.0, 20.0};
    Tape tape;
    const int xid = tape.param(x);
    tape.backward(reduce_sum(tape, xid));
    CHECK(x.grad == std::vector<double>{11, 21});
}

TEST_CASE("backward rejects non-scalar losses and detached nodes", "[tape]") {
    Tape tape;
    const int x = tape.constant({2}, {1.0, 2.0});
    CHECK_THROWS_WITH(tape.backward(x), Catch::Matchers::ContainsSubstring("scalar"));
    CHECK_THROWS_WITH(tape.backward(-1), Catch::Matchers::ContainsSubstring("detached"));
    CHECK_THROWS_AS(tape.backward(99), std::invalid_argument);
}

TEST_CASE("backward is linear in the loss", "[tape][property]") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({4}, rng);
        const double a = rng.normal(), b = rng.normal();
        auto grad_of = [&](bool combined) {
            Tensor xc = x;
            Tape tape;
            const int xid = tape.param(xc);
            const int f = reduce_sum(tape, mul(tape, xid, xid));
            const int g = reduce_sum(tape, gelu(tape, xid));
            const int av = tape.constant(Tensor::scalar(a));
            const int bv = tape.constant(Tensor::scalar(b));
            if (combined) {
                tape.backward(add(tape, mul(tape, av, f), mul(tape, bv, g)));
                return xc.grad;
            }
            tape.backward(f);
            std::vector<double> gf = xc.grad;
            xc.zero_grad();
            Tape t2;
            const int xid2 = t2.param(xc);
            t2.backward(reduce_sum(t2, gelu(t2, xid2)));
            for (size_t i = 0; i < gf.size(); ++i) gf[i] = a * gf[i] + b * xc.grad[i];
            return gf;
        };
        const auto lhs = grad_of(true);
        const auto rhs = grad_of(false);
        for (size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == Catch::Approx(rhs[i]).margin(1e-12));
    }
}

TEST_CASE("every primitive matches central finite differences", "[tape][property]") {
    Rng rng(42);
    for (int trial = 0; trial < 3; ++trial) {
        const int m = 2 + rng.uniform_int(3);
        const int k = 2 + rng.uniform_int(3);
        const int n = 2 + rng.uniform_int(3);

        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        CHECK(op_grad_error([](Tape& t, std::vector<int> ids) { return matmul(t, ids[0], ids[1]); },
                            {&a, &b}) < 1e-4);

        Tensor c = random_tensor({m, n}, rng);
        Tensor d = random_tensor({m, n}, rng);
        for (OpKind op : {OpKind::kAdd, OpKind::kSub, OpKind::kMul})
            CHECK(op_grad_error(
                      [op](Tape& t, std::vector<int> ids) {
                          return apply_primitive(t, op, std::vector<int>{ids[0], ids[1]});
                      },
                      {&c, &d}) < 1e-4);

        Tensor row = random_tensor({1, n}, rng);
        CHECK(op_grad_error(
                  [&](Tape& t, std::vector<int> ids) { return broadcast(t, ids[0], {m, n}); },
                  {&row}) < 1e-4);

        Tensor table = random_tensor({4, k}, rng);
        CHECK(op_grad_error(
                  [&](Tape& t, std::vector<int> ids) {
                      return embedding_gather(t, ids[0], {0, 2, 2, 1});
                  },
                  {&table}) < 1e-4);

        Tensor x = random_tensor({m, k}, rng);
        Tensor gain = random_tensor({k}, rng);
        Tensor bias = random_tensor({k}, rng);
        CHECK(op_grad_error(
                  [](Tape& t, std::vector<int> ids) {
                      return layernorm(t, ids[0], ids[1], ids[2]);
                  },
                  {&x, &gain, &bias}) < 1e-4);

        for (OpKind op : {OpKind::kGelu, OpKind::kSoftmax, OpKind::kLogSoftmax, OpKind::kReduceMean}) {
            Tensor y = random_tensor({m, k}, rng);
            // Weight the op output so softmax-style rows get a non-uniform
            // pull-back (a plain sum has zero gradient through softmax).
            Tensor w = random_tensor({m, k}, rng);
            CHECK(op_grad_error(
                      [op, &w](Tape& t, std::vector<int> ids) {
                          const int o = apply_primitive(t, op, std::vector<int>{ids[0]});
                          if (t.value(o).size() == 1) return o;
                          return mul(t, o, t.constant(w));
                      },
                      {&y}) < 1e-4);
        }

        Tensor e = random_tensor({m, k}, rng);
        std::vector<uint8_t> mask(static_cast<size_t>(m * k));
        for (auto& mv : mask) mv = rng.uniform_int(2) ? 1 : 0;
        CHECK(op_grad_error(
                  [&](Tape& t, std::vector<int> ids) {
                      return masked_fill(t, ids[0], mask, -5.0);
                  },
                  {&e}) < 1e-4);

        Tensor f = random_tensor({m, k}, rng);
        Tensor g = random_tensor({m, k}, rng);
        CHECK(op_grad_error(
                  [&](Tape& t, std::vector<int> ids) {
                      const std::vector<int> cat_ids{ids[0], ids[1]};
                      return concat(t, cat_ids, 1);
                  },
                  {&f, &g}) < 1e-4);

        Tensor h = random_tensor({m, k, n}, rng);
        CHECK(op_grad_error(
                  [](Tape& t, std::vector<int> ids) { return transpose(t, ids[0], {2, 0, 1}); },
                  {&h}) < 1e-4);
        CHECK(op_grad_error(
                  [&](Tape& t, std::vector<int> ids) { return reshape(t, ids[0], {m * k, n}); },
                  {&h}) < 1e-4);
    }
}

TEST_CASE("check_gradients on x squared", "[gradcheck]") {
    Tensor x({1}, {3.0});
    auto f = [&] { return x.data[0] * x.data[0]; };
    x.grad = {6.0};
    CHECK(check_gradients(f, std::vector<Tensor*>{&x}, 1e-5) < 1e-6);
}

TEST_CASE("check_gradients on a symmetric quadratic form", "[gradcheck]") {
    // f(x) = x^T A x with symmetric A has gradient 2 A x.
    const std::vector<double> A{2.0, 0.5, 0.5, 1.0};
    Tensor x({2}, {0.7, -1.3});
    auto f = [&] {
        double s = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                s += x.data[static_cast<size_t>(i)] * A[static_cast<size_t>(i * 2 + j)] *
                     x.data[static_cast<size_t>(j)];
        return s;
    };
    x.ensure_grad();
    for (int i = 0; i < 2; ++i) {
        double g = 0.0;
        for (int j = 0; j < 2; ++j) g += 2.0 * A[static_cast<size_t>(i * 2 + j)] * x.data[static_cast<size_t>(j)];
        x.grad[static_cast<size_t>(i)] = g;
    }
    CHECK(check_gradients(f, std::vector<Tensor*>{&x}, 1e-5) < 1e-6);
}

TEST_CASE("two-layer network gradients match finite differences", "[gradcheck]") {
    Rng rng(5);
    Tensor w1 = random_tensor({3, 4}, rng, 0.5);
    Tensor b1 = random_tensor({1, 4}, rng, 0.5);
    Tensor w2 = random_tensor({4, 2}, rng, 0.5);
    Tensor input = random_tensor({2, 3}, rng);
    auto build = [&](Tape& t, std::vector<int> ids) {
        const int x = t.constant(input);
        const int h = gelu(t, add(t, matmul(t, x, ids[0]), broadcast(t, ids[1], {2, 4})));
        const int y = matmul(t, h, ids[2]);
        return mul(t, y, y);
    };
    CHECK(op_grad_error(build, {&w1, &b1, &w2}) < 1e-4);
}
