#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fd_check.hpp"
#include "regtext/graph.hpp"
#include "regtext/rng.hpp"
#include "regtext/tensor.hpp"

using namespace regtext;

namespace {
constexpr double kFdTol = 1e-4;

std::vector<double> seq(std::initializer_list<double> v) { return std::vector<double>(v); }
}  // namespace

TEST_CASE("elementwise forward values") {
    Graph<double> g;
    auto x = g.leaf({3}, seq({-1, 0, 2}), true);

    auto r = g.relu(x);
    CHECK(r->data == std::vector<double>{0, 0, 2});

    auto zeros = g.constant({3}, std::vector<double>(3, 0.0));
    auto same = g.add(x, zeros);
    CHECK(same->data == x->data);

    // d/dx tanh at 0 -> 1
    Graph<double> g2;
    auto x0 = g2.leaf({1}, {0.0}, true);
    auto t = g2.tanh_(x0);
    g2.backward(t);
    CHECK(x0->grad[0] == doctest::Approx(1.0));
}

TEST_CASE("elementwise shape mismatch is a structured error") {
    Graph<double> g;
    auto a = g.leaf({2}, seq({1, 2}), true);
    auto b = g.leaf({3}, seq({1, 2, 3}), true);
    CHECK_THROWS_AS(g.add(a, b), Error);
    CHECK_THROWS_WITH_AS(g.mul(a, b), doctest::Contains("[2]"), Error);
}

TEST_CASE("scalar broadcast") {
    Graph<double> g;
    auto a = g.leaf({2, 2}, seq({1, 2, 3, 4}), true);
    auto s = g.leaf({1}, {2.0}, true);
    auto y = g.mul(a, s);
    CHECK(y->data == std::vector<double>{2, 4, 6, 8});
    auto loss = g.sum_all(y);
    g.backward(loss);
    CHECK(s->grad[0] == doctest::Approx(10.0));  // sum of a
}

TEST_CASE("matmul examples") {
    Graph<double> g;
    auto eye = g.constant({2, 2}, seq({1, 0, 0, 1}));
    auto m = g.leaf({2, 2}, seq({1, 2, 3, 4}), true);
    CHECK(g.matmul(eye, m)->data == std::vector<double>{1, 2, 3, 4});

    auto a = g.constant({1, 2}, seq({1, 2}));
    auto b = g.constant({2, 1}, seq({3, 4}));
    CHECK(g.matmul(a, b)->data == std::vector<double>{11});

    auto bad = g.constant({3, 1}, seq({1, 2, 3}));
    CHECK_THROWS_AS(g.matmul(a, bad), Error);
}

TEST_CASE("gradient of sum(A*B) wrt A equals ones*B^T") {
    Rng rng(11);
    const std::size_t m = 3, k = 4, n = 2;
    auto av = fd::random_values(m * k, rng);
    auto bv = fd::random_values(k * n, rng);

    Graph<double> g;
    auto a = g.leaf({m, k}, av, true);
    auto b = g.constant({k, n}, bv);
    g.backward(g.sum_all(g.matmul(a, b)));

    // oracle: d sum(AB) / dA[i,p] = sum_j B[p,j]
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double expect = 0;
            for (std::size_t j = 0; j < n; ++j) expect += bv[p * n + j];
            CHECK(a->grad[i * k + p] == doctest::Approx(expect));
        }

    // and against central differences
    auto rep = fd::check(
        [](Graph<double>& gg, const std::vector<TensorPtr<double>>& in) {
            return gg.sum_all(gg.matmul(in[0], in[1]));
        },
        {{{m, k}, av}, {{k, n}, bv}});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("reductions along the time axis") {
    Graph<double> g;
    // [[1,3],[3,1]] as [1,2,2]: two timesteps, two features
    auto x = g.leaf({1, 2, 2}, seq({1, 3, 3, 1}), true);
    auto m = g.mean(x, 1);
    CHECK(m->data == std::vector<double>{2, 2});

    auto mx = g.max(x, 1);
    CHECK(mx.value->data == std::vector<double>{3, 3});
    CHECK(mx.argmax == std::vector<std::size_t>{1, 0});

    g.backward(g.sum_all(mx.value));
    // exactly one unit of gradient per feature column
    CHECK(x->grad == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("max tie-break routes to lowest index and mass is conserved") {
    Graph<double> g;
    auto x = g.leaf({1, 3, 2}, seq({5, 1, 5, 2, 5, 2}), true);
    auto mx = g.max(x, 1);
    CHECK(mx.argmax[0] == 0);  // three-way tie on feature 0
    CHECK(mx.argmax[1] == 1);  // two-way tie on feature 1
    g.backward(g.sum_all(mx.value));
    double total = 0;
    for (double v : x->grad) total += v;
    CHECK(total == doctest::Approx(2.0));  // incoming mass = 1 per column
}

TEST_CASE("reduction of empty axis extent fails") {
    Graph<double> g;
    auto x = g.leaf({2, 0}, {}, true);
    CHECK_THROWS_AS(g.sum(x, 1), Error);
}

TEST_CASE("softmax cross entropy values") {
    Graph<double> g;
    auto uniform = g.constant({1, 4}, seq({0.5, 0.5, 0.5, 0.5}));
    CHECK(g.softmax_cross_entropy(uniform, {2})->data[0] == doctest::Approx(std::log(4.0)));

    // closed form: -log sigmoid(20) evaluated independently
    auto sharp = g.constant({1, 2}, seq({10, -10}));
    const double expect = -std::log(1.0 / (1.0 + std::exp(-20.0)));
    CHECK(g.softmax_cross_entropy(sharp, {0})->data[0] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(g.softmax_cross_entropy(sharp, {0})->data[0] == doctest::Approx(2.061e-9).epsilon(1e-3));

    auto two = g.constant({1, 2}, seq({0, 0}));
    CHECK_THROWS_AS(g.softmax_cross_entropy(two, {2}), Error);
    CHECK_THROWS_AS(g.softmax_cross_entropy(two, {-1}), Error);
}

TEST_CASE("softmax rows sum to one for wild logits") {
    Rng rng(5);
    Graph<double> g;
    std::vector<double> vals(4 * 6);
    for (auto& v : vals) v = rng.uniform(-80.0, 80.0);
    auto p = g.softmax(g.constant({4, 6}, vals));
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 6; ++j) s += p->data[i * 6 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("divergence losses") {
    Graph<double> g;
    auto p = g.constant({2, 2}, seq({0.25, 0.75, 0.6, 0.4}));
    auto q = g.leaf({2, 2}, seq({0.25, 0.75, 0.6, 0.4}), true);
    CHECK(g.kld(p, q)->data[0] == 0.0);  // identical distributions, exactly

    auto a = g.constant({1, 2}, seq({1, 0}));
    auto b = g.constant({1, 2}, seq({0, 1}));
    CHECK(g.mse(a, b)->data[0] == doctest::Approx(1.0));

    std::vector<double> u(10, 0.1);
    CHECK(g.entropy(g.constant({1, 10}, u))->data[0] == doctest::Approx(std::log(10.0)));

    auto bad = g.constant({1, 2}, seq({0.9, 0.3}));
    CHECK_THROWS_AS(g.kld(bad, a), Error);
    CHECK_THROWS_AS(g.entropy(bad), Error);
    CHECK_THROWS_AS(g.mse(bad, a), Error);
}

TEST_CASE("kld is nonnegative on random softmax pairs") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        Graph<double> g;
        std::vector<double> lp(3 * 4), lq(3 * 4);
        for (auto& v : lp) v = rng.uniform(-5.0, 5.0);
        for (auto& v : lq) v = rng.uniform(-5.0, 5.0);
        auto p = g.softmax(g.constant({3, 4}, lp));
        auto q = g.softmax(g.constant({3, 4}, lq));
        CHECK(g.kld(p, q)->data[0] >= 0.0);
        CHECK(g.kld(p, p)->data[0] == 0.0);
    }
}

TEST_CASE("backward basics") {
    Graph<double> g;
    auto x = g.leaf({3}, seq({1, 2, 3}), true);
    auto loss = g.sum_all(x);
    g.backward(loss);
    CHECK(x->grad == std::vector<double>{1, 1, 1});

    // two successive backwards double leaf gradients
    g.backward(loss);
    CHECK(x->grad == std::vector<double>{2, 2, 2});

    auto vec = g.leaf({2}, seq({1, 2}), true);
    CHECK_THROWS_AS(g.backward(vec), Error);
}

TEST_CASE("loss independent of a tensor leaves its grad zero") {
    Graph<double> g;
    auto x = g.leaf({2}, seq({1, 2}), true);
    auto y = g.leaf({2}, seq({3, 4}), true);
    g.backward(g.sum_all(g.mul(x, x)));
    CHECK(y->grad == std::vector<double>{0, 0});
}

TEST_CASE("l2 normalization") {
    auto t = make_tensor<double>({1, 2}, seq({3, 4}));
    auto n = l2_normalized(*t);
    CHECK(n->data[0] == doctest::Approx(0.6));
    CHECK(n->data[1] == doctest::Approx(0.8));

    auto z = make_tensor<double>({1, 2}, seq({0, 0}));
    auto nz = l2_normalized(*z);
    CHECK(nz->data == std::vector<double>{0, 0});

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = fd::random_values(6, rng);
        auto vt = make_tensor<double>({2, 3}, v);
        l2_normalize_rows(*vt);
        CHECK(l2_norm(vt->data.data(), 3) == doctest::Approx(1.0));
        CHECK(l2_norm(vt->data.data() + 3, 3) == doctest::Approx(1.0));
    }
}

TEST_CASE("dropout contract") {
    Rng rng(7);
    Graph<double> g;
    auto x = g.leaf({4}, seq({1, 2, 3, 4}), true);

    // rate 0 is the identity
    auto same = g.dropout(x, 0.0, rng, true);
    CHECK(same.get() == x.get());
    // eval mode is the identity
    CHECK(g.dropout(x, 0.5, rng, false).get() == x.get());

    CHECK_THROWS_AS(make_dropout_mask<double>(4, 1.0, rng), Error);

    // same seed, same mask
    Rng r1(99), r2(99);
    CHECK(make_dropout_mask<double>(64, 0.3, r1) == make_dropout_mask<double>(64, 0.3, r2));

    // Monte-Carlo: E[dropout(x)] == x within 1e-2 relative over 1e5 draws
    Rng mc(123);
    const double rate = 0.3;
    double acc = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        auto mask = make_dropout_mask<double>(1, rate, mc);
        acc += mask[0] * 5.0;
    }
    CHECK(std::abs(acc / draws - 5.0) / 5.0 < 1e-2);
}

TEST_CASE("finite differences agree for every primitive") {
    Rng rng(2024);
    fd::FdReport rep;

    auto run = [&](const fd::LossBuilder& b,
                   std::vector<std::pair<Shape, std::vector<double>>> inputs) {
        auto r = fd::check(b, inputs);
        CHECK(r.max_err < kFdTol);
        rep.checked += r.checked;
    };

    const Shape s34{3, 4};
    auto rv = [&](std::size_t n) { return fd::random_values(n, rng); };

    // unary chains
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.exp_(in[0])); }, {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.tanh_(in[0])); }, {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.sigmoid(in[0])); }, {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.relu(in[0])); }, {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.neg(in[0])); }, {{s34, rv(12)}});
    run([&](Graph<double>& g, auto& in) { return g.sum_all(g.scale(in[0], 1.7)); },
        {{s34, rv(12)}});
    // log on positive inputs
    {
        auto vals = rv(12);
        for (auto& v : vals) v = std::abs(v) + 0.1;
        run([](Graph<double>& g, auto& in) { return g.sum_all(g.log_(in[0])); }, {{s34, vals}});
    }

    // binary
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.mul(in[0], in[1])); },
        {{s34, rv(12)}, {s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.sub(in[0], in[1])); },
        {{s34, rv(12)}, {s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.maximum(in[0], in[1])); },
        {{s34, rv(12)}, {s34, rv(12)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.mul(g.add(in[0], in[1]), in[1]));
        },
        {{s34, rv(12)}, {s34, rv(12)}});

    // matmul and bias
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.tanh_(g.matmul(in[0], in[1]))); },
        {{{3, 5}, rv(15)}, {{5, 2}, rv(10)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.add_bias(in[0], in[1])); },
        {{s34, rv(12)}, {{4}, rv(4)}});

    // shape ops
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.mul(g.reshape(in[0], {2, 6}), g.reshape(in[0], {2, 6})));
        },
        {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.concat_cols(in[0], in[1])); },
        {{{3, 2}, rv(6)}, {{3, 3}, rv(9)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.mul(g.slice_cols(in[0], 1, 3), g.slice_cols(in[0], 0, 2)));
        },
        {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.mul(g.slice_time(in[0], 1), g.slice_time(in[0], 0)));
        },
        {{{2, 3, 2}, rv(12)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.stack_time({in[0], in[1], in[0]}));
        },
        {{{2, 3}, rv(6)}, {{2, 3}, rv(6)}});

    // reductions; square the max input so ties are impossible and the loss
    // is curved through each routed element
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.sum(in[0], 1)); },
        {{{2, 3, 2}, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.mean(in[0], 1)); },
        {{{2, 3, 2}, rv(12)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.max(g.mul(in[0], in[0]), 1).value);
        },
        {{{2, 3, 2}, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.masked_mean_time(in[0], {2, 3})); },
        {{{2, 3, 2}, rv(12)}});

    // row-wise ops
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.mul(g.blend_rows(in[0], in[1], {1.0, 0.0, 1.0}), in[0]));
        },
        {{{3, 2}, rv(6)}, {{3, 2}, rv(6)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.scale_rows(in[0], {0.5, 2.0, 1.0}));
        },
        {{{3, 2}, rv(6)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.apply_mask(in[0], {1.25, 0.0, 1.25, 1.25, 0.0, 1.25}));
        },
        {{{3, 2}, rv(6)}});
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.add_constant(in[0], {1, 2, 3, 4, 5, 6}));
        },
        {{{3, 2}, rv(6)}});

    // lookup: embeddings gather
    run([](Graph<double>& g, auto& in) {
            return g.sum_all(g.mul(g.lookup(in[0], {0, 2, 1, 1}, 2, 2),
                                   g.lookup(in[0], {1, 0, 2, 0}, 2, 2)));
        },
        {{{3, 2}, rv(6)}});

    // im2col windows (squared so every routed element is curved)
    run([](Graph<double>& g, auto& in) {
            auto cols = g.im2col_time(in[0], 3, 2, 1);
            return g.sum_all(g.mul(cols, cols));
        },
        {{{2, 5, 2}, rv(20)}});

    // probability losses, driven through softmax so inputs stay on the simplex
    run([](Graph<double>& g, auto& in) {
            return g.softmax_cross_entropy(in[0], {1, 0, 3});
        },
        {{s34, rv(12)}});
    // kld detaches its first argument, so only the second is a leaf here
    {
        auto pvals = rv(12);
        run([pvals](Graph<double>& g, auto& in) {
                return g.kld(g.softmax(g.constant({3, 4}, pvals)), g.softmax(in[0]));
            },
            {{s34, rv(12)}});
    }
    run([](Graph<double>& g, auto& in) {
            return g.mse(g.softmax(in[0]), g.softmax(in[1]));
        },
        {{s34, rv(12)}, {s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.entropy(g.softmax(in[0])); },
        {{s34, rv(12)}});
    run([](Graph<double>& g, auto& in) { return g.sum_all(g.softmax(in[0])); }, {{s34, rv(12)}});

    CHECK(rep.checked > 300);  // every element of every input was exercised
}

TEST_CASE("kld gradient flows only through the second argument") {
    Rng rng(31);
    Graph<double> g;
    auto lp = fd::random_values(8, rng);
    auto lq = fd::random_values(8, rng);
    auto p_logits = g.leaf({2, 4}, lp, true);
    auto q_logits = g.leaf({2, 4}, lq, true);
    auto loss = g.kld(g.softmax(p_logits), g.softmax(q_logits));
    g.backward(loss);
    for (double v : p_logits->grad) CHECK(v == 0.0);
    double qmass = 0.0;
    for (double v : q_logits->grad) qmass += std::abs(v);
    CHECK(qmass > 0.0);
}

TEST_CASE("masked mean is exactly permutation invariant") {
    Rng rng(41);
    auto vals = fd::random_values(5 * 3, rng);
    std::vector<double> permuted = vals;
    // swap timesteps 0 and 3 (both within length 4)
    for (int j = 0; j < 3; ++j) std::swap(permuted[0 * 3 + j], permuted[3 * 3 + j]);

    Graph<double> g(false);
    auto a = g.masked_mean_time(g.constant({1, 5, 3}, vals), {4});
    auto b = g.masked_mean_time(g.constant({1, 5, 3}, permuted), {4});
    CHECK(a->data == b->data);  // bitwise
}
