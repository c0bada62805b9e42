#include <cmath>
#include <vector>

#include "crystal/ops.hpp"
#include "crystal/rng.hpp"
#include "crystal/tensor.hpp"
#include "doctest.h"
#include "support/finite_diff.hpp"

using namespace crystal;
using testing::finite_diff_grad;
using testing::max_rel_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (int64_t i = 0; i < t.size(); ++i) t.at(static_cast<int>(i)) = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shape and data invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(eye, a);
    for (int i = 0; i < 4; ++i) CHECK(c.at(i) == a.at(i));

    Tensor row({1, 2}, {1, 2});
    Tensor col({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == doctest::Approx(11.0).epsilon(1e-15));

    CHECK_THROWS_AS(matmul(row, row), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng, true);
    Tensor b = random_tensor({4, 5}, rng, true);

    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = sum(matmul(a, b));
    }
    g.backward(loss);

    auto fd_a = finite_diff_grad(a, [&] { return sum(matmul(a, b)).item(); });
    auto fd_b = finite_diff_grad(b, [&] { return sum(matmul(a, b)).item(); });
    CHECK(max_rel_err(a.grad(), fd_a) < 1e-4);
    CHECK(max_rel_err(b.grad(), fd_b) < 1e-4);
}

TEST_CASE("softmax values") {
    Tensor x({3}, {0, 0, 0});
    Tensor s = softmax(x, 0);
    for (int i = 0; i < 3; ++i) CHECK(s.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Tensor y({2}, {std::log(2.0), 0.0});
    Tensor sy = softmax(y, 0);
    CHECK(sy.at(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(sy.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Tensor bad({2}, {std::numeric_limits<double>::quiet_NaN(), 0.0});
    CHECK_THROWS_AS(softmax(bad, 0), NumericError);
    CHECK_THROWS_AS(softmax(x, 2), DimensionError);
}

TEST_CASE("softmax rows sum to one and stay nonnegative") {
    Rng rng(11);
    Tensor x = random_tensor({6, 9}, rng);
    for (int64_t i = 0; i < x.size(); ++i) x.at(static_cast<int>(i)) *= 40.0;  // stress stability
    Tensor s = softmax(x, 1);
    for (int i = 0; i < 6; ++i) {
        double row = 0.0;
        for (int j = 0; j < 9; ++j) {
            CHECK(s.at(i, j) >= 0.0);
            row += s.at(i, j);
        }
        CHECK(std::abs(row - 1.0) < 1e-9);
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(13);
    Tensor x = random_tensor({3, 5}, rng, true);
    Tensor w = random_tensor({3, 5}, rng);  // fixed projection to a scalar

    auto loss_value = [&] { return sum(mul(softmax(x, 1), w)).item(); };
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = sum(mul(softmax(x, 1), w));
    }
    g.backward(loss);
    CHECK(max_rel_err(x.grad(), finite_diff_grad(x, loss_value)) < 1e-4);

    // axis 0 as well
    Graph g2;
    x.zero_grad();
    {
        Graph::Scope scope(g2);
        loss = sum(mul(softmax(x, 0), w));
    }
    g2.backward(loss);
    auto fd = finite_diff_grad(x, [&] { return sum(mul(softmax(x, 0), w)).item(); });
    CHECK(max_rel_err(x.grad(), fd) < 1e-4);
}

TEST_CASE("layernorm limits") {
    Tensor gain({3}, {1, 1, 1});
    Tensor bias({3}, {0, 0, 0});
    Tensor constant_row({1, 3}, {5, 5, 5});
    Tensor out = layernorm(constant_row, gain, bias);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(out.at(0, j)) < 1e-9);

    Tensor pair_gain({2}, {1, 1});
    Tensor pair_bias({2}, {0, 0});
    Tensor pm({1, 2}, {1, -1});
    Tensor pm_out = layernorm(pm, pair_gain, pair_bias);
    CHECK(pm_out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(pm_out.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));

    CHECK_THROWS_AS(layernorm(pm, gain, bias), DimensionError);
}

TEST_CASE("layernorm gradient matches finite differences") {
    Rng rng(17);
    Tensor x = random_tensor({4, 6}, rng, true);
    Tensor gain = random_tensor({6}, rng, true);
    Tensor bias = random_tensor({6}, rng, true);
    Tensor w = random_tensor({4, 6}, rng);

    auto loss_value = [&] { return sum(mul(layernorm(x, gain, bias), w)).item(); };
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = sum(mul(layernorm(x, gain, bias), w));
    }
    g.backward(loss);
    CHECK(max_rel_err(x.grad(), finite_diff_grad(x, loss_value)) < 1e-4);
    CHECK(max_rel_err(gain.grad(), finite_diff_grad(gain, loss_value)) < 1e-4);
    CHECK(max_rel_err(bias.grad(), finite_diff_grad(bias, loss_value)) < 1e-4);
}

TEST_CASE("cross_entropy values") {
    Tensor uniform({1, 2}, {0, 0});
    CHECK(cross_entropy(uniform, {{0, 0}}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // direct evaluation oracle for a confidently correct prediction
    Tensor confident({1, 2}, {10, -10});
    const double direct = -std::log(std::exp(10.0) / (std::exp(10.0) + std::exp(-10.0)));
    const double got = cross_entropy(confident, {{0, 0}}).item();
    CHECK(got == doctest::Approx(direct).epsilon(1e-6));
    CHECK(got == doctest::Approx(2.0611536181902037e-9).epsilon(1e-6));

    CHECK_THROWS_AS(cross_entropy(uniform, {}), ContractViolation);
    CHECK_THROWS_AS(cross_entropy(uniform, {{5, 0}}), ContractViolation);
    CHECK_THROWS_AS(cross_entropy(uniform, {{0, 9}}), ContractViolation);
}

TEST_CASE("cross_entropy gradient is softmax minus one-hot") {
    Rng rng(19);
    Tensor logits = random_tensor({4, 7}, rng, true);
    const std::vector<std::pair<int, int>> labels = {{1, 3}, {2, 0}};

    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = cross_entropy(logits, labels);
    }
    g.backward(loss);

    Tensor probs = softmax(logits, 1);
    for (const auto& [pos, id] : labels) {
        for (int j = 0; j < 7; ++j) {
            const double expected = (probs.at(pos, j) - (j == id ? 1.0 : 0.0)) / 2.0;
            CHECK(logits.grad()[static_cast<size_t>(pos) * 7 + j] == doctest::Approx(expected).epsilon(1e-10));
        }
    }
    // unlabeled rows contribute nothing
    for (int j = 0; j < 7; ++j) {
        CHECK(logits.grad()[j] == 0.0);
        CHECK(logits.grad()[3 * 7 + j] == 0.0);
    }

    auto fd = finite_diff_grad(logits, [&] { return cross_entropy(logits, labels).item(); });
    CHECK(max_rel_err(logits.grad(), fd) < 1e-4);
}

TEST_CASE("kl_divergence values") {
    auto direct_kl = [](const std::vector<double>& p, const std::vector<double>& q) {
        double s = 0.0;
        for (size_t i = 0; i < p.size(); ++i)
            if (p[i] > 0.0) s += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
        return s;
    };

    Tensor same({2}, {0.3, 0.7});
    CHECK(kl_divergence(same, same).item() == 0.0);

    Tensor p({2}, {0.5, 0.5});
    Tensor q({2}, {0.9, 0.1});
    CHECK(kl_divergence(p, q).item() == doctest::Approx(direct_kl({0.5, 0.5}, {0.9, 0.1})).epsilon(1e-12));
    CHECK(kl_divergence(p, q).item() == doctest::Approx(0.5108256237659907).epsilon(1e-12));

    Tensor onehot({2}, {1.0, 0.0});
    Tensor half({2}, {0.5, 0.5});
    CHECK(kl_divergence(onehot, half).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor not_dist({2}, {0.6, 0.6});
    CHECK_THROWS_AS(kl_divergence(not_dist, half), ContractViolation);
    CHECK_THROWS_AS(kl_divergence(half, not_dist), ContractViolation);
}

TEST_CASE("kl_divergence gradient flows into q only") {
    Rng rng(23);
    Tensor pl = random_tensor({5}, rng, true);
    Tensor ql = random_tensor({5}, rng, true);

    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = kl_divergence(softmax(pl, 0), softmax(ql, 0));
    }
    g.backward(loss);

    // teacher side constant: every p-logit gradient is exactly zero
    for (double gv : pl.grad()) CHECK(gv == 0.0);

    auto fd = finite_diff_grad(ql, [&] { return kl_divergence(softmax(pl, 0), softmax(ql, 0)).item(); });
    CHECK(max_rel_err(ql.grad(), fd) < 1e-4);
}

TEST_CASE("backward on linear and quadratic forms") {
    Tensor x({3}, {1, 2, 3}, true);
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = sum(x);
    }
    g.backward(loss);
    for (double v : x.grad()) CHECK(v == 1.0);

    Tensor y({2}, {1, 2}, true);
    Graph g2;
    {
        Graph::Scope scope(g2);
        loss = sum(mul(y, y));
    }
    g2.backward(loss);
    CHECK(y.grad()[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(y.grad()[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("backward contracts") {
    Tensor x({2}, {1, 2}, true);
    Graph g;
    Tensor vec;
    {
        Graph::Scope scope(g);
        vec = mul(x, x);
    }
    CHECK_THROWS_AS(g.backward(vec), ContractViolation);  // non-scalar

    Tensor off_graph = Tensor::scalar(1.0);
    CHECK_THROWS_AS(g.backward(off_graph), ContractViolation);
}

TEST_CASE("shared subexpressions accumulate additively") {
    Rng rng(29);
    Tensor x = random_tensor({4}, rng, true);

    Graph g1;
    Tensor single;
    {
        Graph::Scope scope(g1);
        single = sum(mul(x, x));
    }
    g1.backward(single);
    std::vector<double> single_grad = x.grad();

    x.zero_grad();
    Graph g2;
    Tensor doubled;
    {
        Graph::Scope scope(g2);
        Tensor branch = mul(x, x);
        doubled = add(sum(branch), sum(branch));
    }
    g2.backward(doubled);
    for (size_t i = 0; i < single_grad.size(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0 * single_grad[i]).epsilon(1e-12));
}

TEST_CASE("repeated backward accumulates on leaves") {
    Tensor x({3}, {1, 2, 3}, true);
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = sum(mul(x, x));
    }
    g.backward(loss);
    std::vector<double> once = x.grad();
    g.backward(loss);
    for (size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
}

TEST_CASE("composite two-layer model matches finite differences on every parameter") {
    Rng rng(31);
    Tensor input = random_tensor({2, 4}, rng);
    Tensor w1 = random_tensor({4, 3}, rng, true);
    Tensor b1 = random_tensor({3}, rng, true);
    Tensor w2 = random_tensor({3, 2}, rng, true);
    Tensor b2 = random_tensor({2}, rng, true);

    auto forward = [&] {
        Tensor h = gelu(add_bias_rows(matmul(input, w1), b1));
        Tensor y = add_bias_rows(matmul(h, w2), b2);
        return sum(mul(y, y));
    };

    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = forward();
    }
    g.backward(loss);

    auto loss_value = [&] { return forward().item(); };
    CHECK(max_rel_err(w1.grad(), finite_diff_grad(w1, loss_value)) < 1e-4);
    CHECK(max_rel_err(b1.grad(), finite_diff_grad(b1, loss_value)) < 1e-4);
    CHECK(max_rel_err(w2.grad(), finite_diff_grad(w2, loss_value)) < 1e-4);
    CHECK(max_rel_err(b2.grad(), finite_diff_grad(b2, loss_value)) < 1e-4);
}

TEST_CASE("structural ops round gradients through slices") {
    Rng rng(37);
    Tensor x = random_tensor({5, 4}, rng, true);
    Tensor v = random_tensor({2, 4}, rng, true);
    Tensor w = random_tensor({5, 4}, rng);

    auto forward = [&] { return sum(mul(replace_rows(x, 1, v), w)); };
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = forward();
    }
    g.backward(loss);
    auto loss_value = [&] { return forward().item(); };
    CHECK(max_rel_err(x.grad(), finite_diff_grad(x, loss_value)) < 1e-4);
    CHECK(max_rel_err(v.grad(), finite_diff_grad(v, loss_value)) < 1e-4);
    // replaced rows receive no gradient through x
    for (int j = 0; j < 4; ++j) {
        CHECK(x.grad()[4 + j] == 0.0);
        CHECK(x.grad()[8 + j] == 0.0);
    }

    Tensor table = random_tensor({6, 3}, rng, true);
    std::vector<int> ids = {2, 2, 5};  // duplicate gathers accumulate
    auto gather_loss = [&] { return sum(gather_rows(table, ids)); };
    Graph g2;
    {
        Graph::Scope scope(g2);
        loss = gather_loss();
    }
    g2.backward(loss);
    for (int j = 0; j < 3; ++j) {
        CHECK(table.grad()[2 * 3 + j] == 2.0);
        CHECK(table.grad()[5 * 3 + j] == 1.0);
        CHECK(table.grad()[j] == 0.0);
    }
    CHECK_THROWS_AS(gather_rows(table, {6}), DimensionError);
}

TEST_CASE("concat and slice are mutually inverse in gradient flow") {
    Rng rng(41);
    Tensor a = random_tensor({3, 2}, rng, true);
    Tensor b = random_tensor({3, 5}, rng, true);
    Tensor w = random_tensor({3, 7}, rng);

    auto forward = [&] { return sum(mul(concat_cols({a, b}), w)); };
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = forward();
    }
    g.backward(loss);
    CHECK(max_rel_err(a.grad(), finite_diff_grad(a, [&] { return forward().item(); })) < 1e-4);
    CHECK(max_rel_err(b.grad(), finite_diff_grad(b, [&] { return forward().item(); })) < 1e-4);

    Tensor sliced = slice_cols(concat_cols({a, b}), 2, 7);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) CHECK(sliced.at(i, j) == b.at(i, j));
}

TEST_CASE("causal softmax zeroes the upper triangle") {
    Rng rng(43);
    Tensor scores = random_tensor({6, 6}, rng, true);
    Tensor w = random_tensor({6, 6}, rng);

    Tensor probs = causal_softmax(scores);
    for (int i = 0; i < 6; ++i) {
        double row = 0.0;
        for (int j = 0; j < 6; ++j) {
            if (j > i) CHECK(probs.at(i, j) == 0.0);
            row += probs.at(i, j);
        }
        CHECK(std::abs(row - 1.0) < 1e-9);
    }

    auto forward = [&] { return sum(mul(causal_softmax(scores), w)); };
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = forward();
    }
    g.backward(loss);
    CHECK(max_rel_err(scores.grad(), finite_diff_grad(scores, [&] { return forward().item(); })) < 1e-4);
}

TEST_CASE("renorm_rows floors and renormalizes") {
    Tensor x({1, 2}, {0.3, 0.1});
    Tensor y = renorm_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(47);
    Tensor z = Tensor({2, 4}, 0.0, true);
    for (int i = 0; i < 8; ++i) z.at(i) = rng.uniform(0.05, 1.0);
    Tensor w = random_tensor({2, 4}, rng);
    auto forward = [&] { return sum(mul(renorm_rows(z), w)); };
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        loss = forward();
    }
    g.backward(loss);
    CHECK(max_rel_err(z.grad(), finite_diff_grad(z, [&] { return forward().item(); })) < 1e-4);
}

TEST_CASE("operations are bitwise deterministic") {
    Rng rng(53);
    Tensor a = random_tensor({7, 9}, rng);
    Tensor b = random_tensor({9, 5}, rng);
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    for (int64_t i = 0; i < c1.size(); ++i) CHECK(c1.at(static_cast<int>(i)) == c2.at(static_cast<int>(i)));

    Tensor s1 = softmax(a, 1);
    Tensor s2 = softmax(a, 1);
    for (int64_t i = 0; i < s1.size(); ++i) CHECK(s1.at(static_cast<int>(i)) == s2.at(static_cast<int>(i)));
}

TEST_CASE("detach cuts the graph") {
    Tensor x({2}, {1.0, 2.0}, true);
    Graph g;
    Tensor loss;
    {
        Graph::Scope scope(g);
        Tensor d = mul(x, x).detach();
        loss = sum(mul(d, x));
    }
    g.backward(loss);
    // d treated as constant: d(loss)/dx = d = x*x
    CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

}  // TEST_SUITE
