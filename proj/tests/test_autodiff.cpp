#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lab/optim.hpp"
#include "lab/tensor.hpp"

using namespace lab;

namespace {

Tensor rand_leaf(Tape& tape, std::vector<size_t> shape, Rng& rng, bool rg = true) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return Tensor::leaf(tape, std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("relu values and subgradient convention") {
    Tape tape;
    Tensor x = Tensor::leaf(tape, {2}, {-1.5, 2.0}, true);
    Tensor y = relu(x);
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == 2.0);

    Tensor z = relu(Tensor::leaf(tape, {1}, {0.0}, false));
    CHECK(z.values()[0] == 0.0);

    Tensor nn = Tensor::leaf(tape, {3}, {0.0, 1.0, 7.5}, false);
    Tensor yn = relu(nn);
    CHECK(yn.values() == nn.values());

    // gradient: 1 where > 0, 0 at 0 and below
    Tensor x2 = Tensor::leaf(tape, {3}, {-1.0, 0.0, 3.0}, true);
    tape.backward(sum(relu(x2)));
    CHECK(x2.grad()[0] == 0.0);
    CHECK(x2.grad()[1] == 0.0);
    CHECK(x2.grad()[2] == 1.0);
}

TEST_CASE("affine known values") {
    Tape tape;
    Tensor I = Tensor::leaf(tape, {2, 2}, {1, 0, 0, 1}, false);
    Tensor b0 = Tensor::leaf(tape, {2}, {0, 0}, false);
    Tensor x = Tensor::leaf(tape, {2}, {3, -1}, false);
    auto y = affine(I, x, b0);
    CHECK(y.values()[0] == 3.0);
    CHECK(y.values()[1] == -1.0);

    Tensor Wsum = Tensor::leaf(tape, {1, 2}, {1, 1}, false);
    Tensor b1 = Tensor::leaf(tape, {1}, {0}, false);
    Tensor x2 = Tensor::leaf(tape, {2}, {2, 5}, false);
    CHECK(affine(Wsum, x2, b1).values()[0] == 7.0);

    CHECK_THROWS_AS(affine(Wsum, Tensor::leaf(tape, {3}, {1, 2, 3}, false), b1), Error);
}

TEST_CASE("affine gradient vs finite differences") {
    Tape tape;
    Rng rng(11);
    Tensor W = rand_leaf(tape, {4, 3}, rng);
    Tensor b = rand_leaf(tape, {4}, rng);
    Tensor x = rand_leaf(tape, {5, 3}, rng);
    auto res = gradcheck::compare(tape, {W, b, x},
                                  [&]() { return sum(mul(affine(W, x, b), affine(W, x, b))); });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax cross entropy") {
    Tape tape;
    Tensor uniform = Tensor::leaf(tape, {5}, std::vector<double>(5, 0.7), false);
    CHECK(softmax_cross_entropy(uniform, 2).item() == doctest::Approx(std::log(5.0)));

    Tensor big = Tensor::leaf(tape, {2}, {1000.0, 0.0}, false);
    double l = softmax_cross_entropy(big, 0).item();
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(softmax_cross_entropy(big, 2), Error);
    CHECK_THROWS_AS(softmax_cross_entropy(big, -1), Error);

    Rng rng(7);
    Tensor logits = rand_leaf(tape, {6}, rng);
    auto res =
        gradcheck::compare(tape, {logits}, [&]() { return softmax_cross_entropy(logits, 3); });
    CHECK(res.max_rel_err < 1e-6);

    // batched with ignored rows
    Tensor batch = rand_leaf(tape, {4, 5}, rng);
    std::vector<int> targets{1, -1, 4, 0};
    auto res2 =
        gradcheck::compare(tape, {batch}, [&]() { return softmax_cross_entropy(batch, targets); });
    CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("mse") {
    Tape tape;
    Tensor a = Tensor::leaf(tape, {3}, {1, 2, 3}, false);
    CHECK(mse(a, a).item() == 0.0);

    Tensor p = Tensor::leaf(tape, {2}, {1, 3}, false);
    Tensor t0 = Tensor::leaf(tape, {2}, {0, 0}, false);
    CHECK(mse(p, t0).item() == doctest::Approx(5.0));

    CHECK_THROWS_AS(mse(p, a), Error);

    Rng rng(3);
    Tensor pred = rand_leaf(tape, {7}, rng);
    Tensor target = rand_leaf(tape, {7}, rng);
    auto res = gradcheck::compare(tape, {pred, target}, [&]() { return mse(pred, target); });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("backward basics") {
    Tape tape;
    Tensor x = Tensor::leaf(tape, {5}, {1, 2, 3, 4, 5}, true);
    Tensor loss = sum(x);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);

    // second backward without reset accumulates
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 2.0);

    CHECK_THROWS_AS(tape.backward(x), Error);  // non-scalar loss
}

TEST_CASE("composite loss gradient matches finite differences") {
    Tape tape;
    Rng rng(42);
    Tensor W = rand_leaf(tape, {4, 3}, rng);
    Tensor b = rand_leaf(tape, {4}, rng);
    Tensor x = rand_leaf(tape, {3}, rng);
    Tensor y = rand_leaf(tape, {4}, rng, false);
    auto res = gradcheck::compare(tape, {W, b, x},
                                  [&]() { return mse(relu(affine(W, x, b)), y); });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("elementwise and reduction gradients") {
    Tape tape;
    Rng rng(5);
    Tensor a = rand_leaf(tape, {6}, rng);
    Tensor b = rand_leaf(tape, {6}, rng);
    auto res = gradcheck::compare(tape, {a, b}, [&]() {
        return mean(mul(add(a, b), sub(a, scale(b, 0.3))));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("matmul gradient") {
    Tape tape;
    Rng rng(9);
    Tensor A = rand_leaf(tape, {3, 4}, rng);
    Tensor B = rand_leaf(tape, {4, 2}, rng);
    auto res = gradcheck::compare(tape, {A, B}, [&]() { return sum(matmul(A, B)); });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("layer norm gradient") {
    Tape tape;
    Rng rng(13);
    Tensor x = rand_leaf(tape, {3, 8}, rng);
    Tensor g = rand_leaf(tape, {8}, rng);
    Tensor b = rand_leaf(tape, {8}, rng);
    auto res = gradcheck::compare(tape, {x, g, b}, [&]() {
        return mse(layer_norm(x, g, b),
                   Tensor::zeros(tape, {3, 8}, false));
    });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("embedding, positional, select_rows gradients") {
    Tape tape;
    Rng rng(21);
    Tensor table = rand_leaf(tape, {5, 4}, rng);
    Tensor pos = rand_leaf(tape, {3, 4}, rng);
    std::vector<int> ids{0, 3, 3, 1, 2, 4};
    std::vector<size_t> rows{1, 4};
    auto res = gradcheck::compare(tape, {table, pos}, [&]() {
        Tensor e = add_positional(embedding(table, ids), pos, 3);
        return sum(mul(select_rows(e, rows), select_rows(e, rows)));
    });
    CHECK(res.max_rel_err < 1e-6);

    CHECK_THROWS_AS(embedding(table, std::vector<int>{5}), Error);
}

TEST_CASE("multihead attention gradient, causal and not") {
    Tape tape;
    Rng rng(31);
    for (bool causal : {false, true}) {
        Tensor q = rand_leaf(tape, {8, 6}, rng);  // 2 sequences of length 4, 2 heads of dim 3
        Tensor k = rand_leaf(tape, {8, 6}, rng);
        Tensor v = rand_leaf(tape, {8, 6}, rng);
        auto res = gradcheck::compare(tape, {q, k, v}, [&]() {
            Tensor o = multihead_attention(q, k, v, 2, 4, causal);
            return sum(mul(o, o));
        });
        CHECK(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("causal attention ignores future positions") {
    Tape tape;
    Rng rng(77);
    Tensor q = rand_leaf(tape, {4, 4}, rng, false);
    Tensor k = rand_leaf(tape, {4, 4}, rng, false);
    Tensor v = rand_leaf(tape, {4, 4}, rng, false);
    Tensor o1 = multihead_attention(q, k, v, 2, 4, true);
    std::vector<double> row0(o1.values().begin(), o1.values().begin() + 4);
    // perturb the last position's k/v; position 0 output must not move
    k.values()[3 * 4 + 1] += 5.0;
    v.values()[3 * 4 + 2] -= 3.0;
    Tensor o2 = multihead_attention(q, k, v, 2, 4, true);
    for (size_t c = 0; c < 4; ++c) CHECK(o2.values()[c] == row0[c]);
}

TEST_CASE("adam fixed point and degenerate moments") {
    Tape tape;
    // zero gradients, wd = 0 -> unchanged
    Tensor p = Tensor::leaf(tape, {3}, {1.0, -2.0, 0.5}, true);
    p.zero_grad();
    AdamConfig cfg;
    Adam opt({p}, cfg);
    opt.step();
    CHECK(p.values()[0] == 1.0);
    CHECK(p.values()[1] == -2.0);
    CHECK(p.values()[2] == 0.5);

    // beta1 = beta2 = 0: step is lr * sign(g) * |g| / (|g| + eps)
    Tensor q = Tensor::leaf(tape, {1}, {0.7}, true);
    q.grad()[0] = 0.2;
    AdamConfig cfg2;
    cfg2.beta1 = 0.0;
    cfg2.beta2 = 0.0;
    cfg2.learning_rate = 0.1;
    Adam opt2({q}, cfg2);
    opt2.step();
    CHECK(q.values()[0] == doctest::Approx(0.7 - 0.1 * 0.2 / (0.2 + 1e-8)));

    // pure decoupled decay: wd = 0.1, lr = 0.01, grad = 0 -> scale by 1 - 0.001
    Tensor r = Tensor::leaf(tape, {1}, {2.0}, true);
    r.zero_grad();
    AdamConfig cfg3;
    cfg3.learning_rate = 0.01;
    cfg3.weight_decay = 0.1;
    Adam opt3({r}, cfg3);
    opt3.step();
    CHECK(r.values()[0] == doctest::Approx(2.0 * (1.0 - 0.001)));

    // missing gradient is a contract error
    Tensor s = Tensor::leaf(tape, {2}, {1.0, 1.0}, true);
    Adam opt4({s}, cfg);
    CHECK_THROWS_AS(opt4.step(), Error);
}

TEST_CASE("per-op random gradients stay under 1e-5 relative error") {
    // the module-level invariant: random inputs in [-2, 2], h = 1e-6
    Tape tape;
    Rng rng(101);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor x = rand_leaf(tape, {9}, rng);
        auto r1 = gradcheck::compare(tape, {x}, [&]() { return sum(relu(x)); });
        CHECK(r1.max_rel_err < 1e-5);

        Tensor l = rand_leaf(tape, {4, 6}, rng);
        std::vector<int> tg{0, 5, 2, 3};
        auto r2 = gradcheck::compare(tape, {l}, [&]() { return softmax_cross_entropy(l, tg); });
        CHECK(r2.max_rel_err < 1e-5);
    }
}

TEST_CASE("tape replay determinism") {
    auto run = [](uint64_t seed) {
        Tape tape;
        Rng rng(seed);
        Tensor W = rand_leaf(tape, {8, 4}, rng);
        Tensor b = rand_leaf(tape, {8}, rng);
        Tensor x = rand_leaf(tape, {16, 4}, rng, false);
        Tensor y = rand_leaf(tape, {16, 8}, rng, false);
        Adam opt({W, b}, AdamConfig{});
        double last = 0.0;
        for (int i = 0; i < 5; ++i) {
            tape.reset();
            Tensor loss = mse(relu(affine(W, x, b)), y);
            tape.backward(loss);
            opt.step();
            last = loss.item();
        }
        return last;
    };
    CHECK(run(123) == run(123));  // bit-identical
    CHECK(run(123) != run(124));
}
