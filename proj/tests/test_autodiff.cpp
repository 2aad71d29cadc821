#include <doctest.h>

#include "leansplat/ops.hpp"
#include "support/gradcheck.hpp"

using namespace leansplat;
using namespace leansplat::testing;

TEST_SUITE_BEGIN("adcore");

TEST_CASE("backward: sum of squares") {
    Array x = Array::from({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Array loss = ops::sum_all(ops::mul(x, x));
        tape.backward(loss);
    }
    Array g = tape.grad(x);
    CHECK(g.to_vector() == std::vector<double>{2, 4});
}

TEST_CASE("backward: constant loss gives zero grads") {
    Array x = Array::from({3}, {1, 2, 3}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Array loss = ops::mul_scalar(ops::sum_all(x), 0.0);
        tape.backward(loss);
    }
    CHECK(tape.grad(x).to_vector() == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward: errors") {
    Array x = Array::from({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Array y = ops::mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), NumericError);  // non-scalar loss
    Array loss = ops::sum_all(y);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), NumericError);  // double backward
    tape.reset();
    CHECK_THROWS_AS(tape.backward(loss), NumericError);  // empty tape
}

TEST_CASE("backward: grad shape matches every leaf") {
    Rng rng(3);
    Array a = random_array({3, 4}, rng).set_requires_grad(true);
    Array b = random_array({4}, rng).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Array loss = ops::mean_all(ops::add(a, b));
        tape.backward(loss);
    }
    CHECK(tape.grad(a).shape() == a.shape());
    CHECK(tape.grad(b).shape() == b.shape());
}

TEST_CASE("chained sigmoid-matmul gradient vs finite differences") {
    Rng rng(5);
    Array w1 = random_array({4, 4}, rng, 0.7);
    Array w2 = random_array({4, 2}, rng, 0.7);
    Array x = random_array({3, 4}, rng);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array h = ops::sigmoid(ops::matmul(ls[2], ls[0]));
            Array y = ops::sigmoid(ops::matmul(h, ls[1]));
            return ops::mean_all(ops::mul(y, y));
        },
        {w1, w2, x});
    CHECK(err < 1e-4);
}

TEST_CASE("no_grad suppresses recording") {
    Array x = Array::from({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    {
        NoGradGuard ng;
        Array y = ops::mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.size() == 0);
}

TEST_SUITE_END();
