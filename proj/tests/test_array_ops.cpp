#include <doctest.h>

#include <cmath>

#include "leansplat/ops.hpp"
#include "leansplat/threading.hpp"
#include "support/gradcheck.hpp"

using namespace leansplat;
using namespace leansplat::testing;

TEST_SUITE_BEGIN("adcore");

TEST_CASE("elementwise basics") {
    Array a = Array::from({2}, {1, 2});
    Array b = Array::from({2}, {3, 4});
    Array s = ops::add(a, b);
    CHECK(s.value_at(0) == 4.0);
    CHECK(s.value_at(1) == 6.0);

    CHECK(ops::sigmoid(Array::from({1}, {0})).value_at(0) == doctest::Approx(0.5));
    CHECK(ops::softplus(Array::from({1}, {0})).value_at(0) == doctest::Approx(std::log(2.0)));
    CHECK(ops::tanh(Array::from({1}, {0})).value_at(0) == doctest::Approx(0.0));
    CHECK(ops::clamp_min(Array::from({3}, {-1, 0.5, 2}), 0.0).to_vector() ==
          std::vector<double>{0, 0.5, 2});
}

TEST_CASE("non-finite forward output raises") {
    Array a = Array::from({1}, {1.0});
    Array z = Array::from({1}, {0.0});
    CHECK_THROWS_AS(ops::div(a, z), NumericError);
    CHECK_THROWS_AS(ops::exp(Array::from({1}, {1e4})), NumericError);
}

TEST_CASE("trailing-dimension broadcasting") {
    // [2,3] + [3]
    Array a = Array::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Array b = Array::from({3}, {10, 20, 30});
    Array c = ops::add(a, b);
    CHECK(c.shape() == std::vector<int64_t>{2, 3});
    CHECK(c.to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});

    // [2,1] * [2,3]
    Array d = Array::from({2, 1}, {2, 3});
    Array e = ops::mul(d, a);
    CHECK(e.to_vector() == std::vector<double>{2, 4, 6, 12, 15, 18});

    // incompatible
    CHECK_THROWS_AS(ops::add(Array::zeros({2, 3}), Array::zeros({2, 2})), NumericError);
}

TEST_CASE("broadcast shape property") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        // Random pair of broadcast-compatible shapes.
        int rank = 1 + static_cast<int>(rng.randint(3));
        std::vector<int64_t> sa, sb, expect;
        for (int d = 0; d < rank; ++d) {
            int64_t dim = 1 + rng.randint(4);
            bool a1 = rng.uniform() < 0.3, b1 = rng.uniform() < 0.3;
            sa.push_back(a1 ? 1 : dim);
            sb.push_back(b1 ? 1 : dim);
            expect.push_back((a1 && b1) ? 1 : dim);
        }
        Array a = random_array(sa, rng);
        Array b = random_array(sb, rng);
        Array c = ops::add(a, b);
        CHECK(c.shape() == expect);
        // Spot-check one element against manual indexing.
        CHECK(c.value_at(0) == doctest::Approx(a.value_at(0) + b.value_at(0)));
    }
}

TEST_CASE("matmul identities") {
    Array eye = Array::from({2, 2}, {1, 0, 0, 1});
    Array m = Array::from({2, 2}, {1, 2, 3, 4});
    CHECK(ops::matmul(eye, m).to_vector() == std::vector<double>{1, 2, 3, 4});

    Array r = Array::from({1, 2}, {1, 0});
    Array c = Array::from({2, 1}, {0, 1});
    CHECK(ops::matmul(r, c).value_at(0) == 0.0);

    CHECK_THROWS_AS(ops::matmul(Array::zeros({2, 3}), Array::zeros({2, 3})), NumericError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(11);
    Array a = random_array({3, 3}, rng);
    Array b = random_array({3, 3}, rng);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            return ops::sum_all(ops::mul(ops::matmul(ls[0], ls[1]), ls[1]));
        },
        {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("elementwise gradients vs finite differences") {
    Rng rng(13);
    Array x = random_uniform({4, 5}, rng, -1.5, 1.5);
    Array y = random_uniform({5}, rng, 0.5, 2.0);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array t = ops::sigmoid(ls[0]);
            t = ops::mul(t, ls[1]);
            t = ops::add(ops::tanh(t), ops::softplus(ls[0]));
            t = ops::div(t, ls[1]);
            return ops::mean_all(ops::mul(t, t));
        },
        {x, y});
    CHECK(err < 1e-4);
}

TEST_CASE("conv2d forward shapes and values") {
    // all-ones 3x3 kernel over all-ones image: plain sum pooling
    Array x = Array::full({1, 3, 3}, 1.0);
    Array w = Array::full({1, 1, 3, 3}, 1.0);
    Array y = ops::conv2d(x, w, 1, 0);
    CHECK(y.shape() == std::vector<int64_t>{1, 1, 1});
    CHECK(y.value_at(0) == 9.0);

    // stride-14 kernel-14 downsampling: 28 -> 2
    Array x2 = Array::full({1, 28, 28}, 0.5);
    Array w2 = Array::full({1, 1, 14, 14}, 0.1);
    Array y2 = ops::conv2d(x2, w2, 14, 0);
    CHECK(y2.shape() == std::vector<int64_t>{1, 2, 2});

    CHECK_THROWS_AS(ops::conv2d(Array::zeros({1, 4, 4}), Array::zeros({1, 1, 6, 6}), 1, 0),
                    NumericError);
}

TEST_CASE("conv2d gradient vs finite differences") {
    Rng rng(17);
    Array x = random_array({2, 5, 5}, rng);
    Array w = random_array({3, 2, 3, 3}, rng, 0.5);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array y = ops::conv2d(ls[0], ls[1], 2, 1);
            return ops::mean_all(ops::mul(y, y));
        },
        {x, w});
    CHECK(err < 1e-6);
}

TEST_CASE("softmax") {
    Array y = ops::softmax(Array::from({3}, {0, 0, 0}), 0);
    for (int i = 0; i < 3; ++i) CHECK(y.value_at(i) == doctest::Approx(1.0 / 3));

    Array z = ops::softmax(Array::from({2}, {1000, 0}), 0);
    CHECK(z.value_at(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(z.value_at(1) == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(19);
    Array x = random_array({3, 4}, rng);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array s = ops::softmax(ls[0], 1);
            Array w = Array::from({4}, {0.1, -0.4, 1.3, 0.2});
            return ops::sum_all(ops::mul(s, w));
        },
        {x});
    CHECK(err < 1e-6);
}

TEST_CASE("bilinear_sample values") {
    // 1-channel 2x2 grid: values 0,0 / 4,4 along y
    Array f = Array::from({1, 2, 2}, {0, 0, 4, 4});
    Array at_corner = ops::bilinear_sample(f, Array::from({1, 2}, {0, 1}));
    CHECK(at_corner.value_at(0) == 4.0);  // integer grid point returns stored value
    Array mid = ops::bilinear_sample(f, Array::from({1, 2}, {0.5, 0.5}));
    CHECK(mid.value_at(0) == doctest::Approx(2.0));
    // Far outside: zero contribution
    Array outside = ops::bilinear_sample(f, Array::from({1, 2}, {-5.0, 0.0}));
    CHECK(outside.value_at(0) == 0.0);
}

TEST_CASE("bilinear_sample gradient vs finite differences") {
    Rng rng(23);
    Array f = random_array({3, 5, 6}, rng);
    Array pts(std::vector<int64_t>{7, 2}, DType::F64);
    for (int p = 0; p < 7; ++p) {
        // Off-integer interior and slightly out-of-range points.
        pts.set_value(p * 2 + 0, rng.uniform(-0.4, 5.3));
        pts.set_value(p * 2 + 1, rng.uniform(-0.4, 4.3));
    }
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array s = ops::bilinear_sample(ls[0], ls[1]);
            return ops::mean_all(ops::mul(s, s));
        },
        {f, pts});
    CHECK(err < 1e-5);
}

TEST_CASE("upsample_bilinear forward and gradient") {
    Array x = Array::from({1, 2, 2}, {0, 1, 2, 3});
    Array y = ops::upsample_bilinear(x, 2);
    CHECK(y.shape() == std::vector<int64_t>{1, 4, 4});
    CHECK(y.value_at(0) == doctest::Approx(0.0));

    Rng rng(29);
    Array f = random_array({2, 3, 3}, rng);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array u = ops::upsample_bilinear(ls[0], 2);
            return ops::mean_all(ops::mul(u, u));
        },
        {f});
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm gradient") {
    Rng rng(31);
    Array x = random_array({4, 6}, rng);
    Array g = random_uniform({6}, rng, 0.5, 1.5);
    Array b = random_array({6}, rng, 0.2);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array y = ops::layer_norm(ls[0], ls[1], ls[2]);
            Array w = Array::from({6}, {0.3, -0.2, 0.5, 0.1, -0.7, 0.25});
            return ops::sum_all(ops::mul(y, w));
        },
        {x, g, b});
    CHECK(err < 1e-4);
}

TEST_CASE("slice/concat/reshape/transpose gradients") {
    Rng rng(37);
    Array x = random_array({3, 4}, rng);
    Array y = random_array({2, 4}, rng);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array c = ops::concat({ls[0], ls[1]}, 0);            // [5,4]
            Array s = ops::slice(c, 0, 1, 3);                    // [3,4]
            Array t = ops::transpose(s);                         // [4,3]
            Array r = ops::reshape(t, {2, 6});                   // [2,6]
            return ops::mean_all(ops::mul(r, r));
        },
        {x, y});
    CHECK(err < 1e-6);
}

TEST_CASE("sum_axis values and gradient") {
    Array a = Array::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(ops::sum_axis(a, 1, false).to_vector() == std::vector<double>{6, 15});
    CHECK(ops::sum_axis(a, 0, true).shape() == std::vector<int64_t>{1, 3});

    Rng rng(41);
    Array x = random_array({3, 4, 2}, rng);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) {
            Array s = ops::sum_axis(ls[0], 1, false);
            return ops::mean_all(ops::mul(s, s));
        },
        {x});
    CHECK(err < 1e-6);
}

TEST_CASE("forward results identical across thread counts") {
    Rng rng(43);
    Array x = random_array({8, 33, 35}, rng);
    Array w = random_array({16, 8, 3, 3}, rng, 0.3);
    Array a = random_array({64, 96}, rng);
    Array b = random_array({96, 80}, rng);

    auto compute = [&]() {
        Array c = ops::conv2d(x, w, 1, 1);
        Array m = ops::matmul(a, b);
        return std::make_pair(c.to_vector(), m.to_vector());
    };
    ThreadPool::instance().set_threads(1);
    auto r1 = compute();
    ThreadPool::instance().set_threads(4);
    auto r4 = compute();
    ThreadPool::instance().set_threads(8);
    auto r8 = compute();
    ThreadPool::instance().set_threads(2);
    CHECK(r1 == r4);
    CHECK(r1 == r8);
}

TEST_CASE("f32 arrays run through the same ops") {
    Array a = Array::from({2, 2}, {1, 2, 3, 4}, DType::F32);
    Array b = Array::from({2, 2}, {0.5, 0.5, 0.5, 0.5}, DType::F32);
    Array c = ops::matmul(ops::add(a, b), b);
    CHECK(c.dtype() == DType::F32);
    CHECK(c.value_at(0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(ops::add(a, Array::zeros({2, 2}, DType::F64)), NumericError);
}

TEST_SUITE_END();
