#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "deficit/rng.hpp"
#include "deficit/tensor.hpp"

using namespace deficit;

TEST_CASE("matmul identity and small products") {
    Tape tape;
    Tensor eye = Tensor::from_matrix(2, 2, {1, 0, 0, 1});
    Tensor m = Tensor::from_matrix(2, 2, {1, 2, 3, 4});
    Tensor out = matmul(tape, eye, m);
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

    Tensor row = Tensor::from_matrix(1, 2, {1, 2});
    Tensor col = Tensor::from_matrix(2, 1, {3, 4});
    Tensor prod = matmul(tape, row, col);
    REQUIRE(prod.shape() == Shape{1, 1});
    CHECK(prod[0] == 11.0);

    Tensor vec = Tensor::from_vector({3, 4});
    Tensor mv = matmul(tape, row, vec);
    REQUIRE(mv.shape() == Shape{1});
    CHECK(mv[0] == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions, naming both shapes") {
    Tape tape;
    Tensor a = Tensor::from_matrix(3, 4, std::vector<double>(12, 1.0));
    Tensor b = Tensor::from_matrix(5, 2, std::vector<double>(10, 1.0));
    try {
        matmul(tape, a, b);
        FAIL("expected shape mismatch");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3 4]") != std::string::npos);
        CHECK(msg.find("[5 2]") != std::string::npos);
    }
}

TEST_CASE("elementwise arithmetic") {
    Tape tape;
    Tensor x = Tensor::from_vector({1, 2});
    CHECK(sub(tape, x, x).values() == std::vector<double>{0, 0});
    CHECK(mul(tape, Tensor::from_vector({2, 3}), Tensor::from_vector({4, 5})).values() ==
          std::vector<double>{8, 15});
    CHECK(sub(tape, Tensor::from_vector({1, 2}), Tensor::from_vector({0.5, 0.5})).values() ==
          std::vector<double>{0.5, 1.5});
    CHECK_THROWS_AS(add(tape, x, Tensor::from_vector({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("activation values") {
    Tape tape;
    CHECK(sigmoid(tape, Tensor::scalar(0.0))[0] == 0.5);

    for (double c : {-3.0, 0.0, 7.5, 1000.0}) {
        Tensor s = softmax(tape, Tensor::from_vector({c, c}));
        CHECK(s[0] == Catch::Approx(0.5).margin(1e-15));
        CHECK(s[1] == Catch::Approx(0.5).margin(1e-15));
    }

    Tensor hot = softmax(tape, Tensor::from_vector({1000.0, 0.0}));
    CHECK(hot[0] == 1.0);
    CHECK(hot[1] == 0.0);
    CHECK(std::isfinite(hot[0]));
}

TEST_CASE("activations stay in range up to |x| = 1e4") {
    Tape tape;
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> vals(8);
        for (auto& v : vals) v = rand_range(rng, -1e4, 1e4);
        Tensor x = Tensor::from_vector(vals);
        Tensor s = sigmoid(tape, x);
        Tensor t = tanh(tape, x);
        Tensor m = softmax(tape, x);
        double row_sum = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(s[i] >= 0.0);
            CHECK(s[i] <= 1.0);
            CHECK(t[i] >= -1.0);
            CHECK(t[i] <= 1.0);
            CHECK(std::isfinite(m[i]));
            row_sum += m[i];
        }
        CHECK(std::abs(row_sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax rows sum to one per row") {
    Tape tape;
    Tensor x = Tensor::from_matrix(3, 4, {0.1, -2, 3, 44, 0, 0, 0, 0, -9, 5, 5, 5});
    Tensor m = softmax(tape, x);
    for (std::size_t r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 4; ++c) acc += m[r * 4 + c];
        CHECK(std::abs(acc - 1.0) < 1e-12);
    }
}

TEST_CASE("concat joins vectors and splits gradients") {
    Tape tape;
    Tensor a = Tensor::from_vector({1, 2});
    Tensor b = Tensor::from_vector({3});
    Tensor joined = concat(tape, {a, b});
    CHECK(joined.values() == std::vector<double>{1, 2, 3});

    const std::size_t d = 5;
    std::vector<Tensor> parts{Tensor(Shape{d}), Tensor(Shape{d}), Tensor(Shape{d})};
    CHECK(concat(tape, parts).size() == 3 * d);

    Tensor ga = Tensor::from_vector({1.5}, true);
    Tensor gb = Tensor::from_vector({-2.0}, true);
    Tape t2;
    Tensor cat = concat(t2, {ga, gb});
    Tensor loss = sum(t2, cat);
    t2.backward(loss);
    CHECK(ga.grad()[0] == 1.0);
    CHECK(gb.grad()[0] == 1.0);

    Tensor m1 = Tensor::from_matrix(2, 2, {1, 2, 3, 4});
    Tensor m2 = Tensor::from_matrix(3, 3, std::vector<double>(9, 0.0));
    CHECK_THROWS_AS(concat(tape, {m1, m2}, 0), std::invalid_argument);
}

TEST_CASE("concat along columns") {
    Tape tape;
    Tensor m1 = Tensor::from_matrix(2, 1, {1, 3});
    Tensor m2 = Tensor::from_matrix(2, 2, {10, 20, 30, 40});
    Tensor joined = concat(tape, {m1, m2}, 1);
    REQUIRE(joined.shape() == Shape{2, 3});
    CHECK(joined.values() == std::vector<double>{1, 10, 20, 3, 30, 40});
}

TEST_CASE("bce loss values") {
    Tape tape;
    Tensor half = Tensor::from_vector({0.5});
    Tensor one = Tensor::from_vector({1.0});
    CHECK(bce_loss(tape, half, one)[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor close = Tensor::from_vector({1.0 - 1e-9, 1e-9});
    Tensor target = Tensor::from_vector({1.0, 0.0});
    CHECK(bce_loss(tape, close, target)[0] < 1e-6);

    // -(ln 0.9 + ln 0.9) / 2, worked by hand
    Tensor p = Tensor::from_vector({0.9, 0.1});
    Tensor t = Tensor::from_vector({1.0, 0.0});
    CHECK(bce_loss(tape, p, t)[0] == Catch::Approx(0.10536051565782628).epsilon(1e-12));

    CHECK_THROWS_AS(bce_loss(tape, p, one), std::invalid_argument);
}

TEST_CASE("mae loss values") {
    Tape tape;
    Tensor a = Tensor::from_vector({0.3, 0.7});
    CHECK(mae_loss(tape, a, a)[0] == 0.0);
    CHECK(mae_loss(tape, Tensor::from_vector({1, 0}), Tensor::from_vector({0, 1}))[0] == 1.0);
    CHECK(mae_loss(tape, Tensor::from_vector({0.8}), Tensor::from_vector({1.0}))[0] ==
          Catch::Approx(0.2).epsilon(1e-12));
    CHECK_THROWS_AS(mae_loss(tape, a, Tensor::scalar(1.0)), std::invalid_argument);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    Tensor x = Tensor::from_vector({1, 2}, true);
    Tensor y = add(tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("backward of simple reductions") {
    Tensor x = Tensor::from_vector({1.0, -2.0, 3.5}, true);

    Tape t1;
    Tensor s = sum(t1, x);
    t1.backward(s);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);

    x.zero_grad();
    Tape t2;
    Tensor sq = sum(t2, mul(t2, x, x));
    t2.backward(sq);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 2.0 * x[i]);
}

TEST_CASE("two identical passes are bit-identical") {
    Rng rng(42);
    auto run = [&](std::uint64_t seed, std::vector<double>& out_vals, std::vector<double>& out_grads) {
        Rng local(seed);
        std::vector<double> vals(12);
        for (auto& v : vals) v = rand_range(local, -2.0, 2.0);
        Tensor x = Tensor::from_vector(vals, true);
        Tensor w = Tensor::from_matrix(3, 12, [&] {
            std::vector<double> wv(36);
            for (auto& v : wv) v = rand_range(local, -1.0, 1.0);
            return wv;
        }());
        Tape tape;
        Tensor h = tanh(tape, matmul(tape, w, x));
        Tensor loss = sum(tape, mul(tape, h, h));
        tape.backward(loss);
        out_vals = h.values();
        out_grads.assign(x.grad(), x.grad() + x.size());
    };
    std::vector<double> v1, g1, v2, g2;
    run(99, v1, g1);
    run(99, v2, g2);
    CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("lookup_row and at") {
    Tape tape;
    Tensor table = Tensor::from_matrix(3, 2, {0, 0, 10, 11, 20, 21});
    CHECK(lookup_row(tape, table, 2).values() == std::vector<double>{20, 21});
    CHECK_THROWS_AS(lookup_row(tape, table, 3), std::invalid_argument);

    Tensor x = Tensor::from_vector({5, 6, 7}, true);
    Tape t2;
    Tensor picked = at(t2, x, 1);
    CHECK(picked[0] == 6.0);
    t2.backward(picked);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("forward and backward stay finite on finite inputs") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> vals(16);
        for (auto& v : vals) v = rand_range(rng, -50.0, 50.0);
        Tensor x = Tensor::from_vector(vals, true);
        Tape tape;
        Tensor y = sigmoid(tape, x);
        Tensor z = tanh(tape, y);
        Tensor loss = sum(tape, mul(tape, z, z));
        tape.backward(loss);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(std::isfinite(z[i]));
            CHECK(std::isfinite(x.grad()[i]));
        }
    }
}
