#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "muscl/rng.hpp"
#include "muscl/tape.hpp"
#include "muscl/tensor.hpp"

using namespace muscl;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

double rel_err(double a, double b) {
    double d = std::fabs(a - b);
    double m = std::max(std::fabs(a), std::fabs(b));
    return m > 0 ? d / m : d;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK(shape_product(t.shape()) == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);

    Tensor s = Tensor::scalar(3.5);
    CHECK(s.is_scalar());
    CHECK(s.item() == 3.5);

    Tensor f = Tensor::full({3}, -1.25);
    CHECK(f[0] == -1.25);
    CHECK(f[2] == -1.25);

    CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0, 3.0}));  // length/shape mismatch
}

TEST_CASE("non-finite values are rejected") {
    Tensor bad({2}, {1.0, std::nan("")});
    CHECK(!bad.all_finite());
    CHECK_THROWS_AS(require_finite(bad, "test"), std::runtime_error);

    Tape tape;
    Var x = tape.leaf(Tensor({1}, {-1.0}));
    CHECK_THROWS(log_op(x));  // log of a negative must not leak NaN
}

TEST_CASE("tensor serialization round-trips exactly") {
    Rng rng(17);
    Tensor t = random_tensor({3, 5}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    Tensor back = read_tensor(ss);
    REQUIRE(back.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("matmul with identity returns the operand") {
    Tape tape;
    Tensor I({2, 2}, {1, 0, 0, 1});
    Rng rng(3);
    Tensor M = random_tensor({2, 2}, rng);
    Var out = matmul(tape.constant(I), tape.constant(M));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.value()[i] == doctest::Approx(M[i]).epsilon(1e-15));
}

TEST_CASE("relu definition") {
    Tape tape;
    Var x = tape.constant(Tensor({2}, {-3.0, 2.5}));
    Var y = relu(x);
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == 2.5);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
    Rng rng(11);
    // 5x5 single-channel image, 3x3 all-ones kernel: center output pixel must
    // equal the 3x3 neighborhood sum.
    Tensor img = random_tensor({1, 5, 5}, rng);
    Tensor ones({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor b0({1});
    Tape tape;
    Var out = conv2d(tape.constant(img), tape.constant(ones), tape.constant(b0));
    REQUIRE(out.value().shape() == std::vector<std::size_t>{1, 3, 3});
    double center = 0.0;
    for (std::size_t y = 1; y <= 3; ++y)
        for (std::size_t x = 1; x <= 3; ++x) center += img[y * 5 + x];
    CHECK(out.value()[4] == doctest::Approx(center).epsilon(1e-14));

    // multi-channel random case against the full nested loop
    Tensor x = random_tensor({3, 6, 7}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tape tape2;
    Var out2 = conv2d(tape2.constant(x), tape2.constant(w), tape2.constant(b));
    const std::size_t Ho = 4, Wo = 5;
    REQUIRE(out2.value().shape() == std::vector<std::size_t>{4, Ho, Wo});
    for (std::size_t co = 0; co < 4; ++co)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                double acc = b[co];
                for (std::size_t ci = 0; ci < 3; ++ci)
                    for (std::size_t ky = 0; ky < 3; ++ky)
                        for (std::size_t kx = 0; kx < 3; ++kx)
                            acc += x[ci * 42 + (oy + ky) * 7 + (ox + kx)] *
                                   w[co * 27 + ci * 9 + ky * 3 + kx];
                double got = out2.value()[co * Ho * Wo + oy * Wo + ox];
                CHECK(rel_err(got, acc) < 1e-12);
            }
}

TEST_CASE("backward of x squared at x = 3 is 6") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    Var y = mul(x, x);
    auto g = tape.backward(y);
    REQUIRE(g.size() == 1);
    CHECK(g[0].item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward of sum is all ones") {
    Tape tape;
    Rng rng(5);
    Tensor t = random_tensor({3, 4}, rng);
    Var x = tape.leaf(t);
    auto g = tape.backward(sum(x));
    REQUIRE(g[0].same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(g[0][i] == 1.0);
}

TEST_CASE("backward returns zeros for unused leaves") {
    Tape tape;
    Var a = tape.leaf(Tensor::scalar(2.0));
    Var b = tape.leaf(Tensor::scalar(5.0));
    auto g = tape.backward(mul(a, a));
    CHECK(g[0].item() == 4.0);
    CHECK(g[1].item() == 0.0);
    (void)b;
}

TEST_CASE("three-layer MLP gradient matches central finite differences") {
    Rng rng(23);
    const std::size_t din = 6, h1 = 5, h2 = 4;
    Tensor W1 = random_tensor({h1, din}, rng, 0.5), b1 = random_tensor({h1}, rng, 0.1);
    Tensor W2 = random_tensor({h2, h1}, rng, 0.5), b2 = random_tensor({h2}, rng, 0.1);
    Tensor W3 = random_tensor({1, h2}, rng, 0.5), b3 = random_tensor({1}, rng, 0.1);

    auto forward = [&](const Tensor& w1, const Tensor& bb1, const Tensor& w2, const Tensor& bb2,
                       const Tensor& w3, const Tensor& bb3, const Tensor& x, Tape& tape,
                       std::vector<Var>* leaves) {
        Var vW1 = tape.leaf(w1), vb1 = tape.leaf(bb1);
        Var vW2 = tape.leaf(w2), vb2 = tape.leaf(bb2);
        Var vW3 = tape.leaf(w3), vb3 = tape.leaf(bb3);
        if (leaves) *leaves = {vW1, vb1, vW2, vb2, vW3, vb3};
        Var a1 = relu(add(matvec(vW1, tape.constant(x)), vb1));
        Var a2 = sigmoid(add(matvec(vW2, a1), vb2));
        Var out = add(matvec(vW3, a2), vb3);
        return sum(out);
    };

    double max_rel = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({din}, rng);
        Tape tape;
        std::vector<Var> leaves;
        Var out = forward(W1, b1, W2, b2, W3, b3, x, tape, &leaves);
        auto grads = tape.backward(out);

        std::vector<Tensor*> params = {&W1, &b1, &W2, &b2, &W3, &b3};
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& P = *params[p];
            for (std::size_t i = 0; i < P.size(); i += std::max<std::size_t>(1, P.size() / 4)) {
                const double h = 1e-5;
                double orig = P[i];
                P[i] = orig + h;
                Tape tp;
                double up = forward(W1, b1, W2, b2, W3, b3, x, tp, nullptr).value().item();
                P[i] = orig - h;
                Tape tm;
                double dn = forward(W1, b1, W2, b2, W3, b3, x, tm, nullptr).value().item();
                P[i] = orig;
                double fd = (up - dn) / (2 * h);
                double an = grads[p][i];
                if (std::fabs(fd) > 1e-10 || std::fabs(an) > 1e-10)
                    max_rel = std::max(max_rel, rel_err(an, fd));
            }
        }
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("tape replays each node once and leaves precede dependents") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    Var y = mul(x, x);
    Var z = add(y, y);  // diamond: y used twice
    auto g = tape.backward(z);
    CHECK(g[0].item() == doctest::Approx(8.0));  // d(2x^2)/dx = 4x
    // independent repeated sweeps
    auto g2 = tape.backward(z);
    CHECK(g2[0].item() == g[0].item());
}

TEST_CASE("rng streams are deterministic and substreams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng s1 = Rng::substream(42, {1});
    Rng s2 = Rng::substream(42, {2});
    Rng s12 = Rng::substream(42, {1, 2});
    std::vector<std::uint64_t> v1, v2, v12;
    for (int i = 0; i < 8; ++i) {
        v1.push_back(s1.next_u64());
        v2.push_back(s2.next_u64());
        v12.push_back(s12.next_u64());
    }
    CHECK(v1 != v2);
    CHECK(v1 != v12);
    CHECK(v2 != v12);

    Rng s1b = Rng::substream(42, {1});
    for (int i = 0; i < 8; ++i) CHECK(s1b.next_u64() == v1[std::size_t(i)]);
}

TEST_CASE("beta sampling moments match the analytic values") {
    Rng rng(7);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = beta_sample(2.0, 2.0, rng);
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        sum += x;
        sum2 += x * x;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::fabs(mean - 0.5) < 0.01);   // Beta(a,a) mean is 0.5
    CHECK(std::fabs(var - 0.05) < 0.005);  // Beta(2,2) variance is 1/20

    CHECK_THROWS_AS(beta_sample(0.0, 1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(beta_sample(1.0, -2.0, rng), std::invalid_argument);
}
