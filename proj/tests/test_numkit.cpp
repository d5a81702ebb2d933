#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "odup/error.hpp"
#include "odup/numkit.hpp"

using namespace odup;

TEST(Softmax, UniformOnEqualInputs) {
    const Vector p = softmax(Vector{0, 0, 0}, 1.0);
    for (double x : p) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LowTemperatureSelectsArgmax) {
    const Vector p = softmax(Vector{10, 0, 0}, 0.01);
    EXPECT_GE(p[0], 1.0 - 1e-9);
}

TEST(Softmax, MatchesScalarOracle) {
    const Vector p = softmax(Vector{1, 2, 3}, 1.0);
    EXPECT_NEAR(p[0], 0.09003057, 1e-8);
    EXPECT_NEAR(p[1], 0.24472847, 1e-8);
    EXPECT_NEAR(p[2], 0.66524096, 1e-8);
}

TEST(Softmax, SumsToOneAndPreservesOrder) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Vector v(7);
        for (double& x : v) x = rng.uniform(-50, 50);
        const double tau = rng.uniform(0.05, 5);
        const Vector p = softmax(v, tau);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t j = 0; j < v.size(); ++j) {
                if (v[i] > v[j]) {
                    EXPECT_GE(p[i], p[j]);
                }
            }
    }
}

TEST(Softmax, StableForLargeInputs) {
    const Vector p = softmax(Vector{1000, 1001}, 1.0);
    EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
    EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Softmax, RejectsBadInput) {
    EXPECT_THROW(softmax(Vector{1, NAN}, 1.0), Error);
    EXPECT_THROW(softmax(Vector{1, INFINITY}, 1.0), Error);
    EXPECT_THROW(softmax(Vector{1, 2}, 0.0), Error);
    EXPECT_THROW(softmax(Vector{}, 1.0), Error);
}

TEST(Gumbel, ScalarOracle) {
    EXPECT_NEAR(gumbel_from_uniform(0.5), 0.366513, 1e-6);
}

TEST(Gumbel, ClampedAtTheEnds) {
    EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
    EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
}

TEST(Gumbel, SameSeedSameDraws) {
    Rng a(42), b(42);
    EXPECT_EQ(sample_gumbel(a, 100), sample_gumbel(b, 100));
}

TEST(Rng, ReferenceSequenceIsStable) {
    Rng a(1), b(1), c(2);
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
}

TEST(Rng, UniformStaysInOpenInterval) {
    Rng rng(9);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, BelowCoversRange) {
    Rng rng(5);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7000; ++i) ++seen[rng.below(7)];
    for (int c : seen) EXPECT_GT(c, 800);
}

TEST(Rng, NormalMoments) {
    Rng rng(11);
    double s = 0, s2 = 0;
    const int N = 200000;
    for (int i = 0; i < N; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / N, 0.0, 0.01);
    EXPECT_NEAR(s2 / N, 1.0, 0.02);
}

TEST(Rng, MixSeedSeparatesStreams) {
    EXPECT_NE(mix_seed(7, 1), mix_seed(7, 2));
    EXPECT_EQ(mix_seed(7, 1), mix_seed(7, 1));
}

TEST(GradCheck, QuadraticIsExact) {
    const Vector point{3.0}, grad{6.0};
    const double err = grad_check([](std::span<const double> x) { return x[0] * x[0]; }, grad, point, 1e-5);
    EXPECT_LE(err, 1e-8);
}

TEST(GradCheck, SigmoidSum) {
    Rng rng(4);
    Vector point(10), grad(10);
    for (std::size_t i = 0; i < point.size(); ++i) {
        point[i] = rng.uniform(-3, 3);
        grad[i] = sigmoid(point[i]) * (1 - sigmoid(point[i]));
    }
    auto f = [](std::span<const double> x) {
        double s = 0;
        for (double v : x) s += sigmoid(v);
        return s;
    };
    EXPECT_LE(grad_check(f, grad, point), 1e-6);
}

TEST(GradCheck, DoubledGradientGivesOneThird) {
    const Vector point{1.5}, grad{2 * 2 * 1.5};
    const double err = grad_check([](std::span<const double> x) { return x[0] * x[0]; }, grad, point);
    EXPECT_NEAR(err, 1.0 / 3.0, 1e-8);
}

TEST(Matrix, MatmulAgainstHandProduct) {
    const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    EXPECT_EQ(matmul(a, b), Matrix(2, 2, {58, 64, 139, 154}));
    EXPECT_EQ(matmul_tn(transpose(a), b), matmul(a, b));
    EXPECT_THROW(matmul(a, a), Error);
}

TEST(Matrix, RoundToF32) {
    const Matrix m(1, 2, {0.1, 1.0});
    const Matrix r = round_to_f32(m);
    EXPECT_EQ(r(0, 0), static_cast<double>(0.1f));
    EXPECT_EQ(r(0, 1), 1.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Adam adam(2);
    Vector p{1.0, -1.0};
    const Vector g{0.5, -2.0};
    adam.next_step();
    adam.update(p, g, 0.1, 0);
    EXPECT_NEAR(p[0], 0.9, 1e-7);
    EXPECT_NEAR(p[1], -0.9, 1e-7);
}

TEST(Activations, SoftplusAndSigmoid) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
    EXPECT_TRUE(std::isfinite(softplus(-800.0)));
    EXPECT_EQ(sigmoid(0.0), 0.5);
}
