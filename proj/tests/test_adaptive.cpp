#include <gtest/gtest.h>

#include <cmath>

#include "odup/adaptive.hpp"
#include "odup/error.hpp"

using namespace odup;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.flat()) x = rng.normal();
    return m;
}

}  // namespace

TEST(Mmd, IdenticalTablesGiveZero) {
    Rng rng(1);
    const Matrix x = random_matrix(rng, 200, 8);
    MmdConfig cfg;
    EXPECT_NEAR(mmd2(x, x, cfg), 0.0, 1e-12);
    cfg.paired = true;
    cfg.sample_n1 = cfg.sample_n2 = 50;
    EXPECT_NEAR(mmd2(x, x, cfg), 0.0, 1e-12);
}

TEST(Mmd, SingleSampleClosedForm) {
    const Matrix a(1, 2, {0.0, 0.0}), b(1, 2, {1.0, 2.0});
    MmdConfig cfg;
    cfg.bandwidth = 1.5;
    const double expect = 2 - 2 * std::exp(-5.0 / (2 * 1.5 * 1.5));
    EXPECT_NEAR(mmd2(a, b, cfg), expect, 1e-14);
}

TEST(Mmd, IncreasesWithNoise) {
    Rng rng(2);
    const Matrix x = random_matrix(rng, 300, 8);
    MmdConfig cfg;
    cfg.seed = 4;
    double prev = -1;
    for (double s : {0.01, 0.05, 0.1, 0.5, 1.0}) {
        Rng noise(77);
        Matrix y = x;
        for (double& v : y.flat()) v += noise.normal(0, s);
        const double m = mmd2(x, y, cfg);
        EXPECT_GT(m, prev) << "noise " << s;
        prev = m;
    }
}

TEST(Mmd, SymmetricUnderSwap) {
    Rng rng(3);
    const Matrix x = random_matrix(rng, 80, 4), y = random_matrix(rng, 60, 4);
    MmdConfig cfg;
    EXPECT_NEAR(mmd2(x, y, cfg), mmd2(y, x, cfg), 1e-12);
}

TEST(Mmd, SampledIsDeterministic) {
    Rng rng(3);
    const Matrix x = random_matrix(rng, 500, 4), y = random_matrix(rng, 500, 4);
    MmdConfig cfg;
    cfg.sample_n1 = 100;
    cfg.sample_n2 = 120;
    cfg.seed = 9;
    EXPECT_EQ(mmd2(x, y, cfg), mmd2(x, y, cfg));
}

TEST(Mmd, RejectsMismatchedShapes) {
    MmdConfig cfg;
    EXPECT_THROW(mmd2(Matrix(3, 2), Matrix(3, 3), cfg), Error);
    EXPECT_THROW(mmd2(Matrix(), Matrix(3, 3), cfg), Error);
}

TEST(Bandwidth, MedianOfPairwiseDistances) {
    const Matrix a(2, 1, {0.0, 1.0}), b(1, 1, {3.0});
    // distances 1, 3, 2
    EXPECT_NEAR(median_bandwidth(a, b), 2.0, 1e-15);
    const Matrix same(3, 1, 0.0);
    EXPECT_EQ(median_bandwidth(same, same), 1.0);
}

TEST(ChooseRatio, Oracles) {
    const AdaptiveConfig cfg;
    EXPECT_FALSE(choose_ratio(0.0, cfg).has_value());
    EXPECT_EQ(choose_ratio(0.5, cfg), 21u);
    EXPECT_EQ(choose_ratio(40.0, cfg), 5u);
    EXPECT_EQ(choose_ratio(1e9, cfg), 5u);
}

TEST(ChooseRatio, TwentySitsJustAboveTheFloor) {
    // 1 / (0.2 tanh(10)) = 5.0000000206...
    EXPECT_EQ(choose_ratio(20.0, AdaptiveConfig{}), 6u);
}

TEST(ChooseRatio, NonIncreasingAndBounded) {
    const AdaptiveConfig cfg;
    std::uint64_t prev = ~std::uint64_t{0};
    for (double m = 1e-5; m < 50; m *= 1.3) {
        const auto r = choose_ratio(m, cfg);
        ASSERT_TRUE(r.has_value());
        EXPECT_LE(*r, prev);
        EXPECT_GE(*r, 5u);
        prev = *r;
    }
}

TEST(ChooseRatio, ThresholdSkips) {
    AdaptiveConfig cfg;
    cfg.skip_threshold = 0.1;
    EXPECT_FALSE(choose_ratio(0.1, cfg).has_value());
    EXPECT_TRUE(choose_ratio(0.11, cfg).has_value());
}

TEST(AdaptiveConfig, Validation) {
    AdaptiveConfig cfg;
    cfg.C = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.C = 1.5;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.C = 1;
    cfg.skip_threshold = -1;
    EXPECT_THROW(cfg.validate(), Error);
}
