#include "rwm/similarity.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

namespace {

using namespace rwm;
using rwm::testing::mat2;
using rwm::testing::random_mixture;
using rwm::testing::random_vector;
using rwm::testing::vec2;

// Unsupervised estimate of the concentric-Gaussians example. The printed
// (0,0) entry 0.00 of the first covariance is a rounded value; 0.004 rounds
// to it and keeps the matrix positive definite.
MixtureModel concentric_estimate() {
    return MixtureModel::from_parameters({0.55, 0.45}, {vec2(0.0, 0.0), vec2(-0.05, -0.05)},
                                         {mat2(0.004, -0.01, -0.01, 0.10), mat2(2.23, -0.02, -0.02, 1.86)});
}

TEST(Distances, Basics) {
    EXPECT_DOUBLE_EQ(euclidean(vec2(0, 0), vec2(3, 4)), 5.0);
    const Matrix p = mat2(2.0, 0.5, 0.5, 1.0);
    const double q = 2.0 * 1.0 + 2.0 * 0.5 * 1.0 * -2.0 + 1.0 * 4.0;
    EXPECT_NEAR(mahalanobis(p, vec2(1, 0), vec2(0, 2)), std::sqrt(q), 1e-15);
    EXPECT_DOUBLE_EQ(mahalanobis(Matrix::Identity(2, 2), vec2(1, 2), vec2(4, 6)), 5.0);
    EXPECT_THROW((void)euclidean(vec2(0, 0), Vector::Zero(3)), invalid_argument);
    EXPECT_THROW((void)mahalanobis(Matrix::Identity(3, 3), vec2(0, 0), vec2(1, 1)), invalid_argument);
}

TEST(Distances, MahalanobisClampsRoundoff) {
    // nearly singular precision: the quadratic form must never go negative
    const Matrix p = mat2(1.0, 1.0 - 1e-16, 1.0 - 1e-16, 1.0);
    EXPECT_GE(mahalanobis(p, vec2(1, 0), vec2(0, 1)), 0.0);
}

TEST(Distances, GmmSingleIdentityIsEuclidean) {
    const auto m = MixtureModel::from_parameters({1.0}, {vec2(0.3, 0.1)}, {Matrix::Identity(2, 2)});
    Rng rng = make_rng(11);
    for (int t = 0; t < 100; ++t) {
        const Vector x = random_vector(2, rng);
        const Vector y = random_vector(2, rng);
        EXPECT_NEAR(gmm_distance(m, x, y), euclidean(x, y), 1e-12);
        EXPECT_NEAR(rwm_similarity(m, x, y), euclidean(x, y), 1e-12);
    }
}

TEST(Distances, RwmEqualIsotropicCovariancesIsScaledEuclidean) {
    const double s2 = 0.46;
    const auto m = MixtureModel::from_parameters({0.2, 0.3, 0.5}, {vec2(1, 5), vec2(5, 3), vec2(1, 1)},
                                                 {s2 * Matrix::Identity(2, 2), s2 * Matrix::Identity(2, 2),
                                                  s2 * Matrix::Identity(2, 2)});
    Rng rng = make_rng(2);
    for (int t = 0; t < 500; ++t) {
        const Vector x = random_vector(2, rng, 3.0);
        const Vector y = random_vector(2, rng, 3.0);
        EXPECT_NEAR(rwm_similarity(m, x, y), euclidean(x, y) / std::sqrt(s2), 1e-9);
    }
}

TEST(Distances, RwmIsAConvexCombinationOfComponentDistances) {
    Rng rng = make_rng(3);
    for (int t = 0; t < 200; ++t) {
        const auto m = random_mixture(1 + t % 4, 3, rng);
        const Vector x = random_vector(3, rng, 2.0);
        const Vector y = random_vector(3, rng, 2.0);
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (const auto& c : m.components()) {
            const double d = mahalanobis(c.precision(), x, y);
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        const double r = rwm_similarity(m, x, y);
        EXPECT_GE(r, lo * (1 - 1e-12));
        EXPECT_LE(r, hi * (1 + 1e-12));
    }
}

TEST(Distances, RwmPropertiesOnRandomMixtures) {
    Rng rng = make_rng(4);
    for (int t = 0; t < 2000; ++t) {
        const auto d = static_cast<Eigen::Index>(1 + t % 4);
        const auto m = random_mixture(1 + t % 5, d, rng);
        const Vector x = random_vector(d, rng, 2.0);
        const Vector y = random_vector(d, rng, 2.0);
        const double a = rwm_similarity(m, x, y);
        EXPECT_EQ(a, rwm_similarity(m, y, x));
        EXPECT_GE(a, 0.0);
        EXPECT_EQ(rwm_similarity(m, x, x), 0.0);
    }
}

TEST(Distances, RwmCanViolateTheTriangleInequality) {
    // Points along the elongated, heavily weighted component differ little
    // through it, while crossing into the broad component costs more.
    const auto m = concentric_estimate();
    Rng rng = make_rng(8);
    bool violated = false;
    for (int t = 0; t < 20000 && !violated; ++t) {
        const Vector x = random_vector(2, rng, 1.5);
        const Vector y = random_vector(2, rng, 1.5);
        const Vector z = random_vector(2, rng, 1.5);
        violated = rwm_similarity(m, x, z) > rwm_similarity(m, x, y) + rwm_similarity(m, y, z) + 1e-9;
    }
    EXPECT_TRUE(violated);
}

TEST(Distances, GmmMetricAxiomsOnRandomMixtures) {
    Rng rng = make_rng(5);
    for (int t = 0; t < 2000; ++t) {
        const auto d = static_cast<Eigen::Index>(1 + t % 3);
        const auto m = random_mixture(1 + t % 4, d, rng);
        const Vector x = random_vector(d, rng, 2.0);
        const Vector y = random_vector(d, rng, 2.0);
        const Vector z = random_vector(d, rng, 2.0);
        const double xy = gmm_distance(m, x, y);
        EXPECT_EQ(xy, gmm_distance(m, y, x));
        EXPECT_GT(xy, 0.0);
        EXPECT_EQ(gmm_distance(m, x, x), 0.0);
        EXPECT_LE(gmm_distance(m, x, z), xy + gmm_distance(m, y, z) + 1e-12);
    }
}

TEST(Distances, ConcentricEstimateFollowsTheNarrowComponent) {
    // Along the narrow component's long axis the RWM value is far smaller
    // than across it, for the same Euclidean step.
    const auto m = concentric_estimate();
    const double along = rwm_similarity(m, vec2(0, 0), vec2(0, 0.2));
    const double across = rwm_similarity(m, vec2(0, 0), vec2(0.2, 0));
    EXPECT_LT(along, across);
    // Far from the centre the broad component dominates both responsibilities.
    const Vector r = responsibilities(m, vec2(2.0, 2.0));
    EXPECT_GT(r(1), 0.999);
    EXPECT_NEAR(rwm_similarity(m, vec2(2.0, 2.0), vec2(2.5, 2.0)), mahalanobis(m[1].precision(), vec2(2, 2), vec2(2.5, 2)),
                1e-3);
}

TEST(Distances, CategoricalDelta) {
    std::istringstream in("a,categorical,x|y|z\nb,categorical,p|q\nc,categorical,u|v\ny,label\n");
    const auto schema = parse_schema(in);
    const std::vector<std::uint8_t> s1{1, 0, 0, 1, 0, 0, 1};
    const std::vector<std::uint8_t> s2{0, 0, 1, 1, 0, 1, 0};
    EXPECT_EQ(categorical_delta(s1, s2, schema), 2u);
    EXPECT_EQ(categorical_delta(s1, s1, schema), 0u);
    EXPECT_THROW((void)categorical_delta(std::vector<std::uint8_t>{1, 0}, s1, schema), invalid_argument);
}

}  // namespace
