#include <cmath>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "cpbayes/cp_factors.hpp"
#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/norms.hpp"
#include "cpbayes/shape.hpp"
#include "test_util.hpp"

namespace {

using namespace cpbayes;

const std::vector<std::vector<std::int64_t>> kSmallShapes = {
    {2, 2},    {3, 4},       {7, 5},    {31, 32},       {5, 5, 5},
    {3, 4, 5}, {10, 10, 10}, {2, 2, 2, 2}, {4, 4, 4, 4}, {3, 3, 3, 3, 3},
};

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

TEST(Shape, FlatOffsetsUseLastIndexFastest) {
    const Shape shape({3, 4, 5});
    EXPECT_EQ(shape.ravel(std::vector<std::int64_t>{0, 0, 0}), 0);
    EXPECT_EQ(shape.ravel(std::vector<std::int64_t>{0, 0, 1}), 1);
    EXPECT_EQ(shape.ravel(std::vector<std::int64_t>{0, 1, 0}), 5);
    EXPECT_EQ(shape.ravel(std::vector<std::int64_t>{1, 0, 0}), 20);
    EXPECT_EQ(shape.ravel(std::vector<std::int64_t>{2, 3, 4}), 59);
}

TEST(Shape, RavelUnravelRoundTrip) {
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        for (std::int64_t flat = 0; flat < shape.total(); ++flat) {
            const MultiIndex index = shape.unravel(flat);
            EXPECT_EQ(shape.ravel(index), flat);
            EXPECT_EQ(index, testutil::decode_flat(dims, flat));
        }
    }
}

TEST(Shape, NextIndexWalksCanonicalOrder) {
    const Shape shape({2, 3, 2});
    MultiIndex index(3, 0);
    std::int64_t flat = 0;
    do {
        EXPECT_EQ(shape.ravel(index), flat);
        ++flat;
    } while (shape.next_index(index));
    EXPECT_EQ(flat, shape.total());
}

TEST(Shape, Validation) {
    EXPECT_THROW(Shape({5}), structural_error);
    EXPECT_THROW(Shape({2, 0}), structural_error);
    EXPECT_THROW(Shape({2, -1}), structural_error);
    const Shape shape({2, 2});
    EXPECT_THROW((void)shape.ravel(std::vector<std::int64_t>{0, 2}), structural_error);
    EXPECT_THROW((void)shape.ravel(std::vector<std::int64_t>{-1, 0}), structural_error);
    EXPECT_THROW((void)shape.ravel(std::vector<std::int64_t>{0}), structural_error);
    EXPECT_THROW((void)shape.unravel(4), structural_error);
    EXPECT_EQ(Shape({3, 4}).dim_sum(), 7);
}

// ---------------------------------------------------------------------------
// DenseTensor
// ---------------------------------------------------------------------------

TEST(DenseTensor, Validation) {
    const Shape shape({2, 2});
    EXPECT_THROW(DenseTensor(shape, {1.0, 2.0}), structural_error);
    EXPECT_THROW(DenseTensor(shape, {1.0, 2.0, 3.0, std::nan("")}), validation_error);
    const DenseTensor t(shape, {1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(t.at(std::vector<std::int64_t>{1, 0}), 3.0);
    EXPECT_EQ(t[3], 4.0);
}

TEST(DenseTensor, SubtractIsEntrywise) {
    const Shape shape({2, 2});
    const DenseTensor a(shape, {1.0, 2.0, 3.0, 4.0});
    const DenseTensor b(shape, {0.5, 1.0, -1.0, 4.0});
    const DenseTensor d = subtract(a, b);
    EXPECT_EQ(d[0], 0.5);
    EXPECT_EQ(d[1], 1.0);
    EXPECT_EQ(d[2], 4.0);
    EXPECT_EQ(d[3], 0.0);
    EXPECT_THROW(subtract(a, DenseTensor::zeros(Shape({2, 3}))), structural_error);
}

// ---------------------------------------------------------------------------
// CP composition
// ---------------------------------------------------------------------------

TEST(CpCompose, HandComputedRankOneExample) {
    const Shape shape({2, 2});
    Eigen::MatrixXd u1(1, 2);
    u1 << 1.0, 2.0;
    Eigen::MatrixXd u2(1, 2);
    u2 << 3.0, 4.0;
    const CPFactors factors(shape, {u1, u2});
    const DenseTensor a = cp_compose(factors);
    EXPECT_DOUBLE_EQ(a[0], 3.0);
    EXPECT_DOUBLE_EQ(a[1], 4.0);
    EXPECT_DOUBLE_EQ(a[2], 6.0);
    EXPECT_DOUBLE_EQ(a[3], 8.0);
}

TEST(CpCompose, HandComputedRankTwoExample) {
    const Shape shape({2, 2, 2});
    Eigen::MatrixXd u1(2, 2);
    u1 << 1.0, -1.0, 2.0, 0.5;
    Eigen::MatrixXd u2(2, 2);
    u2 << 1.0, 2.0, -1.0, 1.0;
    Eigen::MatrixXd u3(2, 2);
    u3 << 1.0, 0.0, 3.0, 1.0;
    const CPFactors factors(shape, {u1, u2, u3});
    // Cell (0,1,1): 1*2*0 + 2*1*1 = 2.
    EXPECT_DOUBLE_EQ(cp_element(factors, std::vector<std::int64_t>{0, 1, 1}), 2.0);
    // Cell (1,0,0): -1*1*1 + 0.5*(-1)*3 = -2.5.
    EXPECT_DOUBLE_EQ(cp_element(factors, std::vector<std::int64_t>{1, 0, 0}), -2.5);
    const DenseTensor a = cp_compose(factors);
    EXPECT_DOUBLE_EQ(a.at(std::vector<std::int64_t>{0, 1, 1}), 2.0);
    EXPECT_DOUBLE_EQ(a.at(std::vector<std::int64_t>{1, 0, 0}), -2.5);
}

TEST(CpCompose, MatchesBruteForceOnAllSmallShapes) {
    Rng rng(11);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        for (std::int64_t rank : {0, 1, 2, 5}) {
            const CPFactors factors = testutil::random_factors(shape, rank, rng);
            const DenseTensor composed = cp_compose(factors);
            const std::vector<double> expected = testutil::brute_force_compose(factors);
            for (std::int64_t c = 0; c < shape.total(); ++c) {
                ASSERT_TRUE(testutil::close_rel(composed[c], expected[static_cast<std::size_t>(c)],
                                                1e-12))
                    << "shape order " << shape.order() << " rank " << rank << " cell " << c;
            }
        }
    }
}

TEST(CpElement, MatchesComposedTensorEverywhere) {
    Rng rng(12);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        const CPFactors factors = testutil::random_factors(shape, 3, rng);
        const DenseTensor composed = cp_compose(factors);
        MultiIndex index(static_cast<std::size_t>(shape.order()), 0);
        do {
            ASSERT_TRUE(
                testutil::close_rel(cp_element(factors, index), composed.at(index), 1e-12));
        } while (shape.next_index(index));
    }
}

TEST(CpFactors, RankZeroComposesToZero) {
    const CPFactors factors = CPFactors::zeros(Shape({3, 4}), 0);
    EXPECT_EQ(factors.rank(), 0);
    const DenseTensor a = cp_compose(factors);
    for (std::int64_t c = 0; c < a.size(); ++c) EXPECT_EQ(a[c], 0.0);
    EXPECT_EQ(cp_element(factors, std::vector<std::int64_t>{0, 0}), 0.0);
}

TEST(CpFactors, Validation) {
    const Shape shape({2, 3});
    EXPECT_THROW(CPFactors(shape, {Eigen::MatrixXd::Zero(1, 2)}), structural_error);
    EXPECT_THROW(CPFactors(shape, {Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(2, 3)}),
                 structural_error);
    EXPECT_THROW(CPFactors(shape, {Eigen::MatrixXd::Zero(1, 3), Eigen::MatrixXd::Zero(1, 3)}),
                 structural_error);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(1, 2);
    bad(0, 0) = std::nan("");
    EXPECT_THROW(CPFactors(shape, {bad, Eigen::MatrixXd::Zero(1, 3)}), validation_error);

    CPFactors ok = CPFactors::zeros(shape, 2);
    EXPECT_THROW(ok.set_factor(0, Eigen::MatrixXd::Zero(1, 2)), structural_error);
    EXPECT_THROW(ok.set_factor(2, Eigen::MatrixXd::Zero(2, 3)), structural_error);
    EXPECT_THROW((void)cp_element(ok, std::vector<std::int64_t>{0, 3}), structural_error);
    EXPECT_THROW((void)cp_element(ok, std::vector<std::int64_t>{0}), structural_error);
}

// ---------------------------------------------------------------------------
// Norms and inner products
// ---------------------------------------------------------------------------

TEST(Norms, MatchDirectLoops) {
    Rng rng(13);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        const DenseTensor a = testutil::random_dense(shape, rng, 2.0);
        double sum_abs = 0.0;
        double sum_sq = 0.0;
        double sum_cube = 0.0;
        double sup = 0.0;
        for (std::int64_t c = 0; c < a.size(); ++c) {
            sum_abs += std::abs(a[c]);
            sum_sq += a[c] * a[c];
            sum_cube += std::abs(a[c] * a[c] * a[c]);
            sup = std::max(sup, std::abs(a[c]));
        }
        EXPECT_TRUE(testutil::close_rel(norm(a, NormKind::lp(1.0)), sum_abs, 1e-12));
        EXPECT_TRUE(testutil::close_rel(norm(a, NormKind::lp(2.0)), std::sqrt(sum_sq), 1e-12));
        EXPECT_TRUE(
            testutil::close_rel(norm(a, NormKind::lp(3.0)), std::cbrt(sum_cube), 1e-12));
        EXPECT_TRUE(testutil::close_rel(norm(a, NormKind::infinity()), sup, 1e-12));
    }
}

TEST(Norms, AbsoluteHomogeneity) {
    Rng rng(14);
    const Shape shape({4, 5, 3});
    const DenseTensor a = testutil::random_dense(shape, rng);
    std::vector<double> scaled(a.values().begin(), a.values().end());
    for (double& v : scaled) v *= -2.5;
    const DenseTensor b(shape, std::move(scaled));
    for (double p : {1.0, 2.0, 4.0}) {
        EXPECT_TRUE(
            testutil::close_rel(norm(b, NormKind::lp(p)), 2.5 * norm(a, NormKind::lp(p)), 1e-12));
    }
    EXPECT_TRUE(testutil::close_rel(norm(b, NormKind::infinity()),
                                    2.5 * norm(a, NormKind::infinity()), 1e-12));
}

TEST(Norms, TriangleInequality) {
    Rng rng(15);
    const Shape shape({5, 5, 5});
    for (int trial = 0; trial < 20; ++trial) {
        const DenseTensor a = testutil::random_dense(shape, rng);
        const DenseTensor b = testutil::random_dense(shape, rng);
        std::vector<double> sum(a.values().begin(), a.values().end());
        for (std::int64_t c = 0; c < b.size(); ++c) sum[static_cast<std::size_t>(c)] += b[c];
        const DenseTensor s(shape, std::move(sum));
        for (double p : {1.0, 2.0}) {
            EXPECT_LE(norm(s, NormKind::lp(p)),
                      norm(a, NormKind::lp(p)) + norm(b, NormKind::lp(p)) + 1e-12);
        }
    }
}

TEST(Norms, InvalidKinds) {
    const DenseTensor a = DenseTensor::zeros(Shape({2, 2}));
    EXPECT_THROW((void)NormKind::lp(0.5), validation_error);
    EXPECT_THROW((void)norm(a, NormKind::max2_upper_bound()), unsupported_error);
}

TEST(Max2UpperBound, MatchesDirectColumnScan) {
    Rng rng(16);
    const Shape shape({3, 4, 5});
    const CPFactors factors = testutil::random_factors(shape, 3, rng);
    double best = 0.0;
    for (int k = 0; k < shape.order(); ++k) {
        for (std::int64_t j = 0; j < shape.dim(k); ++j) {
            double col_sq = 0.0;
            for (std::int64_t r = 0; r < factors.rank(); ++r) {
                col_sq += factors.factor(k)(r, j) * factors.factor(k)(r, j);
            }
            best = std::max(best, std::sqrt(col_sq));
        }
    }
    EXPECT_TRUE(testutil::close_rel(max2_upper_bound(factors), best, 1e-12));
}

TEST(Max2UpperBound, PowerDominatesSupNorm) {
    Rng rng(17);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        const CPFactors factors = testutil::random_factors(shape, 4, rng);
        const double sup = cp_infinity_norm(factors);
        const double bound = std::pow(max2_upper_bound(factors), shape.order());
        EXPECT_LE(sup, bound * (1.0 + 1e-12));
    }
}

TEST(CpInfinityNorm, MatchesDenseSupNorm) {
    Rng rng(18);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        const CPFactors factors = testutil::random_factors(shape, 3, rng);
        EXPECT_TRUE(testutil::close_rel(cp_infinity_norm(factors),
                                        norm(cp_compose(factors), NormKind::infinity()), 1e-12));
    }
}

TEST(InnerProduct, MatchesDirectLoop) {
    Rng rng(19);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        const DenseTensor a = testutil::random_dense(shape, rng);
        const DenseTensor b = testutil::random_dense(shape, rng);
        double expected = 0.0;
        for (std::int64_t c = 0; c < a.size(); ++c) expected += a[c] * b[c];
        EXPECT_TRUE(testutil::close_rel(inner_product(a, b), expected, 1e-12));
    }
    EXPECT_THROW((void)inner_product(DenseTensor::zeros(Shape({2, 2})),
                                     DenseTensor::zeros(Shape({2, 3}))),
                 structural_error);
}

TEST(PopulationSqNorm, MatchesDirectLoop) {
    Rng rng(20);
    for (const auto& dims : kSmallShapes) {
        const Shape shape(dims);
        const DenseTensor a = testutil::random_dense(shape, rng);
        const DenseTensor b = testutil::random_dense(shape, rng);
        double expected = 0.0;
        for (std::int64_t c = 0; c < a.size(); ++c) {
            expected += (a[c] - b[c]) * (a[c] - b[c]);
        }
        expected /= static_cast<double>(a.size());
        EXPECT_TRUE(testutil::close_rel(population_sq_norm_uniform(a, b), expected, 1e-12));
        EXPECT_EQ(population_sq_norm_uniform(a, a), 0.0);
    }
}

TEST(SumTerms, LongAccumulationStaysAccurate) {
    const std::int64_t n = 3'000'000;
    long double reference = 0.0L;
    const auto term = [](std::int64_t i) {
        return 1.0 / static_cast<double>(i + 1) - 0.2 * static_cast<double>(i % 5);
    };
    for (std::int64_t i = 0; i < n; ++i) reference += static_cast<long double>(term(i));
    const double total = cpbayes::detail::sum_terms(n, term);
    EXPECT_TRUE(testutil::close_rel(total, static_cast<double>(reference), 1e-9))
        << total << " vs " << static_cast<double>(reference);
}

}  // namespace
