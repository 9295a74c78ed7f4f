#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bsdelab/core.hpp"

using namespace bsdelab;

TEST(Philox, MatchesPublishedKnownAnswers) {
    using P = Philox4x32;
    EXPECT_EQ(P::generate({0, 0, 0, 0}, {0, 0}), (P::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(P::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (P::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(P::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (P::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(StreamCell, CellsAreReproducibleAndDistinct) {
    StreamCell a(42, 7, 3), b(42, 7, 3), c(42, 7, 4), d(43, 7, 3);
    const double va = a.uniform53();
    EXPECT_EQ(va, b.uniform53());
    EXPECT_NE(va, c.uniform53());
    EXPECT_NE(va, d.uniform53());
}

TEST(StreamCell, NormalMomentsWithinSamplingError) {
    const std::size_t n = 200000;
    double s = 0.0, s2 = 0.0, s4 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        StreamCell cell(1, i, 0);
        const double z = cell.normal();
        s += z;
        s2 += z * z;
        s4 += z * z * z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(double(n)));
    EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
    EXPECT_NEAR(s4 / n, 3.0, 4.0 * std::sqrt(96.0 / n));
}

TEST(StreamCell, PoissonMeanAndVariance) {
    const std::size_t n = 200000;
    const double mean = 0.3;
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        StreamCell cell(9, i, 2);
        const double k = cell.poisson(mean);
        s += k;
        s2 += k * k;
    }
    const double m = s / n;
    EXPECT_NEAR(m, mean, 4.0 * std::sqrt(mean / n));
    EXPECT_NEAR(s2 / n - m * m, mean, 0.01);
}

TEST(StreamCell, UniformStaysInOpenUnitInterval) {
    StreamCell cell(0, 0, 0);
    for (int i = 0; i < 10000; ++i) {
        const double u = cell.uniform53();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(TimeGrid, UniformAndGraded) {
    const TimeGrid g(2.0, 4);
    EXPECT_DOUBLE_EQ(g[0], 0.0);
    EXPECT_DOUBLE_EQ(g[2], 1.0);
    EXPECT_DOUBLE_EQ(g[4], 2.0);
    EXPECT_DOUBLE_EQ(g.dt(1), 0.5);
    const TimeGrid r(1.0, 10, 3.0);
    for (std::size_t i = 1; i < r.steps(); ++i) EXPECT_LT(r.dt(i), r.dt(i - 1));
    EXPECT_NEAR(r.time_to_maturity(9), 1e-3, 1e-15);
    EXPECT_EQ(r.nearest_index(1.0), 10u);
    EXPECT_EQ(g.nearest_index(0.74), 1u);
}

TEST(TimeGrid, RejectsInvalidInput) {
    EXPECT_THROW(TimeGrid(0.0, 4), SchemaError);
    EXPECT_THROW(TimeGrid(1.0, 0), SchemaError);
    EXPECT_THROW(TimeGrid(1.0, 4, 0.5), SchemaError);
    EXPECT_THROW(TimeGrid::from_times({0.0, 0.5, 0.5, 1.0}), SchemaError);
    EXPECT_THROW(TimeGrid::from_times({0.1, 1.0}), SchemaError);
}

TEST(Roots, IncreasingFunction) {
    const auto r = solve_increasing([](double y) { return y * y * y + y - 10.0; }, 0.0);
    EXPECT_NEAR(r.root, 2.0, 1e-12);
    const auto far = solve_increasing([](double y) { return y - 1e6; }, -3.0);
    EXPECT_NEAR(far.root, 1e6, 1e-6);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<int> hits(10000, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    EXPECT_EQ(std::accumulate(hits.begin(), hits.end(), 0), 10000);
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

TEST(Statistics, MeanAndStandardError) {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto ms = mean_and_se(v);
    EXPECT_DOUBLE_EQ(ms.mean, 2.5);
    EXPECT_NEAR(ms.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
    EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}
