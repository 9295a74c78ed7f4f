#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bsdelab/forward_sde.hpp"
#include "bsdelab/regression.hpp"

using namespace bsdelab;

namespace {

std::vector<double> normal_sample(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::vector<double> x(n);
    for (std::size_t m = 0; m < n; ++m) x[m] = scale * StreamCell(seed, m, 0).normal();
    return x;
}

const BasisSpec kBases[] = {{BasisKind::Polynomial, 3, 10}, {BasisKind::Partition, 3, 10}, {BasisKind::LocalLinear, 3, 8}};

}  // namespace

TEST(Regression, ConstantTargetsAreReproduced) {
    const auto x = normal_sample(2000, 1);
    const std::vector<double> y(x.size(), 2.5);
    for (const auto& spec : kBases) {
        const auto fit = regress_conditional(y, x, 1, spec);
        for (double v : fit.fitted) ASSERT_NEAR(v, 2.5, 1e-10) << basis_name(spec.kind);
    }
}

TEST(Regression, IdentityIsExactForLinearBases) {
    const auto x = normal_sample(2000, 2);
    for (const auto& spec : {kBases[0], kBases[2]}) {
        const auto fit = regress_conditional(x, x, 1, spec);
        for (std::size_t m = 0; m < x.size(); ++m) ASSERT_NEAR(fit.fitted[m], x[m], 1e-9) << basis_name(spec.kind);
    }
}

TEST(Regression, PredictAgreesWithFittedValues) {
    const auto x = normal_sample(3000, 3);
    std::vector<double> y(x.size());
    for (std::size_t m = 0; m < x.size(); ++m) y[m] = std::sin(x[m]) + 0.1 * StreamCell(9, m, 1).normal();
    for (const auto& spec : kBases) {
        const Regressor reg(spec, x, 1);
        const auto fit = reg.fit(y);
        for (std::size_t m = 0; m < x.size(); m += 97) {
            EXPECT_NEAR(reg.predict(fit.coefficients, std::span<const double>(&x[m], 1)), fit.fitted[m], 1e-9)
                << basis_name(spec.kind);
        }
    }
}

TEST(Regression, MartingaleProjection) {
    AffineSdeParams p;
    p.x0 = {0.0};
    p.sigma = {1.0};
    const auto b = simulate(make_affine_sde(p), TimeGrid(1.0, 2), 20000, 4);
    const auto xi = b.coordinate(1), xn = b.coordinate(2);
    for (const auto& spec : {kBases[0], kBases[2]}) {
        const auto fit = regress_conditional(xn, xi, 1, spec);
        std::size_t bad = 0;
        for (std::size_t m = 0; m < xi.size(); ++m) {
            if (std::abs(fit.fitted[m] - xi[m]) > 3.0 * fit.se[m] + 1e-12 && std::abs(xi[m]) < 2.0) ++bad;
        }
        EXPECT_LT(static_cast<double>(bad) / xi.size(), 0.05) << basis_name(spec.kind);
    }
}

TEST(Regression, TwoDimensionalPolynomial) {
    const std::size_t n = 3000;
    std::vector<double> x(2 * n), y(n);
    for (std::size_t m = 0; m < n; ++m) {
        StreamCell c(5, m, 0);
        x[2 * m] = c.normal();
        x[2 * m + 1] = c.normal();
        y[m] = 1.0 + 2.0 * x[2 * m] - x[2 * m + 1] + x[2 * m] * x[2 * m + 1];
    }
    const auto fit = regress_conditional(y, x, 2, {BasisKind::Polynomial, 2, 10});
    for (std::size_t m = 0; m < n; ++m) ASSERT_NEAR(fit.fitted[m], y[m], 1e-8);
}

TEST(Regression, DegenerateDesignFallsBackToPartition) {
    std::vector<double> x(1000, 1.0);
    for (std::size_t m = 0; m < 500; ++m) x[m] = 0.0;
    std::vector<double> y(x.size());
    for (std::size_t m = 0; m < x.size(); ++m) y[m] = x[m] * 3.0;
    const Regressor reg({BasisKind::Polynomial, 4, 10}, x, 1);
    EXPECT_TRUE(reg.fallback());
    EXPECT_EQ(reg.kind(), BasisKind::Partition);
    const auto fit = reg.fit(y);
    for (std::size_t m = 0; m < x.size(); ++m) ASSERT_NEAR(fit.fitted[m], y[m], 1e-12);
}

TEST(Regression, SampleSizeGuard) {
    const auto x = normal_sample(30, 6);
    EXPECT_THROW(Regressor({BasisKind::Polynomial, 3, 10}, x, 1), PreconditionError);
    EXPECT_THROW(Regressor({BasisKind::Polynomial, 3, 10}, x, 4), SchemaError);
}

TEST(Regression, ResidualsOrthogonalToBasis) {
    const auto x = normal_sample(5000, 7);
    std::vector<double> y(x.size());
    for (std::size_t m = 0; m < x.size(); ++m) y[m] = std::exp(0.5 * x[m]) + StreamCell(8, m, 0).normal();
    const auto fit = regress_conditional(y, x, 1, kBases[0]);
    for (int k = 0; k <= 3; ++k) {
        double s = 0.0;
        for (std::size_t m = 0; m < x.size(); ++m) s += (y[m] - fit.fitted[m]) * std::pow(x[m], k);
        EXPECT_NEAR(s / x.size(), 0.0, 1e-8);
    }
}
