#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bsdelab/generator.hpp"

using namespace bsdelab;

namespace {

JumpMeasure single_mark(double w = 1.0) { return JumpMeasure{{1.0}, {w}}; }

}  // namespace

TEST(EvalGenerator, ToyPowerTerm) {
    const auto s = make_toy(1.0);
    EXPECT_DOUBLE_EQ(eval_generator(s, 0.3, 2.0), -4.0);
    EXPECT_DOUBLE_EQ(eval_generator(s, 0.3, -2.0), 4.0);
}

TEST(EvalGenerator, PowerSourceOnlyAtZero) {
    const auto s = make_power(1.0, 0.0, 0.0);
    for (double t : {0.0, 0.4, 0.9}) EXPECT_DOUBLE_EQ(eval_generator(s, t, 0.0), 1.0);
}

TEST(EvalGenerator, ControlWithInfinitePenalty) {
    const double q = 1.0;
    const auto s = make_control(q, constant_control(std::pow(1.0 / q, 1.0 / q), kInf, 0.0), single_mark());
    const std::vector<double> u{0.0};
    EXPECT_DOUBLE_EQ(eval_generator(s, 0.2, 3.0, {}, u), -9.0);
}

TEST(EvalGenerator, SingularFamilyRejectsTerminalTime) {
    const auto s = make_power(1.0, 0.0, 0.5);
    EXPECT_THROW(eval_generator(s, 1.0, 1.0), DomainError);
    EXPECT_NO_THROW(eval_generator(make_toy(2.0), 1.0, 1.0));
}

TEST(EvalBetaHat, IndicatorAndLimits) {
    const auto s = make_control(1.0, constant_control(1.0, 1.0, 0.0), JumpMeasure{{1.0, 2.0}, {1.0, 0.5}});
    const std::vector<double> negative{-2.0, -3.0};
    EXPECT_DOUBLE_EQ(eval_beta_hat(s, 0.0, 1.0, negative), 0.0);
    const auto inf = make_control(1.0, constant_control(1.0, kInf, 0.0), single_mark());
    EXPECT_DOUBLE_EQ(eval_beta_hat(inf, 0.0, 5.0, std::vector<double>{1.0}), 0.0);
}

TEST(EvalBetaHat, SingleMarkUnitValues) {
    const auto s = make_control(1.0, constant_control(1.0, 1.0, 0.0), single_mark());
    EXPECT_NEAR(eval_beta_hat(s, 0.0, 0.4, std::vector<double>{0.6}), 0.5, 1e-15);
}

TEST(EvalBetaHat, MatchesDirectFormula) {
    for (double q : {0.5, 1.0, 2.0, 3.5}) {
        for (double beta : {0.1, 1.0, 7.0}) {
            const auto s = make_control(q, constant_control(1.0, beta, 0.0), single_mark(2.0));
            for (double w : {1e-6, 0.3, 1.0, 40.0}) {
                const double direct = 2.0 * w * (1.0 - beta / std::pow(std::pow(w, q) + std::pow(beta, q), 1.0 / q));
                EXPECT_NEAR(eval_beta_hat(s, 0.0, w, std::vector<double>{0.0}), direct, 1e-12 * (1.0 + direct));
            }
        }
    }
}

TEST(Truncation, ReplacesSourceByItsMinimum) {
    const auto s = make_power(1.0, 0.0, 1.5);
    const double t = 0.99;
    const double f0 = std::pow(0.01, -1.5);
    EXPECT_NEAR(eval_truncated(s, t, 0.5, {}, {}, 10.0), eval_generator(s, t, 0.5) - f0 + 10.0, 1e-9);
}

TEST(Truncation, SourceIntegralMatchesQuadrature) {
    const auto s = make_power(2.0, 0.0, 1.2);
    for (double n : {0.5, 3.0, 50.0, 1e6}) {
        const double tau0 = 0.3, tau1 = 0.001;
        const double exact = truncated_source_integral(s, tau0, tau1, n);
        const double numeric = detail::integrate_smooth(
            [&](double u) {
                const double tau = std::exp(u);
                return std::min(std::pow(tau, -1.2), n) * tau;
            },
            std::log(tau1), std::log(tau0));
        EXPECT_NEAR(exact, numeric, 1e-6 * exact);
    }
}

TEST(Rho, Substitution) {
    EXPECT_NEAR(rho(4.0, 1.1, 0.05), 0.5 + 2.0 * (1.0 - 1.0 / 1.1) + 0.1 / 1.1, 1e-15);
    EXPECT_NEAR(rho(4.0, 1.1, 0.05), 0.7727, 1e-4);
    EXPECT_DOUBLE_EQ(rho(8.0, 1.0, 0.0), 0.25);
    EXPECT_DOUBLE_EQ(rho(2.0, 1.0, 0.0), 1.0);
    EXPECT_THROW(rho(2.0, 0.9, 0.0), DomainError);
    EXPECT_THROW(rho(2.0, 1.1, 1.0), DomainError);
}

TEST(Rho, BelowOneExactlyWhenQAboveTwo) {
    for (double q : {1.0, 1.9, 2.0, 2.1, 3.0, 10.0}) {
        const double r = rho(q, 1.0 + 1e-9, 1e-9);
        EXPECT_EQ(r < 1.0, q > 2.0) << "q=" << q;
    }
}

TEST(APrioriBound, ClosedForms) {
    EXPECT_NEAR(a_priori_bound(make_toy(2.0), 0.5), 1.0, 1e-15);
    EXPECT_NEAR(a_priori_bound(make_toy(1.0), 0.0), 1.0, 1e-15);
    EXPECT_NEAR(a_priori_bound(make_power(1.0, 0.0, 0.0), 0.0), 4.0 / 3.0, 1e-15);
    EXPECT_TRUE(std::isinf(a_priori_bound(make_toy(1.0), 1.0)));
}

TEST(APrioriBound, ToyNonincreasingAndDiverging) {
    const auto s = make_toy(3.0);
    double prev = 0.0;
    for (double t = 0.0; t < 1.0; t += 0.01) {
        const double b = a_priori_bound(s, t);
        EXPECT_GE(b, prev);
        prev = b;
    }
    EXPECT_GT(a_priori_bound(s, 1.0 - 1e-12), 1e3);
}

TEST(CheckConditions, ToyAboveTwoSatisfiesEverything) {
    auto s = make_toy(3.0);
    s.ell = 1.01;
    s.eta = 0.01;
    const auto rep = check_conditions(s, {});
    for (const char* n : {"A", "A*", "B", "A8", "A9", "g"}) EXPECT_TRUE(rep.holds(n)) << n;
    EXPECT_EQ(rep.first_problem(), nullptr);
}

TEST(CheckConditions, PowerNonIntegrableSource) {
    const auto rep = check_conditions(make_power(3.0, 0.0, 1.0), {});
    EXPECT_EQ(rep.verdict("A8"), Verdict::Fails);
}

TEST(CheckConditions, PowerVarsigmaOutOfRange) {
    const double q = 1.5;
    const auto rep = check_conditions(make_power(q, q + 1.0, 0.0), {});
    EXPECT_EQ(rep.verdict("A6"), Verdict::Fails);
    EXPECT_EQ(rep.verdict("power_varsigma_range"), Verdict::Fails);
}

TEST(CheckConditions, PowerA6ThresholdAtTwoPlusInverseQ) {
    // with ell -> 1 the bound is varpi < 2 + 1/q
    for (double varpi : {1.6, 2.9}) EXPECT_TRUE(check_conditions(make_power(1.0, 0.0, varpi), {}).holds("A6")) << varpi;
    EXPECT_EQ(check_conditions(make_power(1.0, 0.0, 3.2), {}).verdict("A6"), Verdict::Fails);
}

TEST(CheckConditions, ControlWithFinitePenalty) {
    const auto jm = JumpMeasure{{1.0, 2.0}, {0.5, 1.5}};
    auto s = make_control(3.0, constant_control(1.0, 2.0, 0.5), jm);
    const auto rep = check_conditions(s, jm);
    for (const char* n : {"A1", "A3", "A4", "A5", "B", "g"}) EXPECT_TRUE(rep.holds(n)) << n;
}

TEST(CheckConditions, IncreasingDriverViolatesMonotonicity) {
    auto s = make_polynomial(1.0, 0.0, 0.0, 0.0, 0.0);
    s.custom = [](double, double y, std::span<const double>, std::span<const double>) { return y; };
    EXPECT_EQ(check_conditions(s, {}).verdict("A1"), Verdict::Fails);
}

TEST(CheckConditions, ZLipschitzConstantIsEnforced) {
    auto s = make_polynomial(2.0, 1.0, 0.0, 0.0, 0.5);
    EXPECT_TRUE(check_conditions(s, {}).holds("A3"));
    s.L = 0.25;
    EXPECT_EQ(check_conditions(s, {}).verdict("A3"), Verdict::Fails);
}

TEST(ConclusionRegime, ToyNeedsQAboveTwo) {
    EXPECT_TRUE(conclusion_regime(make_toy(3.0), {}).holds);
    EXPECT_TRUE(conclusion_regime(make_toy(2.5), {}).holds);
    EXPECT_FALSE(conclusion_regime(make_toy(2.0), {}).holds);
    EXPECT_FALSE(conclusion_regime(make_toy(1.0), {}).holds);
}

TEST(ConclusionRegime, PowerLattice) {
    // -1 < varsigma < q, 2(1 + varsigma) < q and varpi < 1
    EXPECT_TRUE(conclusion_regime(make_power(4.0, 0.5, 0.5), {}).holds);
    EXPECT_FALSE(conclusion_regime(make_power(4.0, 1.5, 0.5), {}).holds);
    EXPECT_FALSE(conclusion_regime(make_power(4.0, 0.5, 1.0), {}).holds);
    EXPECT_FALSE(conclusion_regime(make_power(4.0, -1.0, 0.0), {}).holds);
}

TEST(GFunction, StandardShape) {
    const auto g = GFunction::standard(2.0);
    EXPECT_DOUBLE_EQ(g(0.0), -1.0);
    EXPECT_DOUBLE_EQ(g.prime(0.0), -1.0);
    EXPECT_DOUBLE_EQ(g(1.0), -3.0);
    EXPECT_DOUBLE_EQ(GFunction::quadratic()(1.0), -4.0);
    EXPECT_DOUBLE_EQ(GFunction::exponential()(0.0), -1.0);
}

TEST(JumpMeasure, Validation) {
    EXPECT_THROW((JumpMeasure{{1.0, 1.0}, {1.0, 1.0}}.validate()), SchemaError);
    EXPECT_THROW((JumpMeasure{{1.0}, {0.0}}.validate()), SchemaError);
    EXPECT_THROW((JumpMeasure{{1.0}, {1.0, 2.0}}.validate()), SchemaError);
    EXPECT_DOUBLE_EQ((JumpMeasure{{1.0, 2.0}, {1.0, 2.5}}.total_intensity()), 3.5);
}

TEST(ConclusionRegime, ControlNeedsQAboveTwoForLargeQ) {
    const auto jm = single_mark();
    for (double q : {2.5, 4.0, 6.0, 8.0}) {
        const auto s = make_control(q, constant_control(1.0, 2.0, 0.5), jm);
        EXPECT_EQ(check_conditions(s, jm).verdict("A4"), Verdict::Holds) << "q=" << q;
        EXPECT_TRUE(conclusion_regime(s, jm).holds) << "q=" << q;
    }
    EXPECT_FALSE(conclusion_regime(make_control(2.0, constant_control(1.0, 2.0, 0.5), jm), jm).holds);
}
