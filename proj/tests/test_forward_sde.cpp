#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "bsdelab/forward_sde.hpp"

using namespace bsdelab;

namespace {

SdeSpec one_dim(double x0, double drift, double sigma, std::vector<double> jump = {}, std::vector<double> weights = {}) {
    AffineSdeParams p;
    p.x0 = {x0};
    p.drift_const = {drift};
    p.sigma = {sigma};
    for (std::size_t k = 0; k < jump.size(); ++k) {
        p.jump_const.push_back({jump[k]});
        p.jumps.marks.push_back(static_cast<double>(k + 1));
    }
    p.jumps.weights = weights;
    return make_affine_sde(p);
}

}  // namespace

TEST(Simulate, ZeroDynamicsStayAtStart) {
    const auto b = simulate(one_dim(0.7, 0.0, 0.0), TimeGrid(1.0, 20), 50, 3);
    for (std::size_t m = 0; m < b.paths(); ++m)
        for (std::size_t i = 0; i <= 20; ++i) ASSERT_EQ(b.state(m, i)[0], 0.7);
}

TEST(Simulate, DeterministicDrift) {
    const auto b = simulate(one_dim(0.2, 1.0, 0.0), TimeGrid(1.0, 50), 20, 3);
    for (std::size_t m = 0; m < b.paths(); ++m) EXPECT_NEAR(b.state(m, 50)[0], 1.2, 1e-12);
}

TEST(Simulate, CompensatedJumpsAreCentred) {
    const auto b = simulate(one_dim(0.0, 0.0, 0.0, {1.0, -0.5}, {1.5, 0.5}), TimeGrid(1.0, 50), 40000, 11);
    const auto xt = b.coordinate(50);
    const auto ms = mean_and_se(xt);
    EXPECT_LT(std::abs(ms.mean), 3.0 * ms.se);
    std::size_t events = 0;
    for (std::size_t m = 0; m < b.paths(); ++m) events += b.total_jumps(m);
    const double rate = static_cast<double>(events) / static_cast<double>(b.paths());
    EXPECT_NEAR(rate, 2.0, 3.0 * std::sqrt(2.0 / b.paths()));
}

TEST(Simulate, BrownianIncrementVariance) {
    const auto b = simulate(one_dim(0.0, 0.0, 2.0), TimeGrid(1.0, 10), 40000, 5);
    const auto xt = b.coordinate(10);
    double s2 = 0.0;
    for (double v : xt) s2 += v * v;
    EXPECT_NEAR(s2 / xt.size(), 4.0, 4.0 * 4.0 * std::sqrt(2.0 / xt.size()));
}

TEST(Simulate, IncrementsReproduceStates) {
    const auto b = simulate(one_dim(1.0, 0.3, 0.5), TimeGrid(1.0, 8, 2.0), 100, 8);
    for (std::size_t m = 0; m < b.paths(); ++m) {
        double x = 1.0;
        for (std::size_t i = 0; i < 8; ++i) x += 0.3 * b.grid().dt(i) + 0.5 * b.dw(m, i)[0];
        EXPECT_NEAR(b.state(m, 8)[0], x, 1e-12);
    }
}

TEST(Simulate, IndependentOfThreadCount) {
    const auto sde = one_dim(0.0, 0.1, 1.0, {0.3}, {2.0});
    setenv("BSDE_LAB_THREADS", "1", 1);
    const auto a = simulate(sde, TimeGrid(1.0, 16), 3000, 77);
    setenv("BSDE_LAB_THREADS", "4", 1);
    const auto b = simulate(sde, TimeGrid(1.0, 16), 3000, 77);
    unsetenv("BSDE_LAB_THREADS");
    EXPECT_EQ(a.raw_states(), b.raw_states());
    EXPECT_EQ(a.raw_counts(), b.raw_counts());
    const auto c = simulate(sde, TimeGrid(1.0, 16), 3000, 78);
    EXPECT_NE(a.raw_states(), c.raw_states());
}

TEST(Simulate, PathPrefixDoesNotDependOnPathCount) {
    const auto sde = one_dim(0.0, 0.0, 1.0);
    const auto small = simulate(sde, TimeGrid(1.0, 4), 10, 2);
    const auto large = simulate(sde, TimeGrid(1.0, 4), 1000, 2);
    for (std::size_t m = 0; m < 10; ++m) EXPECT_EQ(small.state(m, 4)[0], large.state(m, 4)[0]);
}

TEST(Simulate, RejectsEmptyInput) {
    EXPECT_THROW(simulate(one_dim(0.0, 0.0, 1.0), TimeGrid(1.0, 4), 0, 1), SchemaError);
    AffineSdeParams p;
    p.x0 = {0.0, 0.0};
    p.sigma = {1.0};
    EXPECT_THROW(make_affine_sde(p), SchemaError);
}

TEST(ConditionE, InwardJumpsPass) {
    const auto s = SingularSet::half_line(0.0, -1, 0.4);
    EXPECT_TRUE(check_condition_E(one_dim(0.0, 0.0, 1.0, {-0.5}, {1.0}), s).pass);
}

TEST(ConditionE, OutwardJumpFailsAtBoundary) {
    const auto s = SingularSet::half_line(0.0, -1, 0.4);
    const auto rep = check_condition_E(one_dim(0.0, 0.0, 1.0, {0.5}, {1.0}), s);
    ASSERT_FALSE(rep.pass);
    bool at_zero = false;
    for (const auto& c : rep.counterexamples) at_zero = at_zero || (c.on_boundary && c.x[0] == 0.0);
    EXPECT_TRUE(at_zero);
}

TEST(ConditionE, ZeroJumpViolatesMargin) {
    const auto s = SingularSet::half_line(0.0, -1, 0.1);
    const auto rep = check_condition_E(one_dim(0.0, 0.0, 1.0, {0.0}, {1.0}), s);
    ASSERT_FALSE(rep.pass);
    for (const auto& c : rep.counterexamples) EXPECT_TRUE(c.on_boundary);
}

TEST(ConditionE, ShrinkingJumpsKeepBall) {
    AffineSdeParams p;
    p.x0 = {0.0, 0.0};
    p.sigma = {1.0, 0.0, 0.0, 1.0};
    p.jump_const = {{0.0, 0.0}};
    p.jump_linear = {-0.5};
    p.jumps = JumpMeasure{{1.0}, {1.0}};
    const auto sde = make_affine_sde(p);
    EXPECT_TRUE(check_condition_E(sde, SingularSet::ball({0.0, 0.0}, 1.0, 0.4)).pass);
    EXPECT_FALSE(check_condition_E(sde, SingularSet::ball({0.0, 0.0}, 1.0, 0.6)).pass);
}

TEST(SingularSet, SignedDistances) {
    const auto h = SingularSet::half_line(1.0, -1, 0.1);
    EXPECT_DOUBLE_EQ(h.distance(std::vector<double>{3.0}), 2.0);
    EXPECT_TRUE(h.contains(std::vector<double>{0.5}));
    const auto b = SingularSet::ball({0.0, 0.0}, 1.0, 0.1);
    EXPECT_DOUBLE_EQ(b.distance(std::vector<double>{3.0, 4.0}), 4.0);
    const auto c = SingularSet::complement_of_ball({0.0, 0.0}, 1.0, 0.1);
    EXPECT_DOUBLE_EQ(c.distance(std::vector<double>{0.0, 0.5}), 0.5);
    EXPECT_TRUE(c.contains(std::vector<double>{2.0, 0.0}));
}

TEST(Bump, PlateauSupportAndTransition) {
    const double eps = 0.2;
    const auto s = SingularSet::half_line(0.0, -1, 0.4);
    const auto phi = build_bump(s, eps, 5.0, 1.0);
    EXPECT_DOUBLE_EQ(phi(std::vector<double>{2.0 * eps}), 1.0);
    EXPECT_DOUBLE_EQ(phi(std::vector<double>{-0.3}), 0.0);
    EXPECT_DOUBLE_EQ(phi(std::vector<double>{0.25 * eps}), 0.0);
    const double mid = phi(std::vector<double>{0.75 * eps});
    EXPECT_GT(mid, 0.0);
    EXPECT_LT(mid, 1.0);
}

TEST(Bump, RejectsSmallExponent) {
    const auto s = SingularSet::half_line(0.0, -1, 0.4);
    EXPECT_THROW(build_bump(s, 0.1, 4.0, 1.0), PreconditionError);
    EXPECT_NO_THROW(build_bump(s, 0.1, 4.01, 1.0));
    EXPECT_THROW(build_bump(s, 0.0, 5.0, 1.0), SchemaError);
}

TEST(Bump, DerivativesMatchFiniteDifferences) {
    const auto s = SingularSet::complement_of_ball({0.0, 0.0}, 2.0, 0.3);
    const auto phi = build_bump(s, 0.5, 6.0, 2.0);
    const std::vector<double> x{0.9, 0.7};
    const double h = 1e-5;
    const auto g = phi.gradient(x);
    const auto H = phi.hessian(x);
    for (std::size_t i = 0; i < 2; ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        EXPECT_NEAR(g[i], (phi(xp) - phi(xm)) / (2.0 * h), 1e-6);
        const auto gp = phi.gradient(xp), gm = phi.gradient(xm);
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(H[j * 2 + i], (gp[j] - gm[j]) / (2.0 * h), 1e-5);
    }
}

TEST(Bump, SingularProbeComplementsBump) {
    const auto s = SingularSet::half_line(0.0, -1, 0.4);
    const auto phi = build_bump(s, 0.2, 5.0, 1.0);
    const auto probe = build_singular_probe(s, 0.2, 5.0, 1.0);
    EXPECT_FALSE(probe.avoids_singular_set());
    for (double x : {-1.0, 0.0, 0.13, 0.17, 0.5}) {
        const std::vector<double> v{x};
        EXPECT_NEAR(phi(v) + probe(v), 1.0, 1e-15);
    }
}
