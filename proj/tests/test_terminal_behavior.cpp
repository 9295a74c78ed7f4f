#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bsdelab/terminal_behavior.hpp"

using namespace bsdelab;

namespace {

SdeSpec line_sde(double sigma, std::vector<double> jump = {}, std::vector<double> weights = {}) {
    AffineSdeParams p;
    p.x0 = {0.5};
    p.sigma = {sigma};
    for (std::size_t k = 0; k < jump.size(); ++k) {
        p.jump_const.push_back({jump[k]});
        p.jumps.marks.push_back(static_cast<double>(k));
    }
    p.jumps.weights = weights;
    return make_affine_sde(p);
}

SolverOptions cells(int bins = 20) {
    SolverOptions o;
    o.basis = {BasisKind::Partition, 0, bins};
    return o;
}

TerminalCondition singular_sine(double amplitude = 0.5) {
    return TerminalCondition::singular(SingularSet::half_line(0.0, -1, 0.4),
                                       [amplitude](std::span<const double> x) { return 1.0 + amplitude * std::sin(3.0 * x[0]); });
}

}  // namespace

TEST(WeightedNorm, ZeroCoefficientsGiveZero) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 20), 1000, 1);
    const auto tc = TerminalCondition::regular([](std::span<const double>) { return 2.0; });
    const auto sols = solve_levels(make_polynomial(4.0, 0.0, 0.0, 0.0, 0.0), tc, b, cells(), {1.0, 4.0, 16.0});
    const auto rep = weighted_zu_norm(sols, b.intensities(), 0.6, 1.0);
    for (double v : rep.values) EXPECT_NEAR(v, 0.0, 1e-20);
    EXPECT_TRUE(rep.bounded);
}

TEST(WeightedNorm, HeavierDampingDecreasesValues) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 40), 4000, 2);
    const auto sols = solve_levels(make_toy(4.0), singular_sine(), b, cells(), {1.0, 16.0});
    const auto r0 = weighted_zu_norm(sols, b.intensities(), 0.6, 1.1);
    const auto r1 = weighted_zu_norm(sols, b.intensities(), 1.6, 1.1);
    for (std::size_t j = 0; j < sols.size(); ++j) {
        EXPECT_GT(r0.values[j], 0.0);
        EXPECT_LT(r1.values[j], r0.values[j]);
    }
}

TEST(WeightedNorm, BoundedAcrossLevelsForToyQ4) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 50), 10000, 3);
    const auto sols = solve_levels(make_toy(4.0), singular_sine(1.0), b, cells(), {1.0, 4.0, 16.0, 64.0});
    const auto rep = weighted_zu_norm(sols, b.intensities(), rho(4.0, 1.1, 0.05), 1.1, 0.05);
    EXPECT_LE(rep.ratio, 2.0);
    EXPECT_TRUE(rep.bounded);
}

TEST(WeightedNorm, RejectsMismatchedInputs) {
    const auto sde = line_sde(1.0);
    const auto b1 = simulate(sde, TimeGrid(1.0, 10), 500, 4);
    const auto b2 = simulate(sde, TimeGrid(1.0, 12), 500, 4);
    const auto tc = TerminalCondition::regular([](std::span<const double>) { return 1.0; });
    std::vector<BsdeSolution> sols{solve_truncated(make_toy(4.0), tc, b1, cells(), 1.0),
                                   solve_truncated(make_toy(4.0), tc, b2, cells(), 1.0)};
    EXPECT_THROW(weighted_zu_norm(sols, {}, 0.6, 1.0), SchemaError);
    EXPECT_THROW(weighted_zu_norm({sols[0]}, std::vector<double>{1.0}, 0.6, 1.0), SchemaError);
}

TEST(Continuity, BoundedTerminalWithZeroDriver) {
    const auto sde = line_sde(0.5);
    const auto b = simulate(sde, TimeGrid(1.0, 30), 20000, 5);
    // singular set far from the paths, so phi = 1 on every sampled state
    const auto tc = TerminalCondition::singular(SingularSet::half_line(-50.0, -1, 1.0),
                                                [](std::span<const double> x) { return 1.0 + std::tanh(x[0]); });
    const auto gen = make_polynomial(4.0, 0.0, 0.0, 0.0, 0.0);
    const auto sols = solve_levels(gen, tc, b, SolverOptions{}, {10.0});
    const auto rep = continuity_test(gen, sde, sols, tc, b);
    EXPECT_TRUE(rep.levels[0].final_gap_small);
    EXPECT_LT(rep.levels[0].gap.back(), 3.0 * rep.levels[0].gap_se.back());
}

TEST(Continuity, GapShrinksForToyWithInwardJumps) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    // graded grid: the last step is 1e-5, so discretization bias sits below the sampling error
    const auto b = simulate(sde, TimeGrid(1.0, 100, 2.5), 50000, 6);
    const auto gen = make_toy(4.0);
    const auto tc = singular_sine();
    const auto sols = solve_levels(gen, tc, b, cells(40), {10.0, 100.0, 1000.0});
    const auto rep = continuity_test(gen, sde, sols, tc, b);
    for (const auto& lv : rep.levels) {
        EXPECT_TRUE(lv.gap_decreasing) << "n=" << lv.n;
        EXPECT_TRUE(lv.final_gap_small) << "n=" << lv.n;
    }
    EXPECT_TRUE(rep.continuity);
    EXPECT_GT(rep.probe_terminal_mass, 0.0);
}

TEST(Continuity, ProbeDivergesNearMaturity) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 100, 6.0), 5000, 11);
    const auto gen = make_toy(4.0);
    const auto tc = singular_sine();
    const auto sols = solve_levels(gen, tc, b, cells(), {10.0, 100.0, 1000.0});
    const auto rep = continuity_test(gen, sde, sols, tc, b);
    EXPECT_LT(rep.levels[0].probe_last, rep.levels[1].probe_last);
    EXPECT_LT(rep.levels[1].probe_last, rep.levels[2].probe_last);
    ASSERT_EQ(rep.crossed_at.size(), 3u);
    EXPECT_EQ(rep.crossed_at[1], 1000.0);
}

TEST(Continuity, RejectsTestFunctionMeetingSingularSet) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 10), 500, 7);
    const auto gen = make_toy(4.0);
    const auto tc = singular_sine();
    const auto sols = solve_levels(gen, tc, b, cells(), {1.0});
    const auto probe = build_singular_probe(*tc.singular_set, 0.1, 5.0, 4.0);
    try {
        continuity_test(gen, sde, sols, tc, b, {}, probe);
        FAIL() << "expected a refusal";
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("bump_support"), std::string::npos);
    }
}

TEST(Continuity, RefusesWhenJumpsLeaveTheSet) {
    const auto sde = line_sde(1.0, {0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 10), 500, 8);
    const auto gen = make_toy(4.0);
    const auto tc = singular_sine();
    const auto sols = solve_levels(gen, tc, b, cells(), {1.0});
    EXPECT_THROW(continuity_test(gen, sde, sols, tc, b), PreconditionError);
}

TEST(Continuity, RefusesWithoutExponentBalance) {
    const auto sde = line_sde(1.0, {-0.5}, {1.0});
    const auto b = simulate(sde, TimeGrid(1.0, 10), 500, 9);
    const auto gen = make_toy(2.0);
    const auto tc = singular_sine();
    const auto sols = solve_levels(gen, tc, b, cells(), {1.0});
    try {
        continuity_test(gen, sde, sols, tc, b);
        FAIL() << "expected a refusal";
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("A9"), std::string::npos);
    }
}

TEST(Blowup, TruncatedSourceIntegral) {
    EXPECT_NEAR(detail::truncated_source_tau(0.0, 0.01, 1.0, 10.0), 0.1, 1e-15);
    EXPECT_NEAR(detail::truncated_source_tau(0.0, 1.0, 1.0, 10.0), 1.0 + std::log(10.0), 1e-12);
    EXPECT_NEAR(detail::truncated_source_tau(0.0, 1.0, 0.5, 1e4), 2.0 - 1e-4, 1e-12);
    EXPECT_NEAR(detail::truncated_source_tau(0.0, 1.0, 0.0, 5.0), 1.0, 1e-15);
}

TEST(Blowup, NonIntegrableSourceDiverges) {
    const std::vector<double> levels{10.0, 100.0, 1000.0};
    const auto rep = blowup_test(make_power(3.0, 0.0, 1.0), levels, 0.99);
    EXPECT_FALSE(rep.source_integrable);
    EXPECT_TRUE(rep.divergent);
    for (double g : rep.per_decade_growth) EXPECT_GE(g, 2.0);
    EXPECT_TRUE(rep.lower_bound_holds);
    EXPECT_NEAR(rep.levels[0].value, 0.1, 2e-3);
}

TEST(Blowup, IntegrableSourceStabilizes) {
    const std::vector<double> levels{10.0, 100.0, 1000.0};
    const auto rep = blowup_test(make_power(3.0, 0.0, 0.5), levels, 0.99);
    EXPECT_TRUE(rep.source_integrable);
    EXPECT_TRUE(rep.stable);
    EXPECT_FALSE(rep.divergent);
    EXPECT_TRUE(rep.lower_bound_holds);
}

TEST(Blowup, FixedLevelStaysFinite) {
    const std::vector<double> levels{50.0};
    const auto rep = blowup_test(make_power(3.0, 0.0, 1.0), levels, 0.999999);
    EXPECT_TRUE(std::isfinite(rep.levels[0].value));
    EXPECT_LE(rep.levels[0].value, 50.0 * 1e-6 * (1.0 + 1e-9));
}

TEST(Blowup, RejectsOtherFamilies) {
    const std::vector<double> levels{10.0};
    EXPECT_THROW(blowup_test(make_toy(3.0), levels, 0.5), PreconditionError);
    const std::vector<double> bad{10.0, 5.0};
    EXPECT_THROW(blowup_test(make_power(3.0, 0.0, 1.0), bad, 0.5), SchemaError);
}

TEST(Blowup, MonteCarloAgreesWithOracleWithoutNoise) {
    const auto sde = line_sde(0.0);
    const auto b = simulate(sde, TimeGrid(1.0, 200, 3.0), 200, 10);
    const auto gen = make_power(3.0, 0.0, 1.0);
    const auto tc = TerminalCondition::regular([](std::span<const double>) { return 0.0; });
    const auto sols = solve_levels(gen, tc, b, cells(), {10.0, 100.0, 1000.0});
    const std::size_t idx = b.grid().nearest_index(0.99);
    const auto rep = blowup_test_mc(gen, sols, idx, 3, 3.0, 0.0);
    EXPECT_LT(rep.max_oracle_mismatch, 0.02);
    EXPECT_TRUE(rep.lower_bound_holds);
    EXPECT_TRUE(rep.min_increasing);
}
