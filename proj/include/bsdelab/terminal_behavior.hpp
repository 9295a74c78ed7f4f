#pragma once

// Behaviour of the truncated solutions near the terminal time: weighted
// Z/U norms, continuity in mean against localized test functions, and the
// blow-up dichotomy for a deterministic non-integrable source.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bsde_solver.hpp"
#include "core.hpp"
#include "forward_sde.hpp"
#include "generator.hpp"

namespace bsdelab {

// ---------------------------------------------------------------------------
// Weighted Z/U norm

struct WeightedNormReport {
    std::vector<double> levels;
    std::vector<double> values;
    std::vector<double> se;
    double rho = 0.0;
    double ell = 1.0;
    double eta = 0.0;
    /// max over levels / min over levels
    double ratio = 1.0;
    bool bounded = true;
};

/// Mean over paths of (sum_i w_i (T - t_i)^rho (|Z_i|^2 + sum_k lambda_k U_{i,k}^2))^(ell/2),
/// with trapezoid weights w_i; the integrand vanishes at t_N.
inline WeightedNormReport weighted_zu_norm(const std::vector<BsdeSolution>& sols, std::span<const double> intensities,
                                           double rho, double ell, double eta = 0.0, double ratio_limit = 2.0) {
    if (sols.empty()) throw SchemaError("weighted_zu_norm: no solutions");
    if (!(ell > 0.0) || !std::isfinite(rho)) throw SchemaError("weighted_zu_norm: invalid rho or ell");
    const auto& grid = sols.front().grid;
    WeightedNormReport rep;
    rep.rho = rho;
    rep.ell = ell;
    rep.eta = eta;
    const std::size_t N = grid.steps();
    std::vector<double> w(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        const double left = i > 0 ? grid.dt(i - 1) : 0.0;
        w[i] = 0.5 * (left + grid.dt(i)) * std::pow(grid.time_to_maturity(i), rho);
    }
    for (const auto& s : sols) {
        if (!(s.grid == grid) || s.M != sols.front().M) throw SchemaError("weighted_zu_norm: solutions do not share a grid");
        if (s.z.empty() && s.d > 0) throw SchemaError("weighted_zu_norm: solution was stored without Z and U");
        if (s.K != intensities.size()) throw SchemaError("weighted_zu_norm: intensity count does not match U");
        std::vector<double> per(s.M);
        for (std::size_t m = 0; m < s.M; ++m) {
            double acc = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                double sq = 0.0;
                for (double z : s.Z(m, i)) sq += z * z;
                const auto u = s.U(m, i);
                for (std::size_t k = 0; k < s.K; ++k) sq += intensities[k] * u[k] * u[k];
                acc += w[i] * sq;
            }
            per[m] = std::pow(acc, 0.5 * ell);
        }
        const auto ms = mean_and_se(per);
        if (!std::isfinite(ms.mean)) throw NumericError("weighted_zu_norm: non-finite value at n=" + format_double(s.n));
        rep.levels.push_back(s.n);
        rep.values.push_back(ms.mean);
        rep.se.push_back(ms.se);
    }
    const auto [lo, hi] = std::minmax_element(rep.values.begin(), rep.values.end());
    rep.ratio = *lo > 0.0 ? *hi / *lo : (*hi > 0.0 ? kInf : 1.0);
    rep.bounded = rep.ratio <= ratio_limit;
    return rep;
}

// ---------------------------------------------------------------------------
// Continuity in mean

struct ContinuityLevel {
    double n = 0.0;
    std::vector<double> series;     // E[Y_t phi(X_t)], t = t_0..t_N
    std::vector<double> series_se;
    double terminal = 0.0;          // E[(Phi ^ n)(X_T) phi(X_T)]
    std::vector<double> gap;        // |E[Y_t phi(X_t) - (Phi ^ n) phi(X_T)]|, t = t_0..t_{N-1}
    std::vector<double> gap_se;     // paired standard errors
    bool gap_decreasing = false;    // over the last `window` interior times
    bool final_gap_small = false;   // gap at t_{N-1} below se_multiplier paired SE
    double probe_last = 0.0;        // E[Y_{t_{N-1}} phi~(X_{t_{N-1}})]
    double probe_se = 0.0;
};

struct ContinuityReport {
    double epsilon = 0.0;
    double gamma = 0.0;
    std::size_t window = 5;
    std::vector<ContinuityLevel> levels;
    std::vector<double> thresholds{10.0, 100.0, 1000.0};
    /// smallest level whose probe value exceeds each threshold, NaN if never
    std::vector<double> crossed_at;
    double probe_terminal_mass = 0.0;  // E[phi~(X_T) 1_S(X_T)]
    bool continuity = false;           // every level passes both gap checks
};

struct ContinuityOptions {
    double epsilon = 0.0;  // 0 selects the default
    double gamma = 0.0;    // 0 selects 1 + 2(q+1)/q
    std::size_t window = 5;
    double se_multiplier = 3.0;
};

/// Default localization radius: the smaller of four jump magnitudes and radius/8,
/// reduced so that (1 + K_h) epsilon < nu.
inline double default_epsilon(const SdeSpec& sde, const SingularSet& s) {
    double eps = 4.0 * std::max(sde.C_h, 1e-3);
    if (s.shape != ShapeKind::HalfLine) eps = std::min(eps, s.radius / 8.0);
    const double cap = 0.9 * s.nu / (1.0 + sde.K_h);
    return std::min(eps, cap);
}

inline ContinuityReport continuity_test(const GeneratorSpec& gen, const SdeSpec& sde, const std::vector<BsdeSolution>& sols,
                                        const TerminalCondition& tc, const PathBundle& bundle,
                                        const ContinuityOptions& opt = {},
                                        std::optional<TestFunction> phi_override = std::nullopt) {
    if (sols.empty()) throw SchemaError("continuity_test: no solutions");
    if (!tc.singular_set) throw PreconditionError("E", "terminal condition has no singular set");
    const SingularSet& S = *tc.singular_set;
    const auto erep = check_condition_E(sde, S);
    if (!erep.pass) throw PreconditionError("E", "jumps can leave the singular set");
    const auto crep = check_conditions(gen, gen.jumps);
    if (!crep.holds("A8")) throw PreconditionError("A8", crep.find("A8")->evidence);
    if (!crep.holds("A9")) throw PreconditionError("A9", crep.find("A9")->evidence);

    ContinuityReport rep;
    rep.window = opt.window;
    rep.epsilon = opt.epsilon > 0.0 ? opt.epsilon : default_epsilon(sde, S);
    if (!((1.0 + sde.K_h) * rep.epsilon < S.nu)) {
        throw PreconditionError("E", "(1 + K_h) epsilon must be below nu");
    }
    rep.gamma = opt.gamma > 0.0 ? opt.gamma : 1.0 + bump_gamma_threshold(gen.q);
    if (phi_override && !phi_override->avoids_singular_set()) {
        throw PreconditionError("bump_support", "test function support meets the singular set");
    }
    const TestFunction phi = phi_override ? *phi_override : build_bump(S, rep.epsilon, rep.gamma, gen.q);
    const TestFunction probe = build_singular_probe(S, rep.epsilon, rep.gamma, gen.q);

    const std::size_t M = bundle.paths(), N = bundle.steps();
    if (N < opt.window + 1) throw SchemaError("continuity_test: grid too coarse for the window");
    std::vector<double> phi_v(M * (N + 1)), probe_v(M * (N + 1));
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i <= N; ++i) {
            const auto x = bundle.state(m, i);
            phi_v[m * (N + 1) + i] = phi(x);
            probe_v[m * (N + 1) + i] = probe(x);
        }
    {
        std::vector<double> mass(M);
        for (std::size_t m = 0; m < M; ++m) {
            mass[m] = S.contains(bundle.state(m, N)) ? probe_v[m * (N + 1) + N] : 0.0;
        }
        rep.probe_terminal_mass = mean_and_se(mass).mean;
    }

    rep.continuity = true;
    std::vector<double> col(M), diff(M);
    for (const auto& s : sols) {
        if (!(s.grid == bundle.grid()) || s.M != M) throw SchemaError("continuity_test: solution does not match the bundle");
        ContinuityLevel lv;
        lv.n = s.n;
        std::vector<double> term(M);
        for (std::size_t m = 0; m < M; ++m) {
            const double ph = phi_v[m * (N + 1) + N];
            term[m] = ph > 0.0 ? tc.truncated(bundle.state(m, N), s.n) * ph : 0.0;
        }
        lv.terminal = mean_and_se(term).mean;
        for (std::size_t i = 0; i <= N; ++i) {
            for (std::size_t m = 0; m < M; ++m) {
                col[m] = s.Y(m, i) * phi_v[m * (N + 1) + i];
                diff[m] = col[m] - term[m];
            }
            const auto a = mean_and_se(col);
            lv.series.push_back(a.mean);
            lv.series_se.push_back(a.se);
            if (i < N) {
                const auto g = mean_and_se(diff);
                lv.gap.push_back(std::abs(g.mean));
                lv.gap_se.push_back(g.se);
            }
        }
        lv.gap_decreasing = true;
        for (std::size_t i = N - opt.window + 1; i < N; ++i) {
            if (!(lv.gap[i] < lv.gap[i - 1])) lv.gap_decreasing = false;
        }
        lv.final_gap_small = lv.gap[N - 1] < opt.se_multiplier * lv.gap_se[N - 1];
        for (std::size_t m = 0; m < M; ++m) col[m] = s.Y(m, N - 1) * probe_v[m * (N + 1) + N - 1];
        const auto pr = mean_and_se(col);
        lv.probe_last = pr.mean;
        lv.probe_se = pr.se;
        for (double v : lv.series) {
            if (!std::isfinite(v)) throw NumericError("continuity_test: non-finite mean at n=" + format_double(s.n));
        }
        rep.continuity = rep.continuity && lv.gap_decreasing && lv.final_gap_small;
        rep.levels.push_back(std::move(lv));
    }
    for (double th : rep.thresholds) {
        double at = std::numeric_limits<double>::quiet_NaN();
        for (const auto& lv : rep.levels) {
            if (lv.probe_last > th) {
                at = lv.n;
                break;
            }
        }
        rep.crossed_at.push_back(at);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Blow-up dichotomy

struct BlowupLevel {
    double n = 0.0;
    double value = 0.0;        // Y^n at t_eval
    double lower_bound = 0.0;  // exp(-int |Y^n|^q) * int (f0 ^ n) over [t_eval, T]
    double source = 0.0;       // int_t^T (f0 ^ n)
};

struct BlowupReport {
    double t_eval = 0.0;
    bool source_integrable = false;
    std::vector<BlowupLevel> levels;
    std::vector<double> per_decade_growth;
    double top_relative_change = 0.0;
    bool lower_bound_holds = true;
    bool divergent = false;  // growth >= 2 per decade at every step
    bool stable = false;     // top two levels within 5%
};

namespace detail {

/// int_{tau0}^{tau1} min(s^{-varpi}, n) ds
inline double truncated_source_tau(double tau0, double tau1, double varpi, double n) {
    if (!(tau1 > tau0)) return 0.0;
    const double knee = varpi > 0.0 ? std::pow(n, -1.0 / varpi) : 0.0;
    double total = 0.0;
    const double a = std::min(tau1, std::max(tau0, knee));
    total += n * (a - tau0);
    if (tau1 > a) {
        if (std::abs(varpi - 1.0) < 1e-15) {
            total += std::log(tau1 / a);
        } else {
            const double e = 1.0 - varpi;
            total += (std::pow(tau1, e) - std::pow(a, e)) / e;
        }
    }
    return total;
}

}  // namespace detail

/// Deterministic mode: Y^n(t) from the scalar ODE with terminal value `terminal`,
/// checked against the lower bound exp(-int |Y^n|^q) int (f0 ^ n).
inline BlowupReport blowup_test(const GeneratorSpec& gen, std::span<const double> levels, double t_eval,
                                double terminal = 0.0, std::size_t quad_nodes = 400) {
    if (gen.family != Family::PowerSingularity || !gen.power) throw PreconditionError("blowup", "a power-singular generator is required");
    if (gen.L > 0.0) throw PreconditionError("blowup", "f0 must be deterministic and f independent of z");
    const double T = gen.horizon, q = gen.q, vs = gen.power->varsigma, vp = gen.power->varpi;
    if (!(t_eval < T) || !(t_eval >= 0.0)) throw SchemaError("blowup_test: t must lie in [0, T)");
    for (std::size_t j = 1; j < levels.size(); ++j) {
        if (!(levels[j] > levels[j - 1])) throw SchemaError("blowup_test: levels must increase");
    }
    BlowupReport rep;
    rep.t_eval = t_eval;
    rep.source_integrable = vp < 1.0;
    const double tau = T - t_eval;
    for (double n : levels) {
        BlowupLevel lv;
        lv.n = n;
        const OdeOracle oracle(gen, terminal, n);
        lv.value = oracle(t_eval);
        // trajectory on a log-spaced tau grid for the damping integral
        const double lo = std::min(tau * 1e-9, 1e-12);
        double prev_tau = 0.0, prev_val = 0.0, damp = 0.0;
        for (std::size_t j = 0; j <= quad_nodes; ++j) {
            const double s = j == 0 ? lo : lo * std::pow(tau / lo, static_cast<double>(j) / quad_nodes);
            const double y = oracle(T - s);
            const double val = std::pow(s, vs) * std::pow(std::abs(y), q);
            damp += 0.5 * (val + prev_val) * (s - prev_tau);
            prev_tau = s;
            prev_val = val;
        }
        lv.source = detail::truncated_source_tau(0.0, tau, vp, n);
        lv.lower_bound = std::exp(-damp) * lv.source;
        if (lv.value < lv.lower_bound * (1.0 - 1e-6)) rep.lower_bound_holds = false;
        rep.levels.push_back(lv);
    }
    for (std::size_t j = 1; j < rep.levels.size(); ++j) {
        const double decades = std::log10(rep.levels[j].n / rep.levels[j - 1].n);
        rep.per_decade_growth.push_back(std::pow(rep.levels[j].value / rep.levels[j - 1].value, 1.0 / decades));
    }
    if (rep.levels.size() >= 2) {
        const double a = rep.levels[rep.levels.size() - 2].value, b = rep.levels.back().value;
        rep.top_relative_change = std::abs(b - a) / std::abs(b);
    }
    rep.divergent = !rep.per_decade_growth.empty() &&
                    std::all_of(rep.per_decade_growth.begin(), rep.per_decade_growth.end(), [](double g) { return g >= 2.0; });
    rep.stable = rep.levels.size() >= 2 && rep.top_relative_change <= 0.05;
    return rep;
}

/// Monte Carlo mode: the lower bound is estimated per path from the solution
/// (mean of exp(-int |Y|^q a) times the deterministic truncated source) and compared
/// with the cross-sectional mean of Y^n at the evaluation index; the minimum over
/// paths at the last grid times is reported per level.
struct BlowupMcLevel {
    double n = 0.0;
    double mean = 0.0, se = 0.0;
    double lower_bound = 0.0, lower_bound_se = 0.0;
    double min_last = 0.0;
    double oracle = std::numeric_limits<double>::quiet_NaN();
};

struct BlowupMcReport {
    std::size_t index = 0;
    std::vector<BlowupMcLevel> levels;
    bool lower_bound_holds = true;
    bool min_increasing = true;
    double max_oracle_mismatch = 0.0;
};

inline BlowupMcReport blowup_test_mc(const GeneratorSpec& gen, const std::vector<BsdeSolution>& sols, std::size_t index,
                                     std::size_t last_times = 3, double se_multiplier = 3.0, double terminal_for_oracle = -1.0) {
    if (gen.family != Family::PowerSingularity || !gen.power) throw PreconditionError("blowup", "a power-singular generator is required");
    if (sols.empty()) throw SchemaError("blowup_test: no solutions");
    const auto& grid = sols.front().grid;
    const std::size_t N = grid.steps();
    if (index >= N) throw SchemaError("blowup_test: evaluation index must be interior");
    BlowupMcReport rep;
    rep.index = index;
    const double q = gen.q, vs = gen.power->varsigma, vp = gen.power->varpi;
    for (const auto& s : sols) {
        if (!(s.grid == grid)) throw SchemaError("blowup_test: solutions do not share a grid");
        BlowupMcLevel lv;
        lv.n = s.n;
        const auto col = s.column(index);
        const auto ms = mean_and_se(col);
        lv.mean = ms.mean;
        lv.se = ms.se;
        std::vector<double> damp(s.M);
        for (std::size_t m = 0; m < s.M; ++m) {
            double acc = 0.0;
            for (std::size_t i = index; i < N; ++i) {
                const double t0 = grid.time_to_maturity(i), t1 = grid.time_to_maturity(i + 1);
                // trapezoid in r of tau^varsigma |Y|^q
                const double v0 = std::pow(t0, vs) * std::pow(s.Y(m, i), q);
                const double v1 = t1 > 0.0 ? std::pow(t1, vs) * std::pow(s.Y(m, i + 1), q) : 0.0;
                acc += 0.5 * (v0 + v1) * (t0 - t1);
            }
            damp[m] = std::exp(-acc);
        }
        const auto ds = mean_and_se(damp);
        const double src = detail::truncated_source_tau(0.0, grid.time_to_maturity(index), vp, s.n);
        lv.lower_bound = ds.mean * src;
        lv.lower_bound_se = ds.se * src;
        if (lv.mean + se_multiplier * std::hypot(lv.se, lv.lower_bound_se) < lv.lower_bound * (1.0 - 1e-3)) rep.lower_bound_holds = false;
        lv.min_last = kInf;
        for (std::size_t i = N - std::min(last_times, N); i < N; ++i)
            for (std::size_t m = 0; m < s.M; ++m) lv.min_last = std::min(lv.min_last, s.Y(m, i));
        if (terminal_for_oracle >= 0.0) {
            lv.oracle = OdeOracle(gen, terminal_for_oracle, s.n)(grid[index]);
            rep.max_oracle_mismatch = std::max(rep.max_oracle_mismatch, std::abs(lv.mean - lv.oracle) / lv.oracle);
        }
        rep.levels.push_back(lv);
    }
    for (std::size_t j = 1; j < rep.levels.size(); ++j) {
        if (!(rep.levels[j].min_last > rep.levels[j - 1].min_last)) rep.min_increasing = false;
    }
    return rep;
}

}  // namespace bsdelab
