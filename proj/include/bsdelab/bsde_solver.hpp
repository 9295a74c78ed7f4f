#pragma once

// Regression Monte Carlo for truncated BSDEs with jumps and the increasing
// sequence approximating the minimal supersolution.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <array>

#include <boost/numeric/odeint/integrate/integrate_adaptive.hpp>
#include <boost/numeric/odeint/stepper/controlled_runge_kutta.hpp>
#include <boost/numeric/odeint/stepper/dense_output_runge_kutta.hpp>
#include <boost/numeric/odeint/stepper/generation/make_controlled.hpp>
#include <boost/numeric/odeint/stepper/generation/generation_controlled_runge_kutta.hpp>
#include <boost/numeric/odeint/stepper/generation/generation_runge_kutta_dopri5.hpp>
#include <boost/numeric/odeint/stepper/runge_kutta_dopri5.hpp>

#include "core.hpp"
#include "forward_sde.hpp"
#include "generator.hpp"
#include "regression.hpp"

namespace bsdelab {

// ---------------------------------------------------------------------------
// Terminal condition

using StateFunction = std::function<double(std::span<const double>)>;

/// Phi(x) = +inf on the singular set, finite_part(x) >= 0 elsewhere.
struct TerminalCondition {
    StateFunction finite_part;
    std::optional<SingularSet> singular_set;
    std::string description;

    double phi(std::span<const double> x) const {
        if (singular_set && singular_set->contains(x)) return kInf;
        return finite_part(x);
    }
    double truncated(std::span<const double> x, double n) const { return std::min(phi(x), n); }

    static TerminalCondition regular(StateFunction f, std::string description = "regular") {
        return {std::move(f), std::nullopt, std::move(description)};
    }
    static TerminalCondition singular(SingularSet s, StateFunction f, std::string description = "singular") {
        s.validate();
        return {std::move(f), std::move(s), std::move(description)};
    }
};

/// Integrability of Phi(X_T) away from the singular set, on closed sets at distance >= delta.
struct ConditionCReport {
    bool pass = true;
    std::vector<double> deltas;
    std::vector<double> means;
};

inline ConditionCReport check_condition_C(const TerminalCondition& tc, const PathBundle& bundle) {
    ConditionCReport rep;
    const std::size_t N = bundle.steps();
    for (double delta : {0.0, 0.05, 0.1, 0.2}) {
        double s = 0.0;
        for (std::size_t m = 0; m < bundle.paths(); ++m) {
            const auto x = bundle.state(m, N);
            if (tc.singular_set && tc.singular_set->distance(x) < delta) continue;
            if (!tc.singular_set && delta > 0.0) continue;
            const double v = tc.phi(x);
            if (!(v >= 0.0)) rep.pass = false;
            s += v;
        }
        const double mean = s / static_cast<double>(bundle.paths());
        if (!std::isfinite(mean)) rep.pass = false;
        rep.deltas.push_back(delta);
        rep.means.push_back(mean);
        if (!tc.singular_set) break;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Solution containers

enum class StepScheme { Split, Implicit };

inline const char* scheme_name(StepScheme s) { return s == StepScheme::Split ? "split" : "implicit"; }

struct SolverOptions {
    BasisSpec basis;
    StepScheme scheme = StepScheme::Split;
    bool store_zu = true;
};

struct StepInfo {
    BasisKind kind = BasisKind::Polynomial;
    bool fallback = false;
    bool reduced = false;
    double condition = 1.0;
    std::size_t basis_size = 0;
    std::vector<double> coef_e;
    std::vector<std::vector<double>> coef_z;
    std::vector<std::vector<double>> coef_u;
};

struct BsdeSolution {
    double n = 0.0;
    TimeGrid grid;
    std::size_t M = 0, d = 0, K = 0;
    BasisSpec basis;
    StepScheme scheme = StepScheme::Split;
    std::vector<double> y;     // M x (N+1)
    std::vector<double> y_se;  // M x (N+1), standard error of the conditional mean
    std::vector<double> z;     // M x N x d
    std::vector<double> u;     // M x N x K
    std::vector<StepInfo> steps;
    double max_preclip_negative = 0.0;
    std::size_t clipped = 0;

    std::size_t N() const { return grid.steps(); }
    double Y(std::size_t m, std::size_t i) const { return y[m * (N() + 1) + i]; }
    double Yse(std::size_t m, std::size_t i) const { return y_se[m * (N() + 1) + i]; }
    std::span<const double> Z(std::size_t m, std::size_t i) const { return {z.data() + (m * N() + i) * d, d}; }
    std::span<const double> U(std::size_t m, std::size_t i) const { return {u.data() + (m * N() + i) * K, K}; }
    bool has_zu() const { return !z.empty() || (d == 0); }

    std::vector<double> column(std::size_t i) const {
        std::vector<double> out(M);
        for (std::size_t m = 0; m < M; ++m) out[m] = Y(m, i);
        return out;
    }
    MeanSe mean_at(std::size_t i) const {
        const auto c = column(i);
        return mean_and_se(c);
    }
    std::size_t fallback_steps() const {
        std::size_t c = 0;
        for (const auto& s : steps) c += s.fallback ? 1 : 0;
        return c;
    }
};

// ---------------------------------------------------------------------------
// One backward step

namespace detail {

/// Y^{-q} flow of y' = -a y|y|^q over a window of a-mass A.
inline double power_flow(double y, double A, double q) {
    if (y == 0.0 || A == 0.0) return y;
    const double mag = std::pow(std::pow(std::abs(y), -q) + q * A, -1.0 / q);
    return y > 0.0 ? mag : -mag;
}

struct StepContext {
    const GeneratorSpec* gen;
    double t0, t1, tau0, tau1, dt;
    double S, A;  // truncated source and coefficient integrals over the step
    double n;
    StepScheme scheme;
};

inline double solve_stage(const GeneratorSpec& g, double t, double c, double h, std::span<const double> z,
                          std::span<const double> u) {
    if (g.family == Family::Toy || g.family == Family::PowerSingularity) return c;
    auto F = [&](double y) { return y - c - h * eval_remainder(g, t, y, z, u); };
    return solve_increasing(F, c).root;
}

/// Value at t_i from the regression estimate e. In the split scheme e is the
/// conditional mean of the flowed values, so only the source half step and the
/// implicit remainder stage remain.
inline double step_value(const StepContext& ctx, double e, std::span<const double> z, std::span<const double> u) {
    const GeneratorSpec& g = *ctx.gen;
    if (ctx.scheme == StepScheme::Implicit) {
        auto F = [&](double y) { return y - e - ctx.dt * eval_truncated(g, ctx.t0, y, z, u, ctx.n); };
        return solve_increasing(F, e).root;
    }
    return solve_stage(g, ctx.t0, e + 0.5 * ctx.S, ctx.dt, z, u);
}

/// Pathwise part of the split step applied to Y_{i+1}: half the source, then the exact power flow.
inline double pre_flow(const StepContext& ctx, double y_next) {
    if (ctx.scheme == StepScheme::Implicit) return y_next;
    return power_flow(y_next + 0.5 * ctx.S, ctx.A, ctx.gen->q);
}

}  // namespace detail

/// Solves the truncated equations for every level in one backward pass over the bundle.
inline std::vector<BsdeSolution> solve_levels(const GeneratorSpec& gen, const TerminalCondition& tc,
                                              const PathBundle& bundle, const SolverOptions& opt,
                                              const std::vector<double>& levels) {
    const std::size_t M = bundle.paths(), N = bundle.steps(), d = bundle.dim(), K = bundle.marks();
    const TimeGrid& grid = bundle.grid();
    if (std::abs(grid.horizon() - gen.horizon) > 1e-12 * gen.horizon) {
        throw SchemaError("solver: generator horizon differs from the grid horizon");
    }
    if (gen.family == Family::Control && gen.jumps.size() != K) {
        throw SchemaError("solver: control generator mark count differs from the bundle");
    }
    for (double n : levels) {
        if (!(n > 0.0)) throw SchemaError("solver: truncation levels must be positive");
    }
    if (gen.family == Family::Control) {
        for (std::size_t k = 0; k < K; ++k) {
            if (std::abs(gen.jumps.weights[k] - bundle.intensity(k)) > 1e-12 * bundle.intensity(k)) {
                throw SchemaError("solver: control intensities differ from the simulated jump measure");
            }
        }
    }

    std::vector<BsdeSolution> sols(levels.size());
    for (std::size_t j = 0; j < levels.size(); ++j) {
        auto& s = sols[j];
        s.n = levels[j];
        s.grid = grid;
        s.M = M;
        s.d = d;
        s.K = K;
        s.basis = opt.basis;
        s.scheme = opt.scheme;
        s.y.assign(M * (N + 1), 0.0);
        s.y_se.assign(M * (N + 1), 0.0);
        if (opt.store_zu) {
            s.z.assign(M * N * d, 0.0);
            s.u.assign(M * N * K, 0.0);
        }
        s.steps.resize(N);
        for (std::size_t m = 0; m < M; ++m) {
            const double v = tc.truncated(bundle.state(m, N), s.n);
            if (!(v >= 0.0)) throw PreconditionError("C1", "terminal value must be nonnegative");
            s.y[m * (N + 1) + N] = v;
        }
    }

    std::vector<double> states(M * d), next(M), target(M);
    std::vector<double> zbuf(M * d), ubuf(M * K);
    for (std::size_t ii = N; ii-- > 0;) {
        for (std::size_t m = 0; m < M; ++m) {
            const auto x = bundle.state(m, ii);
            std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>(m * d));
        }
        const Regressor reg(opt.basis, states, d);
        const double dt = grid.dt(ii);
        const double tau0 = grid.time_to_maturity(ii), tau1 = grid.time_to_maturity(ii + 1);
        const double A = coefficient_integral(gen, tau0, tau1);

        for (std::size_t j = 0; j < levels.size(); ++j) {
            auto& s = sols[j];
            detail::StepContext ctx{&gen, grid[ii], grid[ii + 1], tau0, tau1, dt,
                                    truncated_source_integral(gen, tau0, tau1, s.n), A, s.n, opt.scheme};
            for (std::size_t m = 0; m < M; ++m) next[m] = detail::pre_flow(ctx, s.Y(m, ii + 1));
            const Fit fe = reg.fit(next);
            StepInfo info;
            info.kind = reg.kind();
            info.fallback = reg.fallback();
            info.reduced = reg.reduced();
            info.condition = reg.condition_number();
            info.basis_size = reg.basis_size();
            info.coef_e = fe.coefficients;

            for (std::size_t c = 0; c < d; ++c) {
                for (std::size_t m = 0; m < M; ++m) target[m] = (next[m] - fe.fitted[m]) * bundle.dw(m, ii)[c] / dt;
                const Fit fz = reg.fit(target);
                for (std::size_t m = 0; m < M; ++m) zbuf[m * d + c] = fz.fitted[m];
                info.coef_z.push_back(fz.coefficients);
            }
            for (std::size_t k = 0; k < K; ++k) {
                const double lam_k = bundle.intensity(k);
                for (std::size_t m = 0; m < M; ++m) {
                    const double comp = static_cast<double>(bundle.jump_count(m, ii, k)) - lam_k * dt;
                    target[m] = (next[m] - fe.fitted[m]) * comp / (lam_k * dt);
                }
                const Fit fu = reg.fit(target);
                for (std::size_t m = 0; m < M; ++m) ubuf[m * K + k] = fu.fitted[m];
                info.coef_u.push_back(fu.coefficients);
            }

            std::vector<double> negative(M, 0.0);
            std::vector<std::string> failure(M);
            parallel_for(M, [&](std::size_t m) {
                const std::span<const double> z(zbuf.data() + m * d, d);
                const std::span<const double> u(ubuf.data() + m * K, K);
                double v;
                try {
                    v = detail::step_value(ctx, fe.fitted[m], z, u);
                } catch (const NumericError& e) {
                    failure[m] = e.what();
                    return;
                }
                if (!std::isfinite(v)) {
                    failure[m] = "non-finite value";
                    return;
                }
                if (v < 0.0) {
                    negative[m] = -v;
                    v = 0.0;
                }
                s.y[m * (N + 1) + ii] = v;
                s.y_se[m * (N + 1) + ii] = fe.se[m];
            });
            for (std::size_t m = 0; m < M; ++m) {
                if (!failure[m].empty()) {
                    throw NumericError("solver: step " + std::to_string(ii) + " path " + std::to_string(m) +
                                       " level " + format_double(s.n) + ": " + failure[m]);
                }
                if (negative[m] > 0.0) {
                    ++s.clipped;
                    s.max_preclip_negative = std::max(s.max_preclip_negative, negative[m]);
                }
            }
            if (opt.store_zu) {
                for (std::size_t m = 0; m < M; ++m) {
                    for (std::size_t c = 0; c < d; ++c) s.z[(m * N + ii) * d + c] = zbuf[m * d + c];
                    for (std::size_t k = 0; k < K; ++k) s.u[(m * N + ii) * K + k] = ubuf[m * K + k];
                }
            }
            s.steps[ii] = std::move(info);
        }
    }
    return sols;
}

inline BsdeSolution solve_truncated(const GeneratorSpec& gen, const TerminalCondition& tc, const PathBundle& bundle,
                                    const SolverOptions& opt, double n) {
    return std::move(solve_levels(gen, tc, bundle, opt, {n}).front());
}

// ---------------------------------------------------------------------------
// Sequence in the truncation level

struct SequenceDiagnostics {
    double monotonicity_violation_rate = 0.0;
    std::vector<double> monotonicity_rate_by_time;
    double sup_gap = 0.0;          // max over t_i <= T - eps of |mean Y^{n_{j+1}} - mean Y^{n_j}|
    double sup_gap_pathwise = 0.0;  // same, max over paths
    double bound_violation_rate = std::nan("");
    std::size_t bound_checked = 0;
    double max_preclip_negative = 0.0;
};

struct SequenceResult {
    std::vector<BsdeSolution> solutions;
    SequenceDiagnostics diagnostics;
};

struct SequenceOptions {
    double se_multiplier = 3.0;
    double bound_tolerance = 1e-9;
    double gap_epsilon = 0.1;  // gaps measured on [0, T - gap_epsilon]
};

inline SequenceDiagnostics sequence_diagnostics(const GeneratorSpec& gen, const std::vector<BsdeSolution>& sols,
                                                const SequenceOptions& so = {}) {
    SequenceDiagnostics dg;
    if (sols.empty()) return dg;
    const std::size_t M = sols[0].M, N = sols[0].N();
    const TimeGrid& grid = sols[0].grid;
    for (const auto& s : sols) {
        if (!(s.grid == grid) || s.M != M) throw SchemaError("sequence: solutions do not share a grid and bundle");
        dg.max_preclip_negative = std::max(dg.max_preclip_negative, s.max_preclip_negative);
    }
    dg.monotonicity_rate_by_time.assign(N + 1, 0.0);
    std::size_t bad = 0, total = 0;
    for (std::size_t j = 0; j + 1 < sols.size(); ++j) {
        const auto &lo = sols[j], &hi = sols[j + 1];
        for (std::size_t i = 0; i <= N; ++i) {
            std::size_t bad_i = 0;
            for (std::size_t m = 0; m < M; ++m) {
                const double tol = so.se_multiplier * std::max(lo.Yse(m, i), hi.Yse(m, i));
                if (hi.Y(m, i) < lo.Y(m, i) - tol - 1e-12 * (1.0 + lo.Y(m, i))) ++bad_i;
            }
            bad += bad_i;
            total += M;
            dg.monotonicity_rate_by_time[i] += static_cast<double>(bad_i) / static_cast<double>(M * (sols.size() - 1));
        }
        for (std::size_t i = 0; i <= N; ++i) {
            if (grid.time_to_maturity(i) < so.gap_epsilon) break;
            dg.sup_gap = std::max(dg.sup_gap, std::abs(hi.mean_at(i).mean - lo.mean_at(i).mean));
            for (std::size_t m = 0; m < M; ++m) dg.sup_gap_pathwise = std::max(dg.sup_gap_pathwise, std::abs(hi.Y(m, i) - lo.Y(m, i)));
        }
    }
    dg.monotonicity_violation_rate = total ? static_cast<double>(bad) / static_cast<double>(total) : 0.0;

    const bool closed_form = gen.family == Family::Toy || gen.family == Family::PowerSingularity;
    if (closed_form || gen.bound_constant != 1.0) {
        std::size_t vb = 0, checked = 0;
        for (const auto& s : sols) {
            for (std::size_t i = 0; i < N; ++i) {
                const double bound = a_priori_bound(gen, grid[i]);
                for (std::size_t m = 0; m < M; ++m) {
                    ++checked;
                    if (s.Y(m, i) > bound * (1.0 + so.bound_tolerance) + so.se_multiplier * s.Yse(m, i)) ++vb;
                }
            }
        }
        dg.bound_checked = checked;
        dg.bound_violation_rate = checked ? static_cast<double>(vb) / static_cast<double>(checked) : 0.0;
    }
    return dg;
}

inline SequenceResult solve_singular_sequence(const GeneratorSpec& gen, const TerminalCondition& tc,
                                              const PathBundle& bundle, const SolverOptions& opt,
                                              const std::vector<double>& n_list, const SequenceOptions& so = {}) {
    if (n_list.empty()) throw SchemaError("sequence: empty level list");
    for (std::size_t j = 1; j < n_list.size(); ++j) {
        if (n_list[j] < n_list[j - 1]) throw SchemaError("sequence: levels must be nondecreasing");
    }
    SequenceResult r;
    r.solutions = solve_levels(gen, tc, bundle, opt, n_list);
    r.diagnostics = sequence_diagnostics(gen, r.solutions, so);
    return r;
}

/// Fits the constant of the general a priori bound so that it covers every level at t_ref.
inline double calibrate_bound(GeneratorSpec& gen, const std::vector<BsdeSolution>& sols, double t_ref) {
    if (sols.empty()) throw SchemaError("calibrate_bound: no solutions");
    const std::size_t i = sols[0].grid.nearest_index(t_ref);
    const double shape = a_priori_shape(gen, sols[0].grid[i]);
    double k = 0.0;
    for (const auto& s : sols) {
        for (std::size_t m = 0; m < s.M; ++m) k = std::max(k, s.Y(m, i) / shape);
    }
    gen.bound_constant = std::max(k, 1e-300);
    return gen.bound_constant;
}

// ---------------------------------------------------------------------------
// Deterministic oracle

/// Solution of y' = -f_n(t, y) with y(T) = terminal, for drivers depending on (t, y) only.
class OdeOracle {
public:
    OdeOracle(GeneratorSpec gen, double terminal, double truncation = kInf, double delta = 1e-6)
        : gen_(std::move(gen)), terminal_(terminal), truncation_(truncation), delta_(delta) {
        if (!(terminal >= 0.0)) throw DomainError("ode oracle: terminal value must be nonnegative");
        if (gen_.family == Family::Control) {
            for (std::size_t k = 0; k < gen_.jumps.size(); ++k) {
                if (std::isfinite(gen_.control->beta(0.0, k))) throw PreconditionError("oracle", "generator depends on u");
            }
        }
        if (gen_.L > 0.0) throw PreconditionError("oracle", "generator depends on z");
    }

    double operator()(double t) const {
        const double T = gen_.horizon;
        const double tau = T - t;
        if (!(tau >= 0.0)) throw DomainError("ode oracle: t beyond the horizon");
        if (gen_.family == Family::Toy) {
            const double q = gen_.q;
            if (tau == 0.0) return terminal_;
            const double inv = std::isinf(terminal_) ? 0.0 : std::pow(terminal_, -q);
            return std::pow(inv + q * tau, -1.0 / q);
        }
        if (tau == 0.0) return terminal_;
        if (std::isinf(terminal_)) {
            const double a = integrate(tau, delta_, a_priori_bound(gen_, T - delta_));
            const double b = integrate(tau, 0.1 * delta_, a_priori_bound(gen_, T - 0.1 * delta_));
            if (std::abs(a - b) > 1e-3 * std::max(1.0, std::abs(b))) {
                throw NumericError("ode oracle: result sensitive to the starting offset near T");
            }
            return b;
        }
        return integrate(tau, 0.0, terminal_);
    }

    double truncation() const { return truncation_; }

private:
    double rhs(double tau, double y) const {
        const double t = gen_.horizon - tau;
        if (gen_.family == Family::PowerSingularity) {
            const double a = std::pow(tau, gen_.power->varsigma);
            const double f0 = std::pow(tau, -gen_.power->varpi);
            return -a * y * std::pow(std::abs(y), gen_.q) + std::min(f0, truncation_);
        }
        const std::vector<double> z(1, 0.0);
        const std::vector<double> u(gen_.jumps.size(), 0.0);
        return eval_generator(gen_, t, y, z, u) - gen_.f0(t) + std::min(gen_.f0(t), truncation_);
    }

    /// Integrates dy/dtau = f_n(T - tau, y) from tau_start to tau_end.
    ///
    /// The stiffness of the power term scales like 1/tau, so an adaptive
    /// embedded Runge-Kutta pair takes geometrically growing steps away from T.
    double integrate(double tau_end, double tau_start, double y0) const {
        namespace oi = boost::numeric::odeint;
        using state = std::array<double, 1>;
        if (tau_end <= tau_start) return y0;
        state x{y0};
        auto sys = [this](const state& s, state& dsdt, double tau) { dsdt[0] = rhs(tau, s[0]); };
        double blown = -1.0;
        auto observer = [&](const state& s, double tau) {
            if (blown < 0.0 && (!std::isfinite(s[0]) || std::abs(s[0]) > 1e150)) blown = tau;
        };
        double t0 = std::max(tau_start, 0.0);
        if (t0 == 0.0 && !std::isfinite(rhs(0.0, y0))) {
            // integrable source singularity at T: step over [0, delta] with the source alone
            const double vp = gen_.family == Family::PowerSingularity ? gen_.power->varpi : kInf;
            if (!(vp < 1.0)) throw DomainError("ode oracle: source is not integrable at T");
            t0 = delta_;
            x[0] += std::pow(delta_, 1.0 - vp) / (1.0 - vp);
        }
        const double dt0 = std::max(1e-14, 1e-8 * std::max(t0, 1e-6));
        auto stepper = oi::make_controlled(1e-12, 1e-12, oi::runge_kutta_dopri5<state>());
        oi::integrate_adaptive(stepper, sys, x, t0, tau_end, dt0, observer);
        if (blown >= 0.0) {
            throw NumericError("ode oracle: solution blows up at t=" + format_double(gen_.horizon - blown));
        }
        return x[0];
    }

    GeneratorSpec gen_;
    double terminal_, truncation_, delta_;
};

inline OdeOracle ode_oracle(const GeneratorSpec& gen, double terminal, double truncation = kInf) {
    return OdeOracle(gen, terminal, truncation);
}

}  // namespace bsdelab
