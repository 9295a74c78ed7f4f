#pragma once

// Theta(x) = int_x^inf -1/g, its inverse, and the decomposition
// Theta(Y_t) = E[Theta(xi) | F_t] - psi_t with psi = psi+ - psi-.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/roots.hpp>

#include "bsde_solver.hpp"
#include "core.hpp"
#include "forward_sde.hpp"
#include "generator.hpp"
#include "regression.hpp"

namespace bsdelab {

class ThetaMap {
public:
    explicit ThetaMap(GFunction g, bool use_closed_form = true) : g_(std::move(g)) {
        closed_ = use_closed_form && (g_.kind == GKind::Quadratic || g_.kind == GKind::Exponential);
        if (!closed_) build_table();
        theta0_ = theta(0.0);
    }

    const GFunction& g() const noexcept { return g_; }
    bool closed_form() const noexcept { return closed_; }
    double theta_at_zero() const noexcept { return theta0_; }

    double theta(double x) const {
        if (std::isnan(x) || x < 0.0) throw DomainError("theta: argument must be nonnegative");
        if (std::isinf(x)) return 0.0;
        if (closed_) return g_.kind == GKind::Quadratic ? 1.0 / (x + 1.0) : std::exp(-x);
        if (x >= nodes_.back()) return tail(x);
        const std::size_t j = static_cast<std::size_t>(std::upper_bound(nodes_.begin(), nodes_.end(), x) - nodes_.begin());
        // x in [nodes_[j-1], nodes_[j])
        return values_[j] + segment(x, nodes_[j]);
    }

    /// Theta' = 1/g.
    double theta_prime(double x) const { return 1.0 / g_(x); }
    /// Theta'' = -g'/g^2.
    double theta_second(double x) const {
        const double gv = g_(x);
        return -g_.prime(x) / (gv * gv);
    }

    double xi(double v) const {
        if (!(v > 0.0) || v > theta0_ * (1.0 + 1e-15)) {
            throw DomainError("xi: argument outside (0, Theta(0)]");
        }
        if (v >= theta0_) return 0.0;
        if (closed_) return g_.kind == GKind::Quadratic ? 1.0 / v - 1.0 : -std::log(v);
        double hi = 1.0;
        while (theta(hi) > v) {
            hi *= 2.0;
            if (hi > 1e300) throw NumericError("xi: cannot bracket");
        }
        const double lo = hi == 1.0 ? 0.0 : 0.5 * hi;
        std::uintmax_t iters = 200;
        auto F = [&](double x) { return theta(x) - v; };
        const auto r = boost::math::tools::toms748_solve(F, lo, hi, F(lo), F(hi),
                                                         boost::math::tools::eps_tolerance<double>(50), iters);
        return 0.5 * (r.first + r.second);
    }

private:
    double integrand(double y) const { return -1.0 / g_(y); }

    double segment(double a, double b) const {
        if (!(b > a)) return 0.0;
        return boost::math::quadrature::gauss<double, 20>::integrate([this](double y) { return integrand(y); }, a, b);
    }

    double tail(double x) const {
        boost::math::quadrature::exp_sinh<double> integrator;
        double err = 0.0;
        const double v = integrator.integrate([this, x](double s) { return integrand(x + s); }, 1e-14, &err);
        if (!std::isfinite(v)) throw NumericError("theta: tail quadrature failed");
        return v;
    }

    void build_table() {
        const std::size_t count = 600;
        const double umax = std::log1p(1e6);
        nodes_.resize(count + 1);
        for (std::size_t j = 0; j <= count; ++j) nodes_[j] = std::expm1(umax * static_cast<double>(j) / count);
        values_.assign(count + 1, 0.0);
        values_[count] = tail(nodes_[count]);
        for (std::size_t j = count; j-- > 0;) values_[j] = values_[j + 1] + segment(nodes_[j], nodes_[j + 1]);
    }

    GFunction g_;
    bool closed_ = false;
    double theta0_ = 0.0;
    std::vector<double> nodes_, values_;
};

inline double theta(const ThetaMap& map, double x) { return map.theta(x); }
inline double xi(const ThetaMap& map, double v) { return map.xi(v); }

// ---------------------------------------------------------------------------
// Decomposition estimate

struct PsiEstimate {
    std::vector<double> times;
    std::size_t M = 0;
    // per path, M x (N+1)
    std::vector<double> psi, psi_plus, psi_minus, se_psi, se_minus;
    // per time cross-sectional means and their standard errors
    std::vector<double> psi_mean, plus_mean, minus_mean, se_mean, se_minus_mean;
    std::vector<double> case_bound;
    /// max over (path, time) of |Theta(Y) + psi - E[Theta(xi ^ n)]|
    double reconstruction_error = 0.0;

    std::size_t N() const { return times.size() - 1; }
    double at(const std::vector<double>& v, std::size_t m, std::size_t i) const { return v[m * (N() + 1) + i]; }
};

/// Regression estimate of psi_t = E[Theta(xi ^ n) | X_t] - Theta(Y^n_t).
///
/// The conditional expectation of Theta(xi ^ n) is built by nested one-step
/// regressions. psi+ and psi- are the potentials of the positive and negative
/// parts of the one-step drifts E[Theta(Y_{i+1}) | X_i] - Theta(Y_i); since the
/// fitted values are linear in the target, psi = psi+ - psi- holds exactly.
inline PsiEstimate psi_estimate(const BsdeSolution& sol, const ThetaMap& map, const TerminalCondition& tc,
                                const PathBundle& bundle, const BasisSpec& basis) {
    const std::size_t M = sol.M, N = sol.N(), d = bundle.dim();
    if (bundle.paths() != M || !(bundle.grid() == sol.grid)) throw SchemaError("psi_estimate: bundle does not match the solution");
    PsiEstimate est;
    est.M = M;
    est.times.assign(sol.grid.times().begin(), sol.grid.times().end());
    const std::size_t W = N + 1;
    est.psi.assign(M * W, 0.0);
    est.psi_plus.assign(M * W, 0.0);
    est.psi_minus.assign(M * W, 0.0);
    est.se_psi.assign(M * W, 0.0);
    est.se_minus.assign(M * W, 0.0);

    std::vector<double> cond_xi(M), theta_y(M * W);
    for (std::size_t m = 0; m < M; ++m) {
        cond_xi[m] = map.theta(tc.truncated(bundle.state(m, N), sol.n));
        for (std::size_t i = 0; i <= N; ++i) theta_y[m * W + i] = map.theta(sol.Y(m, i));
    }
    std::vector<double> states(M * d), target(M);
    for (std::size_t m = 0; m < M; ++m) est.psi[m * W + N] = cond_xi[m] - theta_y[m * W + N];
    for (std::size_t i = N; i-- > 0;) {
        for (std::size_t m = 0; m < M; ++m) {
            const auto x = bundle.state(m, i);
            std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>(m * d));
        }
        const Regressor reg(basis, states, d);
        const Fit f_xi = reg.fit(cond_xi);
        for (std::size_t m = 0; m < M; ++m) target[m] = theta_y[m * W + i + 1];
        const Fit f_next = reg.fit(target);
        for (std::size_t m = 0; m < M; ++m) target[m] = est.psi_plus[m * W + i + 1];
        const Fit f_plus = reg.fit(target);
        for (std::size_t m = 0; m < M; ++m) target[m] = est.psi_minus[m * W + i + 1];
        const Fit f_minus = reg.fit(target);
        for (std::size_t m = 0; m < M; ++m) {
            const std::size_t k = m * W + i;
            const double drift = f_next.fitted[m] - theta_y[k];
            cond_xi[m] = f_xi.fitted[m];
            est.psi[k] = cond_xi[m] - theta_y[k];
            est.se_psi[k] = f_xi.se[m];
            est.psi_plus[k] = std::max(drift, 0.0) + f_plus.fitted[m];
            est.psi_minus[k] = std::max(-drift, 0.0) + f_minus.fitted[m];
            est.se_minus[k] = std::hypot(f_next.se[m], f_minus.se[m]);
            est.reconstruction_error =
                std::max(est.reconstruction_error,
                         std::abs(theta_y[k] + est.psi_plus[k] - est.psi_minus[k] - cond_xi[m]));
        }
    }

    est.psi_mean.resize(W);
    est.plus_mean.resize(W);
    est.minus_mean.resize(W);
    est.se_mean.resize(W);
    est.se_minus_mean.resize(W);
    std::vector<double> col(M);
    for (std::size_t i = 0; i <= N; ++i) {
        auto summarize = [&](const std::vector<double>& v) {
            for (std::size_t m = 0; m < M; ++m) col[m] = v[m * W + i];
            return mean_and_se(col);
        };
        const auto p = summarize(est.psi), pp = summarize(est.psi_plus), pm = summarize(est.psi_minus);
        double se_reg = 0.0, se_reg_minus = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            se_reg += est.se_psi[m * W + i];
            se_reg_minus += est.se_minus[m * W + i];
        }
        est.psi_mean[i] = p.mean;
        est.plus_mean[i] = pp.mean;
        est.minus_mean[i] = pm.mean;
        // regression error of a fitted value does not average out across paths sharing a basis function
        est.se_mean[i] = std::hypot(p.se, se_reg / static_cast<double>(M));
        est.se_minus_mean[i] = std::hypot(pm.se, se_reg_minus / static_cast<double>(M));
    }
    return est;
}

// ---------------------------------------------------------------------------
// Supermartingale test

struct SupermartingaleReport {
    bool pass = true;
    double violation_rate = 0.0;
    std::size_t violations = 0;
    std::size_t checked = 0;
    std::vector<double> rate_by_time;
    double threshold = 0.05;
};

struct SupermartingaleOptions {
    double se_multiplier = 3.0;
    double threshold = 0.05;
    double abs_tol = 1e-12;
    bool condition_on_value = false;  // regress on (X_i, V_i) instead of X_i
    std::size_t first_step = 0;
};

/// `values` is M x (N+1); the conditioning state is the bundle state at each step.
inline SupermartingaleReport supermartingale_test(std::span<const double> values, const PathBundle& bundle,
                                                  const BasisSpec& basis, const SupermartingaleOptions& opt = {}) {
    const std::size_t M = bundle.paths(), N = bundle.steps(), d = bundle.dim();
    const std::size_t W = N + 1;
    if (values.size() != M * W) throw SchemaError("supermartingale_test: value array has the wrong shape");
    for (double v : values) {
        if (!std::isfinite(v)) throw SchemaError("supermartingale_test: values must be finite");
    }
    SupermartingaleReport rep;
    rep.threshold = opt.threshold;
    rep.rate_by_time.assign(N, 0.0);
    const std::size_t dc = d + (opt.condition_on_value ? 1 : 0);
    std::vector<double> states(M * dc), target(M);
    for (std::size_t i = opt.first_step; i < N; ++i) {
        for (std::size_t m = 0; m < M; ++m) {
            const auto x = bundle.state(m, i);
            std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>(m * dc));
            if (opt.condition_on_value) states[m * dc + d] = values[m * W + i];
            target[m] = values[m * W + i + 1];
        }
        const Regressor reg(basis, states, dc);
        const Fit f = reg.fit(target);
        std::size_t bad = 0;
        for (std::size_t m = 0; m < M; ++m) {
            const double v = values[m * W + i];
            const double excess = f.fitted[m] - v;
            if (excess > opt.se_multiplier * f.se[m] + opt.abs_tol * (1.0 + std::abs(v))) ++bad;
        }
        rep.violations += bad;
        rep.checked += M;
        rep.rate_by_time[i] = static_cast<double>(bad) / static_cast<double>(M);
    }
    rep.violation_rate = rep.checked ? static_cast<double>(rep.violations) / static_cast<double>(rep.checked) : 0.0;
    rep.pass = rep.violation_rate < opt.threshold;
    return rep;
}

// ---------------------------------------------------------------------------
// Bounds on the negative part

struct NegPartInputs {
    std::optional<double> kappa_star;  // lower bound of the jump compensator coefficient (second case)
};

struct NegPartConstants {
    double g_prime0 = 0.0;
    double theta0 = 0.0;
    double K_g = 0.0;
    double K_g_kappa = 0.0;
    double vartheta_l1 = 0.0;
    double lambda_total = 0.0;
};

/// K_g = sup_{y >= 0} (-y / g(y)).
inline double constant_K_g(const GFunction& g) {
    double best = 0.0;
    for (int j = -800; j <= 800; ++j) {
        const double y = std::pow(10.0, j / 100.0);
        best = std::max(best, -y / g(y));
    }
    return best;
}

/// K_{g,kappa} = sup_{y >= 0} (-(1/g(y)) g^{-1}(g(y) / (1 + kappa))) for -1 < kappa <= 0.
inline double constant_K_g_kappa(const GFunction& g, double kappa) {
    if (!(kappa > -1.0)) throw DomainError("K_g_kappa: kappa must exceed -1");
    if (kappa >= 0.0) return 0.0;
    auto ginv = [&](double v) {
        // g is decreasing with g(0) < 0; solve g(x) = v for v <= g(0)
        double hi = 1.0;
        while (g(hi) > v) hi *= 2.0;
        std::uintmax_t it = 200;
        auto F = [&](double x) { return g(x) - v; };
        const auto r = boost::math::tools::toms748_solve(F, 0.0, hi, F(0.0), F(hi),
                                                         boost::math::tools::eps_tolerance<double>(45), it);
        return 0.5 * (r.first + r.second);
    };
    double best = 0.0;
    for (int j = -600; j <= 600; ++j) {
        const double y = j == -600 ? 0.0 : std::pow(10.0, j / 100.0);
        const double gy = g(y);
        best = std::max(best, -ginv(gy / (1.0 + kappa)) / gy);
    }
    return best;
}

inline double b_integral(const GeneratorSpec& gen, double t) {
    const double tau = gen.horizon - t;
    if (!(tau > 0.0)) return 0.0;
    if (gen.family == Family::Toy) return tau;
    if (gen.family == Family::PowerSingularity) {
        const double e = 1.0 + gen.power->varsigma;
        if (e <= 0.0) return kInf;
        return std::pow(tau, e) / e;
    }
    return detail::integrate_smooth([&](double r) { return gen.b_lower(gen.horizon - r); }, 0.0, tau);
}

inline NegPartConstants neg_part_constants(const GeneratorSpec& gen, const ThetaMap& map,
                                           const NegPartInputs& in = {}) {
    NegPartConstants c;
    c.g_prime0 = gen.g.prime(0.0);
    c.theta0 = map.theta_at_zero();
    c.K_g = constant_K_g(gen.g);
    if (in.kappa_star) c.K_g_kappa = constant_K_g_kappa(gen.g, *in.kappa_star);
    const auto& jm = gen.jumps;
    c.lambda_total = jm.total_intensity();
    for (std::size_t k = 0; k < jm.size() && k < gen.vartheta.size(); ++k) c.vartheta_l1 += std::abs(gen.vartheta[k]) * jm.weights[k];
    return c;
}

/// Right-hand side of the negative-part estimate for the given case at time t.
inline double neg_part_bound(const GeneratorSpec& gen, int which, double t, const ThetaMap& map,
                             const NegPartInputs& in = {}) {
    const double tau = gen.horizon - t;
    const auto c = neg_part_constants(gen, map, in);
    if (!(c.g_prime0 < 0.0)) throw PreconditionError("g", "g'(0) must be negative");
    const double zterm = -gen.L * gen.L / (2.0 * c.g_prime0);
    const double bint = b_integral(gen, t);
    switch (which) {
        case 1: {
            // f independent of u, or pi(t, 0, u) >= 0
            if (gen.family == Family::Control) {
                bool any_finite = false;
                for (std::size_t k = 0; k < gen.jumps.size(); ++k) {
                    if (std::isfinite(gen.control->beta(t, k))) any_finite = true;
                }
                if (any_finite) throw PreconditionError("case1", "f depends on u and pi(t,0,u) can be negative");
            }
            if (gen.family == Family::Custom && !gen.jumps.weights.empty()) {
                for (double v : {-2.0, -0.5, 0.5, 2.0}) {
                    std::vector<double> u(gen.jumps.size(), v), z(1, 0.0), u0(gen.jumps.size(), 0.0);
                    if (eval_generator(gen, t, 0.0, z, u) < eval_generator(gen, t, 0.0, z, u0) - 1e-12) {
                        throw PreconditionError("case1", "pi(t,0,u) can be negative");
                    }
                }
            }
            return zterm * tau + bint;
        }
        case 2: {
            if (!in.kappa_star) throw PreconditionError("case2", "a lower bound kappa_* is required");
            if (!(*in.kappa_star > -1.0)) throw PreconditionError("case2", "kappa_* must exceed -1");
            if (!std::isfinite(c.vartheta_l1)) throw PreconditionError("case2", "vartheta must be in L1");
            return (zterm + c.vartheta_l1 * std::max(c.K_g, c.K_g_kappa)) * tau + bint;
        }
        case 3: {
            if (!std::isfinite(c.lambda_total)) throw PreconditionError("case3", "lambda must be finite");
            return bint + tau * (zterm + c.lambda_total * (c.theta0 + c.K_g) + c.vartheta_l1 * c.K_g);
        }
        default:
            throw SchemaError("neg_part_bound: case must be 1, 2 or 3");
    }
}

/// Smallest case whose premises hold for the generator (without a kappa_* input).
inline int applicable_case(const GeneratorSpec& gen) {
    if (gen.family == Family::Toy || gen.family == Family::PowerSingularity) return 1;
    if (gen.family == Family::Control) {
        for (std::size_t k = 0; k < gen.jumps.size(); ++k) {
            if (std::isfinite(gen.control->beta(0.0, k))) return 3;
        }
        return 1;
    }
    return gen.jumps.size() == 0 ? 1 : 3;
}

/// Checks that the mean of psi- over the last k interior grid times decreases toward 0.
struct TrendReport {
    bool decreasing = true;
    std::vector<double> values;
    std::vector<double> se;
};

inline TrendReport minus_trend(const PsiEstimate& est, std::size_t k = 5, double se_multiplier = 3.0) {
    TrendReport r;
    const std::size_t N = est.N();
    if (N < k + 1) throw SchemaError("minus_trend: grid too coarse");
    for (std::size_t i = N - k; i < N; ++i) {
        r.values.push_back(est.minus_mean[i]);
        r.se.push_back(est.se_minus_mean[i]);
    }
    for (std::size_t j = 1; j < r.values.size(); ++j) {
        if (r.values[j] > r.values[j - 1] + se_multiplier * std::hypot(r.se[j], r.se[j - 1])) r.decreasing = false;
    }
    if (!(r.values.back() < r.values.front() || r.values.front() == 0.0)) r.decreasing = false;
    return r;
}

}  // namespace bsdelab
