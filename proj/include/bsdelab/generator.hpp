#pragma once

// Generator families, their structural decomposition, and the condition checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "core.hpp"

namespace bsdelab {

// ---------------------------------------------------------------------------
// Jump measure

/// Finite mark set E = {e_1, ..., e_K} with intensities lambda_k > 0.
struct JumpMeasure {
    std::vector<double> marks;
    std::vector<double> weights;

    std::size_t size() const noexcept { return weights.size(); }
    double total_intensity() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }

    void validate() const {
        if (marks.size() != weights.size()) throw SchemaError("jump measure: marks and weights differ in length");
        for (double w : weights) {
            if (!(w > 0.0) || !std::isfinite(w)) throw SchemaError("jump measure: weights must be finite and positive");
        }
        for (std::size_t i = 0; i < marks.size(); ++i) {
            for (std::size_t j = i + 1; j < marks.size(); ++j) {
                if (marks[i] == marks[j]) throw SchemaError("jump measure: marks must be distinct");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// The comparison function g of the structure condition

enum class GKind { Standard, Quadratic, Exponential, Custom };

/// Negative, decreasing, concave C^1 function on [0, inf).
struct GFunction {
    GKind kind = GKind::Standard;
    double q = 1.0;
    std::function<double(double)> value;
    std::function<double(double)> derivative;

    double operator()(double y) const { return value(y); }
    double prime(double y) const { return derivative(y); }

    /// g(y) = -y^{1+q} - y - 1.
    static GFunction standard(double q) {
        GFunction g;
        g.kind = GKind::Standard;
        g.q = q;
        g.value = [q](double y) { return -y * std::pow(std::abs(y), q) - y - 1.0; };
        g.derivative = [q](double y) { return -(1.0 + q) * std::pow(std::abs(y), q) - 1.0; };
        return g;
    }
    /// g(y) = -(y+1)^2.
    static GFunction quadratic() {
        GFunction g;
        g.kind = GKind::Quadratic;
        g.q = 1.0;
        g.value = [](double y) { return -(y + 1.0) * (y + 1.0); };
        g.derivative = [](double y) { return -2.0 * (y + 1.0); };
        return g;
    }
    /// g(y) = -exp(y).
    static GFunction exponential() {
        GFunction g;
        g.kind = GKind::Exponential;
        g.q = 1.0;
        g.value = [](double y) { return -std::exp(y); };
        g.derivative = [](double y) { return -std::exp(y); };
        return g;
    }
};

// ---------------------------------------------------------------------------
// Generator parameters

enum class Family { Control, Toy, PowerSingularity, Custom };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::Control: return "control";
        case Family::Toy: return "toy";
        case Family::PowerSingularity: return "power";
        case Family::Custom: return "custom";
    }
    return "?";
}

using TimeFunction = std::function<double(double)>;
using MarkFunction = std::function<double(double, std::size_t)>;
using DriverFunction =
    std::function<double(double, double, std::span<const double>, std::span<const double>)>;

struct ControlParams {
    TimeFunction alpha;
    MarkFunction beta;  // may return +inf
    TimeFunction gamma;
};

struct PowerParams {
    double varsigma = 0.0;
    double varpi = 0.0;
};

struct GeneratorSpec {
    Family family = Family::Toy;
    double horizon = 1.0;
    double q = 1.0;
    double L = 0.0;
    std::vector<double> vartheta;
    double ell = 1.1;
    double eta = 0.05;
    TimeFunction f0;
    TimeFunction a;
    TimeFunction b_lower;
    GFunction g;
    JumpMeasure jumps;
    std::optional<ControlParams> control;
    std::optional<PowerParams> power;
    DriverFunction custom;  // Custom family only
    /// Multiplicative constant of the general a priori bound.
    double bound_constant = 1.0;
    /// Integrability exponent used inside the general a priori bound.
    double bound_ell = 1.0;

    double p() const { return 1.0 + 1.0 / q; }
    bool time_singular() const {
        return family == Family::PowerSingularity && (power->varpi > 0.0 || power->varsigma < 0.0);
    }
};

namespace detail {

inline double spow(double y, double q) { return y * std::pow(std::abs(y), q); }

inline void require_family(const GeneratorSpec& s, Family f, const char* op) {
    if (s.family != f) throw SchemaError(std::string(op) + ": generator family mismatch");
}

inline void check_common(const GeneratorSpec& s) {
    if (!(s.q > 0.0) || !std::isfinite(s.q)) throw SchemaError("generator: q must be positive");
    if (!(s.horizon > 0.0)) throw SchemaError("generator: horizon must be positive");
    if (!(s.L >= 0.0)) throw SchemaError("generator: L must be nonnegative");
    if (!(s.ell >= 1.0)) throw SchemaError("generator: ell must be at least 1");
    if (!(s.eta < 1.0)) throw SchemaError("generator: eta must be below 1");
}

/// Summand of the jump-control term for one mark: w (1 - beta / (w^q + beta^q)^{1/q}) for w >= 0.
inline double beta_hat_term(double w, double beta, double q) {
    if (!(w > 0.0) || std::isinf(beta)) return 0.0;
    if (beta <= 0.0) return w;
    const double r = std::pow(w / beta, q);
    return -w * std::expm1(-std::log1p(r) / q);
}

}  // namespace detail

inline GeneratorSpec make_toy(double q, double horizon = 1.0) {
    GeneratorSpec s;
    s.family = Family::Toy;
    s.q = q;
    s.horizon = horizon;
    s.L = 0.0;
    s.f0 = [](double) { return 0.0; };
    s.a = [](double) { return 1.0; };
    s.b_lower = s.a;
    s.g = GFunction::standard(q);
    detail::check_common(s);
    return s;
}

inline GeneratorSpec make_power(double q, double varsigma, double varpi, double horizon = 1.0) {
    GeneratorSpec s;
    s.family = Family::PowerSingularity;
    s.q = q;
    s.horizon = horizon;
    s.power = PowerParams{varsigma, varpi};
    s.f0 = [horizon, varpi](double t) { return std::pow(horizon - t, -varpi); };
    s.a = [horizon, varsigma](double t) { return std::pow(horizon - t, varsigma); };
    s.b_lower = s.a;
    s.g = GFunction::standard(q);
    detail::check_common(s);
    return s;
}

/// f = -y|y|^q / (q alpha^q) - beta_hat(t, y, u) + gamma.
inline GeneratorSpec make_control(double q, ControlParams params, JumpMeasure jumps, double horizon = 1.0) {
    GeneratorSpec s;
    s.family = Family::Control;
    s.q = q;
    s.horizon = horizon;
    jumps.validate();
    s.jumps = jumps;
    const double lam = jumps.total_intensity();
    bool any_finite_beta = false;
    for (std::size_t k = 0; k < jumps.size(); ++k) {
        for (double t : {0.0, 0.5 * horizon, horizon}) {
            if (std::isfinite(params.beta(t, k))) any_finite_beta = true;
        }
    }
    s.vartheta.assign(jumps.size(), any_finite_beta ? 1.0 : 0.0);
    s.a = [q, alpha = params.alpha](double t) { return 1.0 / (q * std::pow(alpha(t), q)); };
    s.f0 = params.gamma;
    const double lip = any_finite_beta ? lam : 0.0;
    s.b_lower = [a = s.a, lip](double t) { return std::max(a(t), lip); };
    s.g = GFunction::standard(q);
    s.control = std::move(params);
    detail::check_common(s);
    return s;
}

inline ControlParams constant_control(double alpha, double beta, double gamma) {
    return ControlParams{[alpha](double) { return alpha; }, [beta](double, std::size_t) { return beta; },
                         [gamma](double) { return gamma; }};
}

/// f = -a0 y|y|^q - k y + c0 + Lz |z|; covers the degenerate f = const cases with a0 = k = 0.
inline GeneratorSpec make_polynomial(double q, double a0, double k, double c0, double lz, double horizon = 1.0) {
    if (a0 < 0.0 || k < 0.0 || c0 < 0.0 || lz < 0.0) throw SchemaError("polynomial generator: coefficients must be nonnegative");
    GeneratorSpec s;
    s.family = Family::Custom;
    s.q = q;
    s.horizon = horizon;
    s.L = lz;
    s.f0 = [c0](double) { return c0; };
    s.a = [a0](double) { return a0; };
    s.b_lower = [a0, k](double) { return std::max({a0, k, 1e-300}); };
    s.g = GFunction::standard(q);
    s.custom = [=](double, double y, std::span<const double> z, std::span<const double>) {
        double nz = 0.0;
        for (double v : z) nz += v * v;
        return -a0 * detail::spow(y, q) - k * y + c0 + lz * std::sqrt(nz);
    };
    detail::check_common(s);
    return s;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Jump-control term: sum_k lambda_k (y+u_k)(1 - beta_k/((y+u_k)^q + beta_k^q)^{1/q}) 1{y+u_k >= 0}.
inline double eval_beta_hat(const GeneratorSpec& s, double t, double y, std::span<const double> u) {
    detail::require_family(s, Family::Control, "eval_beta_hat");
    const auto& jm = s.jumps;
    if (!u.empty() && u.size() != jm.size()) throw SchemaError("eval_beta_hat: u must be tabulated on the mark set");
    double total = 0.0;
    for (std::size_t k = 0; k < jm.size(); ++k) {
        const double w = y + (u.empty() ? 0.0 : u[k]);
        const double beta = s.control->beta(t, k);
        if (beta < 0.0) throw DomainError("eval_beta_hat: beta must be nonnegative");
        total += jm.weights[k] * detail::beta_hat_term(w, beta, s.q);
    }
    return total;
}

inline double eval_generator(const GeneratorSpec& s, double t, double y, std::span<const double> z = {},
                             std::span<const double> u = {}) {
    if (t >= s.horizon && s.time_singular()) throw DomainError("generator singular at T");
    switch (s.family) {
        case Family::Toy:
            return -detail::spow(y, s.q);
        case Family::PowerSingularity: {
            const double tau = s.horizon - t;
            return -std::pow(tau, s.power->varsigma) * detail::spow(y, s.q) + std::pow(tau, -s.power->varpi);
        }
        case Family::Control: {
            const double alpha = s.control->alpha(t);
            return -detail::spow(y, s.q) / (s.q * std::pow(alpha, s.q)) - eval_beta_hat(s, t, y, u) +
                   s.control->gamma(t);
        }
        case Family::Custom:
            return s.custom(t, y, z, u);
    }
    return 0.0;
}

/// f - f0 + a y|y|^q: the part of the driver beyond the dominant power term and the source.
inline double eval_remainder(const GeneratorSpec& s, double t, double y, std::span<const double> z,
                             std::span<const double> u) {
    switch (s.family) {
        case Family::Toy:
        case Family::PowerSingularity:
            return 0.0;
        case Family::Control:
            return -eval_beta_hat(s, t, y, u);
        case Family::Custom:
            return s.custom(t, y, z, u) - s.f0(t) + s.a(t) * detail::spow(y, s.q);
    }
    return 0.0;
}

/// Truncated driver f_n = f - f0 + (f0 ^ n).
inline double eval_truncated(const GeneratorSpec& s, double t, double y, std::span<const double> z,
                             std::span<const double> u, double n) {
    const double f0 = s.f0(t);
    return eval_generator(s, t, y, z, u) - f0 + std::min(f0, n);
}

// ---------------------------------------------------------------------------
// Step integrals of the coefficients, in terms of time to maturity

namespace detail {

template <typename F>
double integrate_smooth(F&& f, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    double err = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 12, 1e-12, &err);
    if (!std::isfinite(v)) throw NumericError("quadrature returned a non-finite value");
    return v;
}

/// int_{tau1}^{tau0} min(tau^{-w}, n) dtau for tau1 < tau0.
inline double truncated_power_integral(double tau1, double tau0, double w, double n) {
    auto prim = [w](double x) { return std::abs(1.0 - w) < 1e-14 ? std::log(x) : std::pow(x, 1.0 - w) / (1.0 - w); };
    auto plain = [&](double lo, double hi) {
        if (!(hi > lo)) return 0.0;
        if (w == 0.0) return hi - lo;
        if (std::abs(1.0 - w) < 1e-14) return std::log(hi / lo);
        return prim(hi) - prim(lo);
    };
    if (w <= 0.0) {
        // tau^{-w} is nondecreasing in tau; truncation active above tau* = n^{-1/w}
        if (w == 0.0) return (tau0 - tau1) * std::min(1.0, n);
        const double star = std::pow(n, -1.0 / w);
        if (star >= tau0) return plain(tau1, tau0);
        if (star <= tau1) return n * (tau0 - tau1);
        return plain(tau1, star) + n * (tau0 - star);
    }
    const double star = std::pow(n, -1.0 / w);  // below star the source exceeds n
    if (star <= tau1) return plain(tau1, tau0);
    if (star >= tau0) return n * (tau0 - tau1);
    return n * (star - tau1) + plain(star, tau0);
}

}  // namespace detail

/// int over [t_i, t_{i+1}] of (f0 ^ n), given times to maturity tau0 = T - t_i > tau1 = T - t_{i+1}.
inline double truncated_source_integral(const GeneratorSpec& s, double tau0, double tau1, double n) {
    switch (s.family) {
        case Family::Toy:
            return 0.0;
        case Family::PowerSingularity:
            return detail::truncated_power_integral(tau1, tau0, s.power->varpi, n);
        default: {
            const double T = s.horizon;
            return detail::integrate_smooth([&](double tau) { return std::min(s.f0(T - tau), n); }, tau1, tau0);
        }
    }
}

/// int over [t_i, t_{i+1}] of a.
inline double coefficient_integral(const GeneratorSpec& s, double tau0, double tau1) {
    switch (s.family) {
        case Family::Toy:
            return tau0 - tau1;
        case Family::PowerSingularity: {
            const double e = 1.0 + s.power->varsigma;
            if (e <= 0.0) throw DomainError("coefficient a is not integrable at T");
            return (std::pow(tau0, e) - std::pow(tau1, e)) / e;
        }
        default: {
            const double T = s.horizon;
            return detail::integrate_smooth([&](double tau) { return s.a(T - tau); }, tau1, tau0);
        }
    }
}

// ---------------------------------------------------------------------------
// Exponent of the Holder/weight trade-off

/// rho = 2/q + 2(1 - 1/ell) + 2 eta/ell.
inline double rho(double q, double ell, double eta) {
    if (!(q > 0.0)) throw DomainError("rho: q must be positive");
    if (!(ell >= 1.0)) throw DomainError("rho: ell must be at least 1");
    if (!(eta < 1.0)) throw DomainError("rho: eta must be below 1");
    return 2.0 / q + 2.0 * (1.0 - 1.0 / ell) + 2.0 * eta / ell;
}

// ---------------------------------------------------------------------------
// Integrability at the terminal time

struct EndpointIntegral {
    enum class Status { Integrable, Divergent, Indeterminate } status = Status::Indeterminate;
    double exponent = 0.0;  // local power of the integrand as tau -> 0
    double value = kInf;    // int_0^T when integrable
};

/// Decides integrability of F on (0, T] near tau = 0 from its local power law
/// and integrates it on a logarithmic scale with a power-law tail correction.
template <typename F>
EndpointIntegral integrate_to_terminal(F&& f_tau, double T) {
    EndpointIntegral r;
    auto local_exponent = [&](double tau) {
        const double h = 0.25;
        const double fa = f_tau(tau * std::exp(h)), fb = f_tau(tau * std::exp(-h));
        if (fa == 0.0 && fb == 0.0) return kInf;
        if (!(fa > 0.0) || !(fb > 0.0) || !std::isfinite(fa) || !std::isfinite(fb)) return std::nan("");
        return (std::log(fa) - std::log(fb)) / (2.0 * h);
    };
    const double s_coarse = local_exponent(T * 1e-10);
    const double s_fine = local_exponent(T * 1e-12);
    if (std::isinf(s_fine) && std::isinf(s_coarse)) {
        r.exponent = kInf;
    } else if (std::isnan(s_fine) || std::isnan(s_coarse) || std::abs(s_fine - s_coarse) > 0.05) {
        r.status = EndpointIntegral::Status::Indeterminate;
        r.exponent = s_fine;
        return r;
    } else {
        r.exponent = s_fine;
    }
    if (!(r.exponent > -1.0 + 1e-7)) {
        r.status = EndpointIntegral::Status::Divergent;
        return r;
    }
    const double tau0 = T * 1e-12;
    try {
        const double body = detail::integrate_smooth(
            [&](double u) {
                const double tau = std::exp(u);
                return f_tau(tau) * tau;
            },
            std::log(tau0), std::log(T));
        const double tail = std::isinf(r.exponent) ? 0.0 : f_tau(tau0) * tau0 / (r.exponent + 1.0);
        r.value = body + tail;
    } catch (const std::exception&) {
        r.status = EndpointIntegral::Status::Indeterminate;
        return r;
    }
    r.status = std::isfinite(r.value) ? EndpointIntegral::Status::Integrable : EndpointIntegral::Status::Indeterminate;
    return r;
}

// ---------------------------------------------------------------------------
// Condition report

enum class Verdict { Holds, Fails, HoldsWithBound, Indeterminate };

inline const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Holds: return "holds";
        case Verdict::Fails: return "fails";
        case Verdict::HoldsWithBound: return "holds-with-bound";
        case Verdict::Indeterminate: return "indeterminate";
    }
    return "?";
}

struct ConditionEntry {
    std::string name;
    Verdict verdict = Verdict::Indeterminate;
    double value = std::nan("");
    std::string evidence;

    bool ok() const { return verdict == Verdict::Holds || verdict == Verdict::HoldsWithBound; }
};

struct ConditionReport {
    std::vector<ConditionEntry> entries;

    const ConditionEntry* find(const std::string& name) const {
        for (const auto& e : entries) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }
    Verdict verdict(const std::string& name) const {
        const auto* e = find(name);
        if (!e) throw SchemaError("no condition named " + name);
        return e->verdict;
    }
    bool holds(const std::string& name) const {
        const auto* e = find(name);
        return e && e->ok();
    }
    bool all_hold(std::initializer_list<const char*> names) const {
        for (const char* n : names) {
            if (!holds(n)) return false;
        }
        return true;
    }
    /// First entry that fails or is indeterminate, in report order.
    const ConditionEntry* first_problem() const {
        for (const auto& e : entries) {
            if (!e.ok()) return &e;
        }
        return nullptr;
    }
    void add(std::string name, Verdict v, double value, std::string evidence) {
        entries.push_back({std::move(name), v, value, std::move(evidence)});
    }
};

/// Deterministic sample lattice for the inequality-based checks.
struct SampleLattice {
    std::vector<double> t_fractions{0.0, 0.25, 0.5, 0.75, 0.9, 0.99};
    std::vector<double> y_values{0.0, 1e-3, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0};
    std::vector<double> z_values{-2.0, -0.5, 0.0, 0.5, 2.0};
    std::vector<double> u_values{-3.0, -1.0, -0.2, 0.0, 0.3, 1.0, 4.0};
    std::size_t z_dim = 1;
    int k_override = 0;  // exponent of the jump integrability check; 0 means automatic
};

namespace detail {

inline std::vector<std::vector<double>> lattice_vectors(const std::vector<double>& vals, std::size_t dim) {
    std::vector<std::vector<double>> out;
    if (dim == 0) return {std::vector<double>{}};
    for (double v : vals) {
        std::vector<double> x(dim, 0.0);
        x[0] = v;
        out.push_back(x);
        if (dim > 1) {
            std::vector<double> all(dim, v);
            out.push_back(all);
            std::vector<double> alt(dim);
            for (std::size_t i = 0; i < dim; ++i) alt[i] = (i % 2 == 0) ? v : -0.5 * v;
            out.push_back(alt);
        }
    }
    return out;
}

inline Verdict from_integral(const EndpointIntegral& r) {
    switch (r.status) {
        case EndpointIntegral::Status::Integrable: return Verdict::HoldsWithBound;
        case EndpointIntegral::Status::Divergent: return Verdict::Fails;
        default: return Verdict::Indeterminate;
    }
}

inline std::string exponent_text(const EndpointIntegral& r) {
    return "local exponent at T: " + format_double(r.exponent);
}

/// [(1/(q a))^{1/q} + tau^p f0]: the base of the integrability conditions.
inline double growth_base(const GeneratorSpec& s, double tau) {
    const double t = s.horizon - tau;
    double a, f0;
    if (s.family == Family::PowerSingularity) {
        a = std::pow(tau, s.power->varsigma);
        f0 = std::pow(tau, -s.power->varpi);
    } else {
        a = s.a(t);
        f0 = s.f0(t);
    }
    return std::pow(1.0 / (s.q * a), 1.0 / s.q) + std::pow(tau, s.p()) * f0;
}

}  // namespace detail

inline ConditionReport check_conditions(const GeneratorSpec& s, const JumpMeasure& jm,
                                        const SampleLattice& lattice = {}) {
    ConditionReport rep;
    const double T = s.horizon;
    const double q = s.q;
    const std::size_t K = jm.size();
    const auto zs = detail::lattice_vectors(lattice.z_values, lattice.z_dim);
    auto us = detail::lattice_vectors(lattice.u_values, K);
    if (K == 0) us = {std::vector<double>{}};
    std::vector<double> times;
    for (double fr : lattice.t_fractions) times.push_back(fr * T);
    const double tol = 1e-10;
    auto close_le = [tol](double lhs, double rhs) { return lhs <= rhs + tol * (1.0 + std::abs(lhs) + std::abs(rhs)); };

    if (s.family == Family::Control && s.jumps.size() != K) {
        throw SchemaError("check_conditions: control generator and jump measure disagree on the mark count");
    }

    // Structure of the coefficients
    {
        bool ok = true;
        std::string where;
        for (double t : times) {
            const double f0 = s.f0(t), a = s.a(t);
            if (!(f0 >= 0.0)) ok = false, where = "f0 < 0 at t=" + format_double(t);
            if (!(a > 0.0)) ok = false, where = "a <= 0 at t=" + format_double(t);
        }
        rep.add("coefficients", ok ? Verdict::Holds : Verdict::Fails, std::nan(""),
                ok ? "f0 >= 0 and a > 0 on the lattice" : where);
    }

    // A1: monotone decreasing in y (chi = 0)
    {
        std::size_t bad = 0, total = 0;
        std::vector<double> ys = lattice.y_values;
        for (double y : lattice.y_values) {
            if (y > 0.0) ys.push_back(-y);
        }
        std::sort(ys.begin(), ys.end());
        for (double t : times)
            for (const auto& z : zs)
                for (const auto& u : us)
                    for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
                        const double d = (eval_generator(s, t, ys[i], z, u) - eval_generator(s, t, ys[i + 1], z, u)) *
                                         (ys[i] - ys[i + 1]);
                        ++total;
                        if (!close_le(d, 0.0)) ++bad;
                    }
        rep.add("A1", bad == 0 ? Verdict::Holds : Verdict::Fails, static_cast<double>(bad),
                std::to_string(bad) + " of " + std::to_string(total) + " sampled pairs violate monotonicity");
    }

    // A2: sup_{|y|<=1} |f(t,y,0,0) - f0| integrable; for power-type drivers the sup sits at |y| = 1
    {
        auto F = [&](double tau) {
            const double t = T - tau;
            double m = 0.0;
            for (double y : {-1.0, -0.5, 0.5, 1.0}) {
                // the power family is evaluated without the source to avoid cancellation near T
                const double diff = s.family == Family::PowerSingularity
                                        ? std::pow(tau, s.power->varsigma) * std::abs(detail::spow(y, q))
                                        : eval_generator(s, t, y, std::vector<double>(lattice.z_dim, 0.0),
                                                         std::vector<double>(K, 0.0)) - s.f0(t);
                m = std::max(m, std::abs(diff));
            }
            return m;
        };
        const auto r = integrate_to_terminal(F, T);
        rep.add("A2", detail::from_integral(r), r.value, detail::exponent_text(r));
    }

    // A3: Lipschitz in z
    {
        double worst = 0.0;
        for (double t : times)
            for (double y : lattice.y_values)
                for (const auto& u : us)
                    for (const auto& z1 : zs)
                        for (const auto& z2 : zs) {
                            double dz = 0.0;
                            for (std::size_t i = 0; i < z1.size(); ++i) dz += (z1[i] - z2[i]) * (z1[i] - z2[i]);
                            dz = std::sqrt(dz);
                            if (dz == 0.0) continue;
                            const double df = std::abs(eval_remainder(s, t, y, z1, u) - eval_remainder(s, t, y, z2, u));
                            worst = std::max(worst, df / dz);
                        }
        const bool ok = worst <= s.L * (1.0 + 1e-9) + 1e-12;
        rep.add("A3", ok ? Verdict::Holds : Verdict::Fails, worst,
                "largest sampled z-difference quotient " + format_double(worst) + " vs L=" + format_double(s.L));
    }

    // A4 consequence: |f(u) - f(v)| <= ||vartheta||_{L2} ||u - v||_{L2}
    {
        double theta_norm = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double v = k < s.vartheta.size() ? s.vartheta[k] : 0.0;
            theta_norm += v * v * jm.weights[k];
        }
        theta_norm = std::sqrt(theta_norm);
        double worst = 0.0;
        bool ok = true;
        const std::vector<double> z0(lattice.z_dim, 0.0);
        for (double t : times)
            for (double y : lattice.y_values)
                for (const auto& u1 : us)
                    for (const auto& u2 : us) {
                        double du = 0.0;
                        for (std::size_t k = 0; k < K; ++k) du += (u1[k] - u2[k]) * (u1[k] - u2[k]) * jm.weights[k];
                        du = std::sqrt(du);
                        const double df = std::abs(eval_remainder(s, t, y, z0, u1) - eval_remainder(s, t, y, z0, u2));
                        if (du == 0.0) {
                            if (df > 1e-12) ok = false;
                            continue;
                        }
                        worst = std::max(worst, df / du);
                    }
        if (worst > theta_norm * (1.0 + 1e-9) + 1e-12) ok = false;
        rep.add("A4", ok ? Verdict::Holds : Verdict::Fails, worst,
                "largest sampled u-difference quotient " + format_double(worst) + " vs ||vartheta||=" +
                    format_double(theta_norm));
    }

    // A5: f(t,y,z,u) <= -a y^{1+q} + f(t,0,z,u) for y >= 0
    {
        std::size_t bad = 0, total = 0;
        bool positive_a = true;
        for (double t : times) {
            const double a = s.a(t);
            if (!(a > 0.0)) positive_a = false;
            for (const auto& z : zs)
                for (const auto& u : us) {
                    const double f_zero = eval_generator(s, t, 0.0, z, u);
                    for (double y : lattice.y_values) {
                        ++total;
                        if (!close_le(eval_generator(s, t, y, z, u), -a * std::pow(y, 1.0 + q) + f_zero)) ++bad;
                    }
                }
        }
        const bool ok = bad == 0 && positive_a;
        rep.add("A5", ok ? Verdict::Holds : Verdict::Fails, static_cast<double>(bad),
                positive_a ? std::to_string(bad) + " of " + std::to_string(total) + " sampled points violate the bound"
                           : "coefficient a is not positive");
    }

    // A6 and A6*
    {
        const double ell = s.ell;
        auto base = [&](double tau) { return std::pow(detail::growth_base(s, tau), ell); };
        const auto r6 = integrate_to_terminal(base, T);
        rep.add("A6", detail::from_integral(r6), r6.value, detail::exponent_text(r6));
        const double eta = s.eta;
        auto weighted = [&](double tau) { return std::pow(tau, -1.0 + eta) * base(tau); };
        const auto r6s = integrate_to_terminal(weighted, T);
        rep.add("A6*", detail::from_integral(r6s), r6s.value, detail::exponent_text(r6s));
    }

    // A7: int |vartheta|^k dlambda < inf for k > max(2, ell/(ell-1))
    {
        const double kmin = s.ell > 1.0 ? std::max(2.0, s.ell / (s.ell - 1.0)) : kInf;
        const double k = lattice.k_override > 0 ? static_cast<double>(lattice.k_override) : kmin + 1.0;
        if (!std::isfinite(k) || !(k > kmin)) {
            rep.add("A7", Verdict::Fails, std::nan(""), "no admissible exponent k for ell=" + format_double(s.ell));
        } else {
            double sum = 0.0;
            for (std::size_t j = 0; j < K; ++j) {
                const double v = j < s.vartheta.size() ? s.vartheta[j] : 0.0;
                sum += std::pow(std::abs(v), k) * jm.weights[j];
            }
            rep.add("A7", std::isfinite(sum) ? Verdict::HoldsWithBound : Verdict::Fails, sum,
                    "k=" + format_double(k) + " on a finite mark set");
        }
    }

    // A8: f0 integrable
    {
        auto F = [&](double tau) {
            return s.family == Family::PowerSingularity ? std::pow(tau, -s.power->varpi) : s.f0(T - tau);
        };
        const auto r = integrate_to_terminal(F, T);
        rep.add("A8", detail::from_integral(r), r.value, detail::exponent_text(r));
    }

    // A9: rho < 1
    {
        if (s.ell >= 1.0 && s.eta < 1.0) {
            const double r = rho(q, s.ell, s.eta);
            rep.add("A9", r < 1.0 ? Verdict::Holds : Verdict::Fails, r, "rho=" + format_double(r));
        } else {
            rep.add("A9", Verdict::Fails, std::nan(""), "rho undefined for the configured ell, eta");
        }
    }

    // g properties
    {
        const GFunction& g = s.g;
        bool ok = g(0.0) < 0.0 && g.prime(0.0) < 0.0;
        std::string why = ok ? "" : "g(0) or g'(0) not negative";
        double prev = g(0.0);
        const std::vector<double> ys{0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 50.0};
        for (std::size_t i = 1; i < ys.size(); ++i) {
            const double v = g(ys[i]);
            if (!(v < prev)) ok = false, why = "g not decreasing";
            prev = v;
            if (!close_le(v, -detail::spow(ys[i], q))) ok = false, why = "g(y) > -y|y|^q";
            if (i + 1 < ys.size()) {
                // concavity: chord above the graph
                const double y0 = ys[i - 1], y1 = ys[i], y2 = ys[i + 1];
                const double w = (y2 - y1) / (y2 - y0);
                if (g(y1) + 1e-10 * (1.0 + std::abs(g(y1))) < w * g(y0) + (1.0 - w) * g(y2)) ok = false, why = "g not concave";
            }
        }
        rep.add("g", ok ? Verdict::Holds : Verdict::Fails, g.prime(0.0), ok ? "g'(0)=" + format_double(g.prime(0.0)) : why);
    }

    // B: b g(y) <= f(t,y,z,u) - f(t,0,z,u) for y >= 0, with b positive and integrable
    {
        std::size_t bad = 0, total = 0;
        bool positive = true;
        for (double t : times) {
            const double b = s.b_lower(t);
            if (!(b > 0.0)) positive = false;
            for (const auto& z : zs)
                for (const auto& u : us) {
                    const double f_zero = eval_generator(s, t, 0.0, z, u);
                    for (double y : lattice.y_values) {
                        ++total;
                        if (!close_le(b * s.g(y), eval_generator(s, t, y, z, u) - f_zero)) ++bad;
                    }
                }
        }
        auto F = [&](double tau) {
            return s.family == Family::PowerSingularity ? std::pow(tau, s.power->varsigma) : s.b_lower(T - tau);
        };
        const auto r = integrate_to_terminal(F, T);
        Verdict v = Verdict::Holds;
        std::string ev = std::to_string(bad) + " of " + std::to_string(total) + " sampled points violate b g(y) <= f(y)-f(0)";
        if (bad > 0 || !positive) {
            v = Verdict::Fails;
            if (!positive) ev = "b is not positive";
        } else if (r.status == EndpointIntegral::Status::Divergent) {
            v = Verdict::Fails;
            ev = "b is not integrable; " + detail::exponent_text(r);
        } else if (r.status == EndpointIntegral::Status::Indeterminate) {
            v = Verdict::Indeterminate;
            ev = "integrability of b undecided; " + detail::exponent_text(r);
        }
        rep.add("B", v, r.value, ev);
    }

    if (s.family == Family::PowerSingularity) {
        const double vs = s.power->varsigma, vp = s.power->varpi;
        const bool range = vs > -1.0 && vs < q;
        rep.add("power_varsigma_range", range ? Verdict::Holds : Verdict::Fails, vs,
                "-1 < varsigma < q with varsigma=" + format_double(vs));
        const double lim = 1.0 + 1.0 / q + 1.0 / s.ell;
        rep.add("power_varpi_bound", vp < lim ? Verdict::Holds : Verdict::Fails, vp,
                "varpi < 1 + 1/q + 1/ell = " + format_double(lim));
    }

    // Aggregates
    auto aggregate = [&](const char* name, std::initializer_list<const char*> parts) {
        Verdict v = Verdict::Holds;
        std::string bad;
        for (const char* p : parts) {
            const auto* e = rep.find(p);
            if (!e) continue;
            if (e->verdict == Verdict::Fails) {
                v = Verdict::Fails;
                bad += std::string(bad.empty() ? "" : ",") + p;
            } else if (e->verdict == Verdict::Indeterminate && v != Verdict::Fails) {
                v = Verdict::Indeterminate;
                bad += std::string(bad.empty() ? "" : ",") + p;
            }
        }
        rep.add(name, v, std::nan(""), bad.empty() ? "all parts hold" : "problem in " + bad);
    };
    aggregate("A", {"coefficients", "A1", "A2", "A3", "A4", "A5", "A6", "A7"});
    aggregate("A*", {"coefficients", "A1", "A2", "A3", "A4", "A5", "A6*", "A7"});
    return rep;
}

// ---------------------------------------------------------------------------
// Parameter regime of the continuity result

struct RegimeResult {
    bool holds = false;
    double ell = 0.0;
    double eta = 0.0;
    double rho = kInf;
    std::string reason;
    ConditionReport report;
};

/// Searches (ell, eta) for which (A*), (B), (A8) and rho < 1 hold together.
///
/// ell is taken just above 1 and eta just above the smallest value making the
/// weighted integrability condition hold; rho is increasing in both, so this
/// choice is optimal up to the margins.
inline RegimeResult conclusion_regime(const GeneratorSpec& spec, const JumpMeasure& jm, double margin = 1e-4) {
    RegimeResult out;
    GeneratorSpec s = spec;
    s.ell = 1.0 + margin;
    auto base = [&](double tau) { return detail::growth_base(s, tau); };
    const auto r = integrate_to_terminal(base, s.horizon);
    if (r.status == EndpointIntegral::Status::Indeterminate && !std::isinf(r.exponent)) {
        out.reason = "growth exponent undecided";
        out.report = check_conditions(s, jm);
        return out;
    }
    const double k = std::isinf(r.exponent) ? 0.0 : r.exponent;
    s.eta = -s.ell * k + margin;
    if (!(s.eta < 1.0)) {
        s.eta = 1.0 - margin;
    }
    out.ell = s.ell;
    out.eta = s.eta;
    out.rho = rho(s.q, s.ell, s.eta);
    out.report = check_conditions(s, jm);
    const char* needed[] = {"A*", "B", "g", "A8", "A9"};
    out.holds = true;
    for (const char* n : needed) {
        if (!out.report.holds(n)) {
            out.holds = false;
            out.reason += std::string(out.reason.empty() ? "" : ",") + n;
        }
    }
    if (s.family == Family::PowerSingularity && !out.report.holds("power_varsigma_range")) {
        out.holds = false;
        out.reason += std::string(out.reason.empty() ? "" : ",") + "power_varsigma_range";
    }
    if (out.holds) out.reason = "all conditions hold";
    return out;
}

// ---------------------------------------------------------------------------
// A priori bound

/// Upper bound on Y_t, uniform in the truncation level.
inline double a_priori_bound(const GeneratorSpec& s, double t) {
    const double tau = s.horizon - t;
    if (!(tau > 0.0)) return kInf;
    const double q = s.q;
    switch (s.family) {
        case Family::Toy:
            return std::pow(1.0 / (q * tau), 1.0 / q);
        case Family::PowerSingularity: {
            const double vs = s.power->varsigma, vp = s.power->varpi;
            if (!(vs < q) || !(vp < 2.0 + 1.0 / q)) return kInf;
            return std::pow(1.0 / q, 1.0 / q) * (q / (q - vs)) * std::pow(tau, -(1.0 + vs) / q) +
                   std::pow(tau, 1.0 - vp) / (2.0 + 1.0 / q - vp);
        }
        default: {
            const double ell = s.bound_ell;
            auto F = [&](double r) { return std::pow(detail::growth_base(s, r), ell); };
            double integral;
            try {
                integral = detail::integrate_smooth(
                    [&](double u) {
                        const double r = std::exp(u);
                        return F(r) * r;
                    },
                    std::log(tau * 1e-12), std::log(tau));
            } catch (const NumericError&) {
                return kInf;
            }
            return s.bound_constant * std::pow(tau, -s.p()) * std::pow(integral, 1.0 / ell);
        }
    }
}

/// Shape of the general bound with unit constant, for calibration.
inline double a_priori_shape(const GeneratorSpec& s, double t) {
    GeneratorSpec c = s;
    c.family = s.family == Family::Toy || s.family == Family::PowerSingularity ? s.family : Family::Custom;
    c.bound_constant = 1.0;
    return a_priori_bound(c, t);
}

}  // namespace bsdelab
