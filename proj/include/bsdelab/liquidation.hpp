#pragma once

// Feedback liquidation policies built from a solved control BSDE and the
// controlled inventory dynamics X_s = x + int eta ds + int int zeta mu(de, ds).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "bsde_solver.hpp"
#include "core.hpp"
#include "forward_sde.hpp"
#include "generator.hpp"

namespace bsdelab {

/// penalty |v|^p + linear v + level |shift + v|^p, strictly convex for p > 1.
struct CostPieces {
    double p = 2.0;
    double penalty = 1.0;
    double linear = 0.0;
    double level = 0.0;
    double shift = 0.0;

    double value(double v) const {
        double out = linear * v + level * std::pow(std::abs(shift + v), p);
        if (v != 0.0) out += penalty * std::pow(std::abs(v), p);
        return out;
    }
    double derivative(double v) const {
        auto dpow = [this](double w) { return p * std::copysign(std::pow(std::abs(w), p - 1.0), w); };
        return penalty * dpow(v) + linear + level * dpow(shift + v);
    }
};

struct MinResult {
    double argmin = 0.0;
    double value = 0.0;
};

/// Unique minimizer: bracket the sign change of the derivative, then TOMS 748.
inline MinResult pointwise_min(const CostPieces& c) {
    if (!(c.p > 1.0)) throw DomainError("pointwise_min: p must exceed 1");
    if (c.level < 0.0 || c.penalty < 0.0) throw DomainError("pointwise_min: coefficients must be nonnegative");
    if (std::isinf(c.penalty)) return {0.0, c.level * std::pow(std::abs(c.shift), c.p)};
    const double scale = std::max({1.0, std::abs(c.shift), std::abs(c.linear)});
    double lo = -scale, hi = scale;
    auto D = [&c](double v) { return c.derivative(v); };
    double dlo = D(lo), dhi = D(hi);
    while (dlo > 0.0) dlo = D(lo *= 2.0);
    while (dhi < 0.0) dhi = D(hi *= 2.0);
    double v;
    if (dlo == 0.0) {
        v = lo;
    } else if (dhi == 0.0) {
        v = hi;
    } else {
        std::uintmax_t iters = 200;
        const auto r = boost::math::tools::toms748_solve(D, lo, hi, dlo, dhi, boost::math::tools::eps_tolerance<double>(52), iters);
        v = std::abs(D(r.first)) <= std::abs(D(r.second)) ? r.first : r.second;
    }
    return {v, c.value(v)};
}

enum class PolicyMode { BsdeFeedback, Twap, Perturbed };

inline std::string policy_mode_name(PolicyMode m) {
    switch (m) {
        case PolicyMode::BsdeFeedback: return "bsde_feedback";
        case PolicyMode::Twap: return "twap";
        case PolicyMode::Perturbed: return "perturbed";
    }
    return "?";
}

/// Feedback maps evaluated on the bundle paths the solution was computed on.
class ControlPolicy {
public:
    ControlPolicy(PolicyMode mode, std::shared_ptr<const BsdeSolution> sol, GeneratorSpec gen, double factor = 1.0)
        : mode_(mode), sol_(std::move(sol)), gen_(std::move(gen)), factor_(factor) {
        if (gen_.family != Family::Control || !gen_.control) throw PreconditionError("control", "a control generator is required");
        if (mode_ != PolicyMode::Twap && !sol_) throw PreconditionError("control", "feedback requires a solved BSDE");
        if (sol_ && sol_->K > 0 && sol_->u.empty()) throw PreconditionError("control", "solution was stored without U");
        if (!std::isfinite(factor_)) throw SchemaError("policy factor must be finite");
    }

    PolicyMode mode() const noexcept { return mode_; }
    double factor() const noexcept { return factor_; }
    double p() const noexcept { return 1.0 + 1.0 / gen_.q; }
    const GeneratorSpec& generator() const noexcept { return gen_; }
    const BsdeSolution* solution() const noexcept { return sol_.get(); }
    std::string name() const {
        if (mode_ != PolicyMode::Perturbed) return policy_mode_name(mode_);
        char buf[48];
        std::snprintf(buf, sizeof buf, "perturbed_x%g", factor_);
        return buf;
    }

    /// Trading rate at step i on path m for inventory x.
    double rate(std::size_t m, std::size_t i, double t, double tau, double x) const {
        if (mode_ == PolicyMode::Twap) return -x / tau;
        const double y = std::max(sol_->Y(m, i), 0.0);
        const double eta = -std::pow(y / gen_.control->alpha(t), gen_.q) * x;
        return mode_ == PolicyMode::Perturbed ? factor_ * eta : eta;
    }

    /// Block trade at a jump of mark k.
    double jump(std::size_t m, std::size_t i, double t, std::size_t k, double x) const {
        if (mode_ == PolicyMode::Twap) return 0.0;
        const double beta = gen_.control->beta(t, k);
        if (std::isinf(beta)) return 0.0;
        const double w = std::max(sol_->Y(m, i) + (sol_->K ? sol_->U(m, i)[k] : 0.0), 0.0);
        return pointwise_min({p(), beta, 0.0, w, x}).argmin;
    }

private:
    PolicyMode mode_;
    std::shared_ptr<const BsdeSolution> sol_;
    GeneratorSpec gen_;
    double factor_;
};

inline ControlPolicy feedback_policy(const BsdeSolution& sol, const GeneratorSpec& gen) {
    return ControlPolicy(PolicyMode::BsdeFeedback, std::make_shared<const BsdeSolution>(sol), gen);
}

inline ControlPolicy twap_policy(const GeneratorSpec& gen) { return ControlPolicy(PolicyMode::Twap, nullptr, gen); }

inline ControlPolicy perturbed_policy(const BsdeSolution& sol, const GeneratorSpec& gen, double factor) {
    return ControlPolicy(PolicyMode::Perturbed, std::make_shared<const BsdeSolution>(sol), gen, factor);
}

inline ControlPolicy perturbed_policy(const ControlPolicy& base, double factor) {
    if (!base.solution()) throw PreconditionError("control", "perturbation requires a feedback policy");
    return ControlPolicy(PolicyMode::Perturbed, std::make_shared<const BsdeSolution>(*base.solution()), base.generator(), factor);
}

/// Largest deviation between the numeric rate minimizer and -(Y/alpha)^q x on a lattice.
inline double rate_rule_check(double q, std::span<const double> ys = {}, std::span<const double> xs = {},
                              std::span<const double> alphas = {}) {
    const std::vector<double> dy{0.0, 0.1, 1.0, 3.0}, dx{-2.0, -0.5, 0.0, 0.7, 2.0}, da{0.5, 1.0, 4.0};
    if (ys.empty()) ys = dy;
    if (xs.empty()) xs = dx;
    if (alphas.empty()) alphas = da;
    const double p = 1.0 + 1.0 / q;
    double worst = 0.0;
    for (double y : ys)
        for (double x : xs)
            for (double a : alphas) {
                const double lin = p * y * std::copysign(std::pow(std::abs(x), p - 1.0), x);
                const double num = pointwise_min({p, a, lin, 0.0, 0.0}).argmin;
                const double ana = -std::pow(y / a, q) * x;
                worst = std::max(worst, std::abs(num - ana) / std::max(1.0, std::abs(ana)));
            }
    return worst;
}

struct ControlledRun {
    std::string policy;
    std::size_t M = 0, N = 0;
    std::vector<double> x;     // M x (N+1) inventory
    std::vector<double> eta;   // M x N
    std::vector<double> rate_cost, state_cost, jump_cost, terminal_cost, total;  // per path
    double n = 0.0;
    double mean_total = 0.0, se_total = 0.0;
    double mean_rate = 0.0, mean_state = 0.0, mean_jump = 0.0, mean_terminal = 0.0;
    /// mean |X_T| over paths whose terminal factor state lies in the singular set
    double terminal_violation = 0.0;
    std::size_t singular_paths = 0;
};

/// Euler scheme on the bundle grid; jump trades act at the bundle's realized
/// jump events, the jump cost uses the compensator lambda dt.
inline ControlledRun run_controlled(const ControlPolicy& policy, const PathBundle& bundle, const TerminalCondition& tc,
                                    double n, double x0) {
    const auto& gen = policy.generator();
    const auto& grid = bundle.grid();
    if (const auto* s = policy.solution(); s && (!(s->grid == grid) || s->M != bundle.paths())) {
        throw SchemaError("run_controlled: policy grid does not match the bundle");
    }
    const std::size_t M = bundle.paths(), N = grid.steps(), K = bundle.marks();
    const double p = policy.p();
    ControlledRun r;
    r.policy = policy.name();
    r.M = M;
    r.N = N;
    r.n = n;
    r.x.assign(M * (N + 1), 0.0);
    r.eta.assign(M * N, 0.0);
    r.rate_cost.assign(M, 0.0);
    r.state_cost.assign(M, 0.0);
    r.jump_cost.assign(M, 0.0);
    r.terminal_cost.assign(M, 0.0);
    r.total.assign(M, 0.0);
    std::vector<double> singular(M, 0.0);
    std::vector<char> in_s(M, 0);
    parallel_for(M, [&](std::size_t m) {
        double x = x0;
        r.x[m * (N + 1)] = x;
        for (std::size_t i = 0; i < N; ++i) {
            const double t = grid[i], dt = grid.dt(i), tau = grid.time_to_maturity(i);
            const double eta = policy.rate(m, i, t, tau, x);
            r.eta[m * N + i] = eta;
            r.rate_cost[m] += gen.control->alpha(t) * std::pow(std::abs(eta), p) * dt;
            r.state_cost[m] += gen.control->gamma(t) * std::pow(std::abs(x), p) * dt;
            for (std::size_t k = 0; k < K; ++k) {
                const double beta = gen.control->beta(t, k);
                const double zeta = policy.jump(m, i, t, k, x);
                if (zeta != 0.0) r.jump_cost[m] += beta * std::pow(std::abs(zeta), p) * bundle.intensity(k) * dt;
            }
            double next = x + eta * dt;
            for (std::size_t k = 0; k < K; ++k) {
                for (unsigned c = bundle.jump_count(m, i, k); c > 0; --c) next += policy.jump(m, i, t, k, next);
            }
            x = next;
            r.x[m * (N + 1) + i + 1] = x;
        }
        const auto xf = bundle.state(m, N);
        const double phi = tc.truncated(xf, n);
        r.terminal_cost[m] = std::abs(x) > 0.0 ? phi * std::pow(std::abs(x), p) : 0.0;
        r.total[m] = r.rate_cost[m] + r.state_cost[m] + r.jump_cost[m] + r.terminal_cost[m];
        if (tc.singular_set && tc.singular_set->contains(xf)) {
            in_s[m] = 1;
            singular[m] = std::abs(x);
        }
    });
    for (std::size_t m = 0; m < M; ++m) {
        if (!std::isfinite(r.total[m])) {
            throw NumericError("run_controlled: non-finite cost on path " + std::to_string(m) + " for policy " + r.policy);
        }
    }
    const auto tot = mean_and_se(r.total);
    r.mean_total = tot.mean;
    r.se_total = tot.se;
    r.mean_rate = mean_and_se(r.rate_cost).mean;
    r.mean_state = mean_and_se(r.state_cost).mean;
    r.mean_jump = mean_and_se(r.jump_cost).mean;
    r.mean_terminal = mean_and_se(r.terminal_cost).mean;
    double acc = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        if (in_s[m]) {
            acc += singular[m];
            ++r.singular_paths;
        }
    }
    r.terminal_violation = r.singular_paths ? acc / static_cast<double>(r.singular_paths) : 0.0;
    return r;
}

struct PolicyComparison {
    std::string name;
    double mean = 0.0, se = 0.0;
    double diff_vs_reference = 0.0;  // cost(policy) - cost(reference)
    double paired_se = 0.0;
    bool worse_than_reference = false;      // diff > se_multiplier * paired SE (strict)
    bool not_better_than_reference = true;  // reference <= this + se_multiplier * paired SE
};

struct ComparisonReport {
    std::string reference;
    double value = 0.0;  // Y_0 |x|^p
    double value_gap = 0.0;
    double value_tolerance = 0.0;
    bool value_match = false;
    std::vector<PolicyComparison> rows;
    std::vector<std::string> ranking;
};

/// The first run is the reference (normally the BSDE feedback).
inline ComparisonReport compare_policies(const std::vector<ControlledRun>& runs, double value, double rel_tol = 0.03,
                                         double se_multiplier = 3.0) {
    if (runs.empty()) throw SchemaError("compare_policies: no runs");
    const auto& ref = runs.front();
    ComparisonReport rep;
    rep.reference = ref.policy;
    rep.value = value;
    rep.value_gap = std::abs(ref.mean_total - value);
    rep.value_tolerance = std::max(se_multiplier * ref.se_total, rel_tol * std::abs(value));
    rep.value_match = rep.value_gap <= rep.value_tolerance;
    std::vector<double> d(ref.M);
    for (const auto& r : runs) {
        if (r.M != ref.M) throw SchemaError("compare_policies: runs do not share paths");
        PolicyComparison row;
        row.name = r.policy;
        row.mean = r.mean_total;
        row.se = r.se_total;
        for (std::size_t m = 0; m < r.M; ++m) d[m] = r.total[m] - ref.total[m];
        const auto ms = mean_and_se(d);
        row.diff_vs_reference = ms.mean;
        row.paired_se = ms.se;
        row.worse_than_reference = ms.mean > se_multiplier * ms.se;
        row.not_better_than_reference = ms.mean >= -se_multiplier * ms.se;
        rep.rows.push_back(row);
    }
    std::vector<std::size_t> idx(rep.rows.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rep.rows[a].mean < rep.rows[b].mean; });
    for (auto j : idx) rep.ranking.push_back(rep.rows[j].name);
    return rep;
}

}  // namespace bsdelab
