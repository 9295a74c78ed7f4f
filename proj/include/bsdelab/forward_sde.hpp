#pragma once

// Jump-diffusion paths, singular sets and localizing test functions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "generator.hpp"

namespace bsdelab {

// ---------------------------------------------------------------------------
// Forward SDE

using VectorField = std::function<void(double, std::span<const double>, std::span<double>)>;
using JumpField = std::function<void(double, std::span<const double>, std::size_t, std::span<double>)>;

/// dX = b dt + sigma dW + int h(t, X-, e) mu~(dt, de), with sigma a d x d matrix (row-major).
struct SdeSpec {
    std::size_t dim = 1;
    std::vector<double> x0;
    VectorField drift;
    VectorField diffusion;
    JumpField jump;
    JumpMeasure jumps;
    double K_bsigma = 0.0;
    double K_h = 0.0;
    double C_bsigma = 0.0;
    double C_h = 0.0;

    void validate() const {
        if (dim == 0) throw SchemaError("sde: dimension must be positive");
        if (x0.size() != dim) throw SchemaError("sde: x0 has the wrong dimension");
        if (!drift || !diffusion || !jump) throw SchemaError("sde: coefficients missing");
        jumps.validate();
    }
};

/// Affine drift b0 + B x, constant diffusion matrix, jump h_k + H_k x per mark.
struct AffineSdeParams {
    std::vector<double> x0;
    std::vector<double> drift_const;
    std::vector<double> drift_linear;    // d x d, empty for none
    std::vector<double> sigma;           // d x d
    std::vector<std::vector<double>> jump_const;   // per mark, length d
    std::vector<double> jump_linear;     // per mark scalar multiplier of x, empty for none
    JumpMeasure jumps;
};

inline SdeSpec make_affine_sde(const AffineSdeParams& p) {
    SdeSpec s;
    const std::size_t d = p.x0.size();
    s.dim = d;
    s.x0 = p.x0;
    s.jumps = p.jumps;
    auto b0 = p.drift_const.empty() ? std::vector<double>(d, 0.0) : p.drift_const;
    auto B = p.drift_linear;
    auto sig = p.sigma.empty() ? std::vector<double>(d * d, 0.0) : p.sigma;
    if (b0.size() != d || (!B.empty() && B.size() != d * d) || sig.size() != d * d) {
        throw SchemaError("sde: coefficient shapes do not match the dimension");
    }
    if (p.jump_const.size() != p.jumps.size()) throw SchemaError("sde: one jump size per mark is required");
    for (const auto& h : p.jump_const) {
        if (h.size() != d) throw SchemaError("sde: jump size has the wrong dimension");
    }
    if (!p.jump_linear.empty() && p.jump_linear.size() != p.jumps.size()) {
        throw SchemaError("sde: jump_linear needs one entry per mark");
    }
    s.drift = [b0, B, d](double, std::span<const double> x, std::span<double> out) {
        for (std::size_t i = 0; i < d; ++i) {
            double v = b0[i];
            if (!B.empty()) {
                for (std::size_t j = 0; j < d; ++j) v += B[i * d + j] * x[j];
            }
            out[i] = v;
        }
    };
    s.diffusion = [sig](double, std::span<const double>, std::span<double> out) {
        std::copy(sig.begin(), sig.end(), out.begin());
    };
    s.jump = [hc = p.jump_const, hl = p.jump_linear, d](double, std::span<const double> x, std::size_t k,
                                                          std::span<double> out) {
        for (std::size_t i = 0; i < d; ++i) out[i] = hc[k][i] + (hl.empty() ? 0.0 : hl[k] * x[i]);
    };
    double kb = 0.0, cb = 0.0, kh = 0.0, ch = 0.0;
    for (double v : B) kb = std::max(kb, std::abs(v));
    kb *= static_cast<double>(d);
    for (double v : b0) cb = std::max(cb, std::abs(v));
    for (double v : sig) cb = std::max(cb, std::abs(v));
    cb = cb * static_cast<double>(d) + kb;
    for (std::size_t k = 0; k < p.jump_const.size(); ++k) {
        double nh = 0.0;
        for (double v : p.jump_const[k]) nh += v * v;
        const double lin = p.jump_linear.empty() ? 0.0 : std::abs(p.jump_linear[k]);
        ch = std::max(ch, std::sqrt(nh) + lin);
        kh = std::max(kh, lin);
    }
    s.K_bsigma = kb;
    s.C_bsigma = cb;
    s.K_h = kh;
    s.C_h = ch;
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Path bundle

struct JumpEvent {
    std::uint32_t step = 0;
    std::uint32_t mark = 0;
    double time = 0.0;
};

class PathBundle {
public:
    PathBundle() = default;
    PathBundle(TimeGrid grid, std::size_t paths, std::size_t dim, std::size_t marks, std::uint64_t seed)
        : grid_(std::move(grid)), paths_(paths), dim_(dim), marks_(marks), seed_(seed) {
        const std::size_t n = grid_.steps();
        states_.assign(paths * (n + 1) * dim, 0.0);
        dw_.assign(paths * n * dim, 0.0);
        counts_.assign(paths * n * marks, 0);
        events_.resize(paths);
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t paths() const noexcept { return paths_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t marks() const noexcept { return marks_; }
    std::size_t steps() const noexcept { return grid_.steps(); }
    std::uint64_t seed() const noexcept { return seed_; }
    static constexpr const char* stream_scheme() { return StreamCell::kScheme; }

    std::span<const double> state(std::size_t m, std::size_t i) const {
        return {states_.data() + (m * (steps() + 1) + i) * dim_, dim_};
    }
    std::span<double> state(std::size_t m, std::size_t i) {
        return {states_.data() + (m * (steps() + 1) + i) * dim_, dim_};
    }
    std::span<const double> dw(std::size_t m, std::size_t i) const {
        return {dw_.data() + (m * steps() + i) * dim_, dim_};
    }
    std::span<double> dw(std::size_t m, std::size_t i) { return {dw_.data() + (m * steps() + i) * dim_, dim_}; }
    std::uint8_t jump_count(std::size_t m, std::size_t i, std::size_t k) const {
        return counts_[(m * steps() + i) * marks_ + k];
    }
    std::uint8_t& jump_count(std::size_t m, std::size_t i, std::size_t k) {
        return counts_[(m * steps() + i) * marks_ + k];
    }
    const std::vector<JumpEvent>& events(std::size_t m) const { return events_[m]; }
    std::vector<JumpEvent>& events(std::size_t m) { return events_[m]; }
    std::size_t total_jumps(std::size_t m) const { return events_[m].size(); }
    double intensity(std::size_t k) const { return intensities_.at(k); }
    void set_intensities(std::vector<double> w) {
        if (w.size() != marks_) throw SchemaError("path bundle: one intensity per mark is required");
        intensities_ = std::move(w);
    }
    const std::vector<double>& intensities() const noexcept { return intensities_; }

    const std::vector<double>& raw_states() const noexcept { return states_; }
    const std::vector<double>& raw_increments() const noexcept { return dw_; }
    const std::vector<std::uint8_t>& raw_counts() const noexcept { return counts_; }
    std::vector<double>& raw_states() noexcept { return states_; }
    std::vector<double>& raw_increments() noexcept { return dw_; }
    std::vector<std::uint8_t>& raw_counts() noexcept { return counts_; }

    /// Cross-section of state coordinate j at time index i.
    std::vector<double> coordinate(std::size_t i, std::size_t j = 0) const {
        std::vector<double> out(paths_);
        for (std::size_t m = 0; m < paths_; ++m) out[m] = state(m, i)[j];
        return out;
    }

private:
    TimeGrid grid_;
    std::size_t paths_ = 0, dim_ = 0, marks_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> states_;
    std::vector<double> dw_;
    std::vector<std::uint8_t> counts_;
    std::vector<std::vector<JumpEvent>> events_;
    std::vector<double> intensities_;
};

/// Euler scheme with jumps binned to the end of their step and compensated drift.
inline PathBundle simulate(const SdeSpec& sde, const TimeGrid& grid, std::size_t M, std::uint64_t seed) {
    if (M == 0) throw SchemaError("simulate: path count must be positive");
    if (grid.steps() == 0) throw SchemaError("simulate: empty grid");
    sde.validate();
    const std::size_t d = sde.dim, N = grid.steps(), K = sde.jumps.size();
    PathBundle bundle(grid, M, d, K, seed);
    bundle.set_intensities(sde.jumps.weights);
    std::vector<std::string> failure(M);

    parallel_for(M, [&](std::size_t m) {
        std::vector<double> b(d), sig(d * d), h(d), x(sde.x0);
        std::copy(x.begin(), x.end(), bundle.state(m, 0).begin());
        for (std::size_t i = 0; i < N; ++i) {
            const double t = grid[i], dt = grid.dt(i), sq = std::sqrt(dt);
            StreamCell cell(seed, m, static_cast<std::uint32_t>(i));
            auto dwv = bundle.dw(m, i);
            for (std::size_t j = 0; j < d; ++j) dwv[j] = sq * cell.normal();
            sde.drift(t, x, b);
            sde.diffusion(t, x, sig);
            std::vector<double> next(d);
            for (std::size_t r = 0; r < d; ++r) {
                double v = x[r] + b[r] * dt;
                for (std::size_t c = 0; c < d; ++c) v += sig[r * d + c] * dwv[c];
                next[r] = v;
            }
            for (std::size_t k = 0; k < K; ++k) {
                const double lam = sde.jumps.weights[k];
                const std::uint32_t cnt = cell.poisson(lam * dt);
                if (cnt > 255) {
                    failure[m] = "jump count overflow";
                    return;
                }
                bundle.jump_count(m, i, k) = static_cast<std::uint8_t>(cnt);
                sde.jump(t, x, k, h);
                for (std::size_t r = 0; r < d; ++r) next[r] += (static_cast<double>(cnt) - lam * dt) * h[r];
                for (std::uint32_t c = 0; c < cnt; ++c) {
                    bundle.events(m).push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k),
                                                t + dt * cell.uniform()});
                }
            }
            for (std::size_t r = 0; r < d; ++r) {
                if (!std::isfinite(next[r])) {
                    failure[m] = "non-finite state on path " + std::to_string(m) + " at step " + std::to_string(i + 1);
                    return;
                }
            }
            x = next;
            std::copy(x.begin(), x.end(), bundle.state(m, i + 1).begin());
        }
    });
    for (const auto& f : failure) {
        if (!f.empty()) throw NumericError("simulate: " + f);
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Singular set

enum class ShapeKind { HalfLine, Ball, ComplementOfBall };

/// Region {Phi = +inf} with signed distance (negative inside).
struct SingularSet {
    ShapeKind shape = ShapeKind::HalfLine;
    double threshold = 0.0;
    int side = -1;  // HalfLine: -1 for {x <= threshold}, +1 for {x >= threshold}
    std::vector<double> center;
    double radius = 1.0;
    double nu = 0.1;

    static SingularSet half_line(double threshold, int side, double nu) {
        SingularSet s;
        s.shape = ShapeKind::HalfLine;
        s.threshold = threshold;
        s.side = side < 0 ? -1 : 1;
        s.center = {threshold};
        s.nu = nu;
        return s;
    }
    static SingularSet ball(std::vector<double> center, double radius, double nu) {
        SingularSet s;
        s.shape = ShapeKind::Ball;
        s.center = std::move(center);
        s.radius = radius;
        s.nu = nu;
        s.validate();
        return s;
    }
    static SingularSet complement_of_ball(std::vector<double> center, double radius, double nu) {
        SingularSet s = ball(std::move(center), radius, nu);
        s.shape = ShapeKind::ComplementOfBall;
        return s;
    }

    void validate() const {
        if (!(nu > 0.0)) throw SchemaError("singular set: nu must be positive");
        if (shape != ShapeKind::HalfLine && !(radius > 0.0)) throw SchemaError("singular set: radius must be positive");
        if (shape != ShapeKind::HalfLine && center.empty()) throw SchemaError("singular set: center required");
    }

    std::size_t dim() const { return shape == ShapeKind::HalfLine ? 1 : center.size(); }

    void check_dim(std::span<const double> x) const {
        if (x.size() != dim()) throw SchemaError("singular set: state dimension mismatch");
    }

    double distance(std::span<const double> x) const {
        check_dim(x);
        switch (shape) {
            case ShapeKind::HalfLine:
                return side < 0 ? x[0] - threshold : threshold - x[0];
            case ShapeKind::Ball:
                return norm_from_center(x) - radius;
            case ShapeKind::ComplementOfBall:
                return radius - norm_from_center(x);
        }
        return 0.0;
    }
    bool contains(std::span<const double> x) const { return distance(x) <= 0.0; }

    /// Gradient of the signed distance (unit normal pointing out of the set).
    std::vector<double> distance_gradient(std::span<const double> x) const {
        std::vector<double> g(dim(), 0.0);
        if (shape == ShapeKind::HalfLine) {
            g[0] = side < 0 ? 1.0 : -1.0;
            return g;
        }
        const double r = norm_from_center(x);
        if (r == 0.0) return g;
        const double sgn = shape == ShapeKind::Ball ? 1.0 : -1.0;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = sgn * (x[i] - center[i]) / r;
        return g;
    }

    /// Hessian of the signed distance, row-major.
    std::vector<double> distance_hessian(std::span<const double> x) const {
        const std::size_t d = dim();
        std::vector<double> H(d * d, 0.0);
        if (shape == ShapeKind::HalfLine) return H;
        const double r = norm_from_center(x);
        if (r == 0.0) return H;
        const double sgn = shape == ShapeKind::Ball ? 1.0 : -1.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double ni = (x[i] - center[i]) / r, nj = (x[j] - center[j]) / r;
                H[i * d + j] = sgn * ((i == j ? 1.0 : 0.0) - ni * nj) / r;
            }
        return H;
    }

    /// Deterministic sample of boundary points.
    std::vector<std::vector<double>> boundary_points(std::size_t n) const {
        std::vector<std::vector<double>> pts;
        if (shape == ShapeKind::HalfLine) return {{threshold}};
        for (const auto& dir : directions(n)) {
            std::vector<double> p(center);
            for (std::size_t i = 0; i < p.size(); ++i) p[i] += radius * dir[i];
            pts.push_back(p);
        }
        return pts;
    }

    /// Deterministic sample of points inside the set, at depths up to `depth`.
    std::vector<std::vector<double>> interior_points(std::size_t n, double depth) const {
        std::vector<std::vector<double>> pts;
        const double fr[] = {0.01, 0.1, 0.3, 0.6, 1.0};
        if (shape == ShapeKind::HalfLine) {
            for (double f : fr) pts.push_back({threshold + side * f * depth});
            return pts;
        }
        for (const auto& dir : directions(n)) {
            for (double f : fr) {
                double r = shape == ShapeKind::Ball ? radius * (1.0 - f) : radius + f * depth;
                std::vector<double> p(center);
                for (std::size_t i = 0; i < p.size(); ++i) p[i] += r * dir[i];
                pts.push_back(p);
            }
        }
        return pts;
    }

private:
    double norm_from_center(std::span<const double> x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - center[i]) * (x[i] - center[i]);
        return std::sqrt(s);
    }

    std::vector<std::vector<double>> directions(std::size_t n) const {
        const std::size_t d = dim();
        std::vector<std::vector<double>> dirs;
        if (d == 1) return {{1.0}, {-1.0}};
        if (d == 2) {
            const std::size_t k = std::max<std::size_t>(n, 4);
            for (std::size_t i = 0; i < k; ++i) {
                const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
                dirs.push_back({std::cos(a), std::sin(a)});
            }
            return dirs;
        }
        for (std::size_t i = 0; i < std::max<std::size_t>(n, 2 * d); ++i) {
            StreamCell c(0x5eed, i, 0);
            std::vector<double> v(d);
            double s = 0.0;
            for (auto& x : v) {
                x = c.normal();
                s += x * x;
            }
            for (auto& x : v) x /= std::sqrt(s);
            dirs.push_back(v);
        }
        return dirs;
    }
};

// ---------------------------------------------------------------------------
// Condition (E): jumps keep the singular set and move boundary points inward

struct ConditionECounterexample {
    std::vector<double> x;
    double t = 0.0;
    std::size_t mark = 0;
    std::vector<double> image;
    double image_distance = 0.0;
    bool on_boundary = false;
};

struct ConditionEReport {
    bool pass = true;
    std::size_t checked = 0;
    std::vector<ConditionECounterexample> counterexamples;
};

inline ConditionEReport check_condition_E(const SdeSpec& sde, const SingularSet& s, std::size_t n_samples = 16,
                                          std::span<const double> times = {}) {
    s.validate();
    if (sde.dim != s.dim()) throw SchemaError("check_condition_E: dimension mismatch");
    std::vector<double> ts(times.begin(), times.end());
    if (ts.empty()) ts = {0.0, 0.5, 1.0};
    ConditionEReport rep;
    std::vector<double> h(sde.dim);
    auto probe = [&](const std::vector<double>& x, bool boundary) {
        for (double t : ts) {
            for (std::size_t k = 0; k < sde.jumps.size(); ++k) {
                sde.jump(t, x, k, h);
                std::vector<double> img(x);
                for (std::size_t i = 0; i < img.size(); ++i) img[i] += h[i];
                const double dist = s.distance(img);
                ++rep.checked;
                const bool bad = boundary ? !(dist <= -s.nu) : !(dist <= 0.0);
                if (bad) {
                    rep.pass = false;
                    if (rep.counterexamples.size() < 16) rep.counterexamples.push_back({x, t, k, img, dist, boundary});
                }
            }
        }
    };
    for (const auto& x : s.boundary_points(n_samples)) probe(x, true);
    double depth = std::max(1.0, 4.0 * sde.C_h);
    if (s.shape == ShapeKind::Ball) depth = s.radius;
    for (const auto& x : s.interior_points(n_samples, depth)) probe(x, false);
    return rep;
}

// ---------------------------------------------------------------------------
// Test functions localized away from (or onto) the singular set

/// phi = psi^gamma, psi a C^2 quintic transition in the distance to the set:
/// psi = 1 where d >= epsilon (outside the set) and psi = 0 where d <= epsilon/2.
class TestFunction {
public:
    TestFunction(SingularSet set, double epsilon, double gamma, bool complement)
        : set_(std::move(set)), eps_(epsilon), gamma_(gamma), complement_(complement) {}

    const SingularSet& set() const noexcept { return set_; }
    double epsilon() const noexcept { return eps_; }
    double gamma() const noexcept { return gamma_; }
    /// True when the function is supported away from the singular set.
    bool avoids_singular_set() const noexcept { return !complement_; }

    double operator()(std::span<const double> x) const {
        const double v = std::pow(transition(set_.distance(x)).v, gamma_);
        return complement_ ? 1.0 - v : v;
    }

    std::vector<double> gradient(std::span<const double> x) const {
        const auto tr = transition(set_.distance(x));
        const auto g = set_.distance_gradient(x);
        std::vector<double> out(g.size(), 0.0);
        if (tr.d1 == 0.0) return out;
        const double c = gamma_ * std::pow(tr.v, gamma_ - 1.0) * tr.d1 * (complement_ ? -1.0 : 1.0);
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = c * g[i];
        return out;
    }

    std::vector<double> hessian(std::span<const double> x) const {
        const auto tr = transition(set_.distance(x));
        const auto g = set_.distance_gradient(x);
        const auto Hd = set_.distance_hessian(x);
        const std::size_t d = g.size();
        std::vector<double> H(d * d, 0.0);
        if (tr.d1 == 0.0 && tr.d2 == 0.0) return H;
        const double p1 = gamma_ * std::pow(tr.v, gamma_ - 1.0);
        const double p2 = tr.v > 0.0 ? gamma_ * (gamma_ - 1.0) * std::pow(tr.v, gamma_ - 2.0) : 0.0;
        const double sgn = complement_ ? -1.0 : 1.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                H[i * d + j] = sgn * ((p2 * tr.d1 * tr.d1 + p1 * tr.d2) * g[i] * g[j] + p1 * tr.d1 * Hd[i * d + j]);
            }
        return H;
    }

private:
    struct Transition {
        double v, d1, d2;
    };
    Transition transition(double dist) const {
        const double lo = 0.5 * eps_, w = 0.5 * eps_;
        if (dist <= lo) return {0.0, 0.0, 0.0};
        if (dist >= eps_) return {1.0, 0.0, 0.0};
        const double u = (dist - lo) / w;
        const double v = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
        const double d1 = 30.0 * u * u * (1.0 - u) * (1.0 - u) / w;
        const double d2 = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (w * w);
        return {v, d1, d2};
    }

    SingularSet set_;
    double eps_, gamma_;
    bool complement_;
};

/// Smallest admissible exponent of the localizing test function.
inline double bump_gamma_threshold(double q) { return 2.0 * (q + 1.0) / q; }

inline TestFunction build_bump(const SingularSet& s, double epsilon, double gamma, double q) {
    s.validate();
    if (!(epsilon > 0.0)) throw SchemaError("build_bump: epsilon must be positive");
    if (!(gamma > bump_gamma_threshold(q))) {
        throw PreconditionError("bump_exponent", "gamma must exceed 2(q+1)/q = " + format_double(bump_gamma_threshold(q)));
    }
    return TestFunction(s, epsilon, gamma, false);
}

/// 1 - phi: equals 1 on the singular set, used to probe divergence there.
inline TestFunction build_singular_probe(const SingularSet& s, double epsilon, double gamma, double q) {
    build_bump(s, epsilon, gamma, q);
    return TestFunction(s, epsilon, gamma, true);
}

}  // namespace bsdelab
