#pragma once

// Shared numerics: error types, time grids, counter-based random streams,
// a deterministic parallel loop and safeguarded scalar root finding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bsdelab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error hierarchy. The CLI maps each kind onto a distinct exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration or invalid argument shape.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A mathematical precondition (named condition) does not hold.
class PreconditionError : public Error {
public:
    PreconditionError(std::string condition, const std::string& what)
        : Error(condition + ": " + what), condition_(std::move(condition)) {}
    const std::string& condition() const noexcept { return condition_; }

private:
    std::string condition_;
};

/// Numerical breakdown: overflow, NaN, failed bracketing.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Argument outside the domain of a function.
class DomainError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Time grid

/// Strictly increasing grid 0 = t_0 < ... < t_N = T.
///
/// `refinement` is the density exponent kappa of t_i = T (1 - (1 - i/N)^kappa);
/// kappa = 1 is the uniform grid, kappa > 1 concentrates points near T.
class TimeGrid {
public:
    TimeGrid() = default;

    TimeGrid(double horizon, std::size_t steps, double refinement = 1.0)
        : horizon_(horizon), refinement_(refinement) {
        if (!(horizon > 0.0) || steps == 0 || !(refinement >= 1.0)) {
            throw SchemaError("time grid needs T > 0, N >= 1 and refinement >= 1");
        }
        times_.resize(steps + 1);
        for (std::size_t i = 0; i <= steps; ++i) {
            const double frac = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
            times_[i] = horizon * (1.0 - std::pow(frac, refinement));
        }
        times_.front() = 0.0;
        times_.back() = horizon;
    }

    static TimeGrid from_times(std::vector<double> times) {
        if (times.size() < 2 || times.front() != 0.0) {
            throw SchemaError("time grid must start at 0 and have at least two points");
        }
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (!(times[i] > times[i - 1])) throw SchemaError("time grid must be strictly increasing");
        }
        TimeGrid g;
        g.horizon_ = times.back();
        g.refinement_ = 0.0;
        g.times_ = std::move(times);
        return g;
    }

    std::size_t steps() const noexcept { return times_.empty() ? 0 : times_.size() - 1; }
    double horizon() const noexcept { return horizon_; }
    double refinement() const noexcept { return refinement_; }
    double operator[](std::size_t i) const { return times_[i]; }
    double dt(std::size_t i) const { return times_[i + 1] - times_[i]; }
    /// Time to maturity T - t_i, computed without cancellation for refined grids.
    double time_to_maturity(std::size_t i) const {
        if (refinement_ >= 1.0) {
            const double frac = 1.0 - static_cast<double>(i) / static_cast<double>(steps());
            return horizon_ * std::pow(frac, refinement_);
        }
        return horizon_ - times_[i];
    }
    std::span<const double> times() const noexcept { return times_; }

    /// Index of the grid point closest to t.
    std::size_t nearest_index(double t) const {
        auto it = std::lower_bound(times_.begin(), times_.end(), t);
        if (it == times_.end()) return steps();
        std::size_t i = static_cast<std::size_t>(it - times_.begin());
        if (i > 0 && std::abs(times_[i - 1] - t) <= std::abs(times_[i] - t)) --i;
        return i;
    }

    bool operator==(const TimeGrid& other) const { return times_ == other.times_; }

private:
    double horizon_ = 0.0;
    double refinement_ = 1.0;
    std::vector<double> times_;
};

// ---------------------------------------------------------------------------
// Counter-based random numbers (Philox4x32-10)

class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        return ctr;
    }

private:
    static Counter single_round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * c[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Random stream addressed by (seed, path, step). Draws inside one (path, step)
/// cell are sequential; cells are independent of evaluation order.
class StreamCell {
public:
    static constexpr const char* kScheme = "philox4x32-10/path-step";

    StreamCell(std::uint64_t seed, std::uint64_t path, std::uint32_t step)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          path_(path), step_(step) {}

    /// Uniform in the open interval (0, 1).
    double uniform() {
        if (used_ == 4) refill();
        const std::uint32_t bits = block_[used_++];
        return (static_cast<double>(bits) + 0.5) * 0x1p-32;
    }

    /// 53-bit uniform in (0, 1).
    double uniform53() {
        const double hi = uniform();
        const double lo = uniform();
        return std::clamp(hi + (lo - 0.5) * 0x1p-32, 0x1p-60, 1.0 - 0x1p-53);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform53();
        const double u2 = uniform53();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Poisson(mean) by inversion; mean is small per grid step.
    std::uint32_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        const double u = uniform53();
        double p = std::exp(-mean);
        double cdf = p;
        std::uint32_t k = 0;
        while (u > cdf && k < 10000) {
            ++k;
            p *= mean / k;
            cdf += p;
            if (p < 1e-300) break;
        }
        return k;
    }

private:
    void refill() {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(path_),
                                      static_cast<std::uint32_t>(path_ >> 32), step_, block_index_++};
        block_ = Philox4x32::generate(ctr, key_);
        used_ = 0;
    }

    Philox4x32::Key key_;
    std::uint64_t path_;
    std::uint32_t step_;
    std::uint32_t block_index_ = 0;
    Philox4x32::Counter block_{};
    std::size_t used_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Parallel loop

/// Worker count from BSDE_LAB_THREADS, defaulting to the available cores.
inline unsigned thread_count() {
    if (const char* env = std::getenv("BSDE_LAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

/// Runs body(i) for i in [0, count). Iterations must only write to disjoint
/// locations; results are then independent of the thread count.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
    const unsigned workers = std::min<std::size_t>(thread_count(), std::max<std::size_t>(count / 256, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Scalar root finding

struct RootResult {
    double root = 0.0;
    int iterations = 0;
};

/// Root of a strictly increasing function by Newton steps kept inside a
/// shrinking bracket, bisecting whenever Newton leaves it.
///
/// `hint` seeds the iteration; the bracket is grown geometrically around it
/// until the sign changes. Throws NumericError if no bracket is found.
inline RootResult solve_increasing(const std::function<double(double)>& fn, double hint,
                                   double abs_tol = 1e-13, double rel_tol = 1e-13,
                                   int max_iter = 200) {
    if (!std::isfinite(hint)) hint = 0.0;
    double lo = hint, hi = hint;
    double flo = fn(lo);
    if (!std::isfinite(flo)) throw NumericError("non-finite residual at initial point");
    if (flo == 0.0) return {lo, 0};
    double width = std::max(1.0, std::abs(hint));
    double fhi = flo;
    int grow = 0;
    if (flo < 0.0) {
        while (fhi < 0.0) {
            lo = hi;
            flo = fhi;
            hi = hint + width;
            width *= 2.0;
            fhi = fn(hi);
            if (!std::isfinite(fhi) || ++grow > 2000) throw NumericError("cannot bracket root from above");
        }
    } else {
        hi = lo;
        fhi = flo;
        while (flo > 0.0) {
            hi = lo;
            fhi = flo;
            lo = hint - width;
            width *= 2.0;
            flo = fn(lo);
            if (!std::isfinite(flo) || ++grow > 2000) throw NumericError("cannot bracket root from below");
        }
    }
    if (flo == 0.0) return {lo, 0};
    if (fhi == 0.0) return {hi, 0};

    double x = std::clamp(hint, lo, hi);
    double fx = fn(x);
    for (int it = 1; it <= max_iter; ++it) {
        if (fx == 0.0) return {x, it};
        if (fx < 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        const double h = 1e-7 * std::max(1.0, std::abs(x));
        const double slope = (fn(x + h) - fx) / h;
        double next = (slope > 0.0 && std::isfinite(slope)) ? x - fx / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - x);
        x = next;
        fx = fn(x);
        if (!std::isfinite(fx)) throw NumericError("non-finite residual during root search");
        if (step <= abs_tol + rel_tol * std::abs(x) || (hi - lo) <= abs_tol + rel_tol * std::abs(x)) {
            return {x, it};
        }
    }
    return {x, max_iter};
}

// ---------------------------------------------------------------------------
// Small statistics helpers

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_and_se(std::span<const double> values) {
    MeanSe r;
    const std::size_t n = values.size();
    if (n == 0) return r;
    double sum = 0.0;
    for (double v : values) sum += v;
    r.mean = sum / static_cast<double>(n);
    if (n < 2) return r;
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    return r;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace bsdelab
