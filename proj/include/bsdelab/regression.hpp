#pragma once

// Least-squares estimators of conditional expectations given the state at one grid time.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"

namespace bsdelab {

enum class BasisKind { Polynomial, Partition, LocalLinear };

inline const char* basis_name(BasisKind k) {
    switch (k) {
        case BasisKind::Polynomial: return "polynomial";
        case BasisKind::Partition: return "partition";
        case BasisKind::LocalLinear: return "local_linear";
    }
    return "?";
}

struct BasisSpec {
    BasisKind kind = BasisKind::Polynomial;
    int degree = 3;  // polynomial total degree
    int bins = 10;   // bins per coordinate for the partition kinds
};

/// Fitted conditional expectation on the sample.
struct Fit {
    std::vector<double> coefficients;
    std::vector<double> fitted;
    std::vector<double> se;  // per-path standard error of the fitted value
    double sigma = 0.0;      // residual standard deviation
};

/// Regression design built once per grid time and shared by all targets.
class Regressor {
public:
    /// `states` is row-major M x d.
    Regressor(const BasisSpec& spec, std::span<const double> states, std::size_t dim)
        : spec_(spec), dim_(dim), M_(dim == 0 ? 0 : states.size() / dim) {
        if (dim == 0 || states.size() != M_ * dim) throw SchemaError("regression: states do not match the dimension");
        if (M_ == 0) throw SchemaError("regression: empty sample");
        kind_ = spec.kind;
        if (kind_ == BasisKind::Polynomial) {
            if (!build_polynomial(states)) {
                fallback_ = true;
                kind_ = BasisKind::Partition;
            }
        }
        if (kind_ != BasisKind::Polynomial) build_partition(states);
        if (M_ < 10 * basis_size()) {
            throw PreconditionError("regression_sample_size", "sample size " + std::to_string(M_) +
                                                                   " is below 10 x basis size " +
                                                                   std::to_string(basis_size()));
        }
    }

    BasisKind kind() const noexcept { return kind_; }
    bool fallback() const noexcept { return fallback_; }
    bool reduced() const noexcept { return reduced_; }
    double condition_number() const noexcept { return cond_; }
    std::size_t samples() const noexcept { return M_; }
    std::size_t dim() const noexcept { return dim_; }

    std::size_t basis_size() const {
        switch (kind_) {
            case BasisKind::Polynomial: return exponents_.size();
            case BasisKind::Partition: return occupied_cells_;
            case BasisKind::LocalLinear: return occupied_cells_ * (dim_ + 1);
        }
        return 0;
    }

    Fit fit(std::span<const double> y) const {
        if (y.size() != M_) throw SchemaError("regression: target length mismatch");
        switch (kind_) {
            case BasisKind::Polynomial: return fit_polynomial(y);
            case BasisKind::Partition: return fit_partition(y);
            case BasisKind::LocalLinear: return fit_local_linear(y);
        }
        return {};
    }

    /// Evaluates a fitted function at a new state.
    double predict(std::span<const double> coef, std::span<const double> x) const {
        switch (kind_) {
            case BasisKind::Polynomial: {
                const auto f = raw_features(x);
                double v = 0.0;
                for (std::size_t j = 0; j < exponents_.size(); ++j) {
                    double o = 0.0;
                    for (std::size_t l = 0; l <= j; ++l) o += f[l] * rinv_(l, j);
                    v += coef[j] * o;
                }
                return v;
            }
            case BasisKind::Partition: {
                const std::size_t c = nearest_occupied(cell_of(x));
                return coef[c];
            }
            case BasisKind::LocalLinear: {
                const std::size_t c = nearest_occupied(cell_of(x));
                double v = coef[c * (dim_ + 1)];
                for (std::size_t j = 0; j < dim_; ++j) v += coef[c * (dim_ + 1) + 1 + j] * (x[j] - cell_center_[c * dim_ + j]);
                return v;
            }
        }
        return 0.0;
    }

private:
    // -- polynomial ---------------------------------------------------------

    std::vector<double> raw_features(std::span<const double> x) const {
        std::vector<double> s(dim_);
        for (std::size_t j = 0; j < dim_; ++j) s[j] = scale_[j] > 0.0 ? (x[j] - mean_[j]) / scale_[j] : 0.0;
        std::vector<double> f(exponents_.size());
        for (std::size_t k = 0; k < exponents_.size(); ++k) {
            double v = 1.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                for (int e = 0; e < exponents_[k][j]; ++e) v *= s[j];
            }
            f[k] = v;
        }
        return f;
    }

    bool build_polynomial(std::span<const double> states) {
        mean_.assign(dim_, 0.0);
        scale_.assign(dim_, 0.0);
        for (std::size_t m = 0; m < M_; ++m)
            for (std::size_t j = 0; j < dim_; ++j) mean_[j] += states[m * dim_ + j];
        for (auto& v : mean_) v /= static_cast<double>(M_);
        for (std::size_t m = 0; m < M_; ++m)
            for (std::size_t j = 0; j < dim_; ++j) {
                const double d = states[m * dim_ + j] - mean_[j];
                scale_[j] += d * d;
            }
        std::vector<bool> active(dim_);
        for (std::size_t j = 0; j < dim_; ++j) {
            scale_[j] = std::sqrt(scale_[j] / static_cast<double>(M_));
            active[j] = scale_[j] > 1e-12 * (1.0 + std::abs(mean_[j]));
            if (!active[j]) {
                scale_[j] = 0.0;
                reduced_ = true;
            }
        }
        // monomials of total degree <= D in the active coordinates, graded order
        exponents_.clear();
        std::vector<int> e(dim_, 0);
        for (int total = 0; total <= spec_.degree; ++total) enumerate(e, 0, total);

        const std::size_t P = exponents_.size();
        Eigen::MatrixXd F(M_, P);
        for (std::size_t m = 0; m < M_; ++m) {
            const auto f = raw_features(states.subspan(m * dim_, dim_));
            for (std::size_t k = 0; k < P; ++k) F(m, k) = f[k];
        }
        Eigen::MatrixXd G = (F.transpose() * F) / static_cast<double>(M_);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
        const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
        cond_ = lmin > 0.0 ? lmax / lmin : kInf;
        if (!(cond_ < 1e12)) return false;
        Eigen::LLT<Eigen::MatrixXd> llt(G);
        if (llt.info() != Eigen::Success) return false;
        // G = R^T R with R upper triangular; orthonormal features Q = F R^{-1}
        const Eigen::MatrixXd R = llt.matrixU();
        rinv_ = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(P, P));
        Q_ = F * rinv_;
        return true;
    }

    void enumerate(std::vector<int>& e, std::size_t j, int remaining) {
        if (j + 1 == dim_) {
            if (remaining > 0 && scale_[j] == 0.0) return;
            e[j] = remaining;
            exponents_.push_back(e);
            e[j] = 0;
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            if (k > 0 && scale_[j] == 0.0) continue;
            e[j] = k;
            enumerate(e, j + 1, remaining - k);
        }
        e[j] = 0;
    }

    Fit fit_polynomial(std::span<const double> y) const {
        const std::size_t P = exponents_.size();
        Fit r;
        Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(M_));
        const Eigen::VectorXd c = Q_.transpose() * yv / static_cast<double>(M_);
        const Eigen::VectorXd fitted = Q_ * c;
        r.coefficients.assign(c.data(), c.data() + P);
        r.fitted.assign(fitted.data(), fitted.data() + M_);
        double ss = 0.0;
        for (std::size_t m = 0; m < M_; ++m) ss += (y[m] - r.fitted[m]) * (y[m] - r.fitted[m]);
        r.sigma = M_ > P ? std::sqrt(ss / static_cast<double>(M_ - P)) : 0.0;
        r.se.resize(M_);
        for (std::size_t m = 0; m < M_; ++m) {
            const double lev = Q_.row(static_cast<Eigen::Index>(m)).squaredNorm() / static_cast<double>(M_);
            r.se[m] = r.sigma * std::sqrt(lev);
        }
        return r;
    }

    // -- partitions ---------------------------------------------------------

    void build_partition(std::span<const double> states) {
        const int B = std::max(1, spec_.bins);
        edges_.assign(dim_, {});
        std::vector<double> col(M_);
        for (std::size_t j = 0; j < dim_; ++j) {
            for (std::size_t m = 0; m < M_; ++m) col[m] = states[m * dim_ + j];
            std::sort(col.begin(), col.end());
            std::vector<double> e;
            for (int b = 1; b < B; ++b) {
                const double v = col[static_cast<std::size_t>(static_cast<double>(b) * static_cast<double>(M_) / B)];
                if (e.empty() || v > e.back()) e.push_back(v);
            }
            edges_[j] = e;
        }
        strides_.assign(dim_, 1);
        std::size_t cells = 1;
        for (std::size_t j = 0; j < dim_; ++j) {
            strides_[j] = cells;
            cells *= edges_[j].size() + 1;
        }
        n_cells_ = cells;
        cell_.resize(M_);
        std::vector<std::size_t> count(cells, 0);
        for (std::size_t m = 0; m < M_; ++m) {
            cell_[m] = cell_of(states.subspan(m * dim_, dim_));
            ++count[cell_[m]];
        }
        // compact to occupied cells
        compact_.assign(cells, static_cast<std::size_t>(-1));
        occupied_cells_ = 0;
        for (std::size_t c = 0; c < cells; ++c) {
            if (count[c] > 0) compact_[c] = occupied_cells_++;
        }
        counts_.assign(occupied_cells_, 0);
        for (std::size_t m = 0; m < M_; ++m) {
            cell_[m] = compact_[cell_[m]];
            ++counts_[cell_[m]];
        }
        cell_center_.assign(occupied_cells_ * dim_, 0.0);
        for (std::size_t m = 0; m < M_; ++m)
            for (std::size_t j = 0; j < dim_; ++j) cell_center_[cell_[m] * dim_ + j] += states[m * dim_ + j];
        for (std::size_t c = 0; c < occupied_cells_; ++c)
            for (std::size_t j = 0; j < dim_; ++j) cell_center_[c * dim_ + j] /= static_cast<double>(counts_[c]);
        cond_ = 1.0;
        if (kind_ == BasisKind::LocalLinear) {
            states_copy_.assign(states.begin(), states.end());
            build_local_linear(states);
        }
    }

    std::size_t cell_of(std::span<const double> x) const {
        std::size_t c = 0;
        for (std::size_t j = 0; j < dim_; ++j) {
            const auto& e = edges_[j];
            const std::size_t b = static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), x[j]) - e.begin());
            c += b * strides_[j];
        }
        return c;
    }

    std::size_t nearest_occupied(std::size_t raw) const {
        if (compact_[raw] != static_cast<std::size_t>(-1)) return compact_[raw];
        // empty cell: closest occupied cell centre in cell-index space
        std::size_t best = 0;
        double bd = kInf;
        for (std::size_t c = 0; c < n_cells_; ++c) {
            if (compact_[c] == static_cast<std::size_t>(-1)) continue;
            double d = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                const double a = static_cast<double>((raw / strides_[j]) % (edges_[j].size() + 1));
                const double b = static_cast<double>((c / strides_[j]) % (edges_[j].size() + 1));
                d += (a - b) * (a - b);
            }
            if (d < bd) bd = d, best = compact_[c];
        }
        return best;
    }

    Fit fit_partition(std::span<const double> y) const {
        Fit r;
        const std::size_t C = occupied_cells_;
        std::vector<double> sum(C, 0.0), sq(C, 0.0);
        for (std::size_t m = 0; m < M_; ++m) sum[cell_[m]] += y[m];
        r.coefficients.resize(C);
        for (std::size_t c = 0; c < C; ++c) r.coefficients[c] = sum[c] / static_cast<double>(counts_[c]);
        double ss = 0.0;
        r.fitted.resize(M_);
        for (std::size_t m = 0; m < M_; ++m) {
            const double f = r.coefficients[cell_[m]];
            r.fitted[m] = f;
            const double d = y[m] - f;
            sq[cell_[m]] += d * d;
            ss += d * d;
        }
        r.sigma = M_ > C ? std::sqrt(ss / static_cast<double>(M_ - C)) : 0.0;
        r.se.resize(M_);
        for (std::size_t m = 0; m < M_; ++m) {
            const std::size_t c = cell_[m];
            const double n = static_cast<double>(counts_[c]);
            const double s = n > 1.0 ? std::sqrt(sq[c] / (n - 1.0)) : r.sigma;
            r.se[m] = s / std::sqrt(n);
        }
        return r;
    }

    void build_local_linear(std::span<const double> states) {
        const std::size_t D = dim_ + 1;
        local_inv_.assign(occupied_cells_, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D)));
        std::vector<Eigen::MatrixXd> G(occupied_cells_, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D)));
        Eigen::VectorXd f(static_cast<Eigen::Index>(D));
        for (std::size_t m = 0; m < M_; ++m) {
            local_features(states.subspan(m * dim_, dim_), cell_[m], f);
            G[cell_[m]] += f * f.transpose();
        }
        local_rank_.assign(occupied_cells_, 1);
        for (std::size_t c = 0; c < occupied_cells_; ++c) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G[c]);
            const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
            if (counts_[c] > 2 * D && lmin > 1e-10 * lmax) {
                local_inv_[c] = G[c].inverse();
                local_rank_[c] = D;
                cond_ = std::max(cond_, lmax / lmin);
            }
        }
    }

    void local_features(std::span<const double> x, std::size_t c, Eigen::VectorXd& f) const {
        f(0) = 1.0;
        for (std::size_t j = 0; j < dim_; ++j) f(static_cast<Eigen::Index>(j + 1)) = x[j] - cell_center_[c * dim_ + j];
    }

    Fit fit_local_linear(std::span<const double> y) const {
        Fit r;
        const std::size_t D = dim_ + 1, C = occupied_cells_;
        std::vector<Eigen::VectorXd> rhs(C, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D)));
        std::vector<double> sum(C, 0.0);
        Eigen::VectorXd f(static_cast<Eigen::Index>(D));
        for (std::size_t m = 0; m < M_; ++m) {
            local_features(centred_state(m), cell_[m], f);
            rhs[cell_[m]] += f * y[m];
            sum[cell_[m]] += y[m];
        }
        r.coefficients.assign(C * D, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            if (local_rank_[c] == D) {
                const Eigen::VectorXd b = local_inv_[c] * rhs[c];
                for (std::size_t k = 0; k < D; ++k) r.coefficients[c * D + k] = b(static_cast<Eigen::Index>(k));
            } else {
                r.coefficients[c * D] = sum[c] / static_cast<double>(counts_[c]);
            }
        }
        r.fitted.resize(M_);
        std::vector<double> sq(C, 0.0);
        double ss = 0.0;
        for (std::size_t m = 0; m < M_; ++m) {
            local_features(centred_state(m), cell_[m], f);
            double v = 0.0;
            for (std::size_t k = 0; k < D; ++k) v += r.coefficients[cell_[m] * D + k] * f(static_cast<Eigen::Index>(k));
            r.fitted[m] = v;
            const double d = y[m] - v;
            sq[cell_[m]] += d * d;
            ss += d * d;
        }
        r.sigma = M_ > C * D ? std::sqrt(ss / static_cast<double>(M_ - C * D)) : 0.0;
        r.se.resize(M_);
        for (std::size_t m = 0; m < M_; ++m) {
            const std::size_t c = cell_[m];
            const double n = static_cast<double>(counts_[c]);
            const double dof = n - static_cast<double>(local_rank_[c]);
            const double s = dof > 0.0 ? std::sqrt(sq[c] / dof) : r.sigma;
            double lev = 1.0 / n;
            if (local_rank_[c] == D) {
                local_features(centred_state(m), c, f);
                lev = f.dot(local_inv_[c] * f);
            }
            r.se[m] = s * std::sqrt(std::max(lev, 0.0));
        }
        return r;
    }

    std::span<const double> centred_state(std::size_t m) const { return {states_copy_.data() + m * dim_, dim_}; }

    BasisSpec spec_;
    BasisKind kind_ = BasisKind::Polynomial;
    std::size_t dim_, M_;
    bool fallback_ = false;
    bool reduced_ = false;
    double cond_ = 1.0;
    // polynomial
    std::vector<double> mean_, scale_;
    std::vector<std::vector<int>> exponents_;
    Eigen::MatrixXd rinv_, Q_;
    // partitions
    std::vector<std::vector<double>> edges_;
    std::vector<std::size_t> strides_, cell_, counts_, compact_, local_rank_;
    std::size_t n_cells_ = 0, occupied_cells_ = 0;
    std::vector<double> cell_center_;
    std::vector<Eigen::MatrixXd> local_inv_;
    std::vector<double> states_copy_;
};

/// One-shot projection of targets onto the basis evaluated at states.
inline Fit regress_conditional(std::span<const double> targets, std::span<const double> states, std::size_t dim,
                               const BasisSpec& spec) {
    return Regressor(spec, states, dim).fit(targets);
}

}  // namespace bsdelab
