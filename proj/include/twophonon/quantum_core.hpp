#pragma once

// Truncated Fock-space linear algebra for a single bosonic mode.

#include <algorithm>
#include <cmath>
#include <limits>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twophonon/errors.hpp"

namespace twophonon {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

/// Dense operator on the number basis {|0>, ..., |dim-1>}.
class FockOperator {
public:
    explicit FockOperator(Matrix entries) : m_(std::move(entries))
    {
        if (m_.rows() == 0 || m_.rows() != m_.cols()) {
            throw InvalidDimension("FockOperator needs a non-empty square matrix");
        }
    }

    int dim() const noexcept { return static_cast<int>(m_.rows()); }
    const Matrix& matrix() const noexcept { return m_; }
    cplx operator()(int row, int col) const { return m_(row, col); }

    FockOperator adjoint() const { return FockOperator(m_.adjoint()); }

    friend FockOperator operator*(const FockOperator& a, const FockOperator& b)
    {
        if (a.dim() != b.dim()) {
            throw ShapeError("FockOperator product with mismatched dimensions");
        }
        return FockOperator(a.m_ * b.m_);
    }

private:
    Matrix m_;
};

inline FockOperator make_annihilation(int dim)
{
    if (dim < 1) {
        throw InvalidDimension("annihilation operator needs dim >= 1, got " +
                               std::to_string(dim));
    }
    Matrix a = Matrix::Zero(dim, dim);
    for (int n = 1; n < dim; ++n) {
        a(n - 1, n) = std::sqrt(static_cast<double>(n));
    }
    return FockOperator(std::move(a));
}

inline FockOperator make_creation(int dim) { return make_annihilation(dim).adjoint(); }

inline FockOperator make_number(int dim)
{
    const auto a = make_annihilation(dim);
    return a.adjoint() * a;
}

/// Acceptance thresholds for treating a matrix as a physical state.
struct StateTolerance {
    double hermiticity = 1e-12;
    double trace = 1e-10;
    double min_eigenvalue = -1e-8;
};

inline double hermiticity_error(const Matrix& m)
{
    return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline Eigen::VectorXd hermitian_eigenvalues(const Matrix& m)
{
    const Matrix h = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(h, Eigen::EigenvaluesOnly);
    return solver.eigenvalues();
}

inline double min_eigenvalue(const Matrix& m) { return hermitian_eigenvalues(m).minCoeff(); }

/// Hermitian, unit-trace, positive semidefinite matrix on the number basis.
class DensityMatrix {
public:
    /// Validates against `tol`; throws InvalidState on violation.
    static DensityMatrix from_matrix(Matrix m, const StateTolerance& tol = {})
    {
        if (m.rows() == 0 || m.rows() != m.cols()) {
            throw InvalidDimension("density matrix must be non-empty and square");
        }
        const double herm = hermiticity_error(m);
        if (herm > tol.hermiticity) {
            throw InvalidState("density matrix not Hermitian (error " + std::to_string(herm) +
                               ")");
        }
        const double tr = m.trace().real();
        if (std::abs(tr - 1.0) > tol.trace) {
            throw InvalidState("density matrix trace is " + std::to_string(tr));
        }
        const double lmin = min_eigenvalue(m);
        if (lmin < tol.min_eigenvalue) {
            throw InvalidState("density matrix has eigenvalue " + std::to_string(lmin));
        }
        return DensityMatrix(std::move(m));
    }

    /// Skips validation; for states produced by code that already checked them.
    static DensityMatrix unchecked(Matrix m) { return DensityMatrix(std::move(m)); }

    static DensityMatrix fock(int n, int dim)
    {
        if (dim < 1 || n < 0 || n >= dim) {
            throw InvalidDimension("Fock state |" + std::to_string(n) +
                                   "> outside basis of size " + std::to_string(dim));
        }
        Matrix m = Matrix::Zero(dim, dim);
        m(n, n) = 1.0;
        return DensityMatrix(std::move(m));
    }

    /// |psi><psi| for a normalized (or normalizable) vector.
    static DensityMatrix pure(const Vector& psi)
    {
        const double norm = psi.norm();
        if (psi.size() == 0 || norm == 0.0) {
            throw InvalidState("pure state needs a non-zero vector");
        }
        const Vector v = psi / norm;
        return DensityMatrix(v * v.adjoint());
    }

    int dim() const noexcept { return static_cast<int>(m_.rows()); }
    const Matrix& matrix() const noexcept { return m_; }
    cplx operator()(int row, int col) const { return m_(row, col); }
    double population(int n) const { return m_(n, n).real(); }

    /// Zero-padded copy in a larger basis.
    DensityMatrix embedded(int new_dim) const
    {
        if (new_dim < dim()) {
            throw InvalidDimension("cannot embed into a smaller basis");
        }
        Matrix m = Matrix::Zero(new_dim, new_dim);
        m.topLeftCorner(dim(), dim()) = m_;
        return DensityMatrix(std::move(m));
    }

private:
    explicit DensityMatrix(Matrix m) : m_(std::move(m)) {}
    Matrix m_;
};

inline void require_same_dim(int a, int b, const char* what)
{
    if (a != b) {
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
    }
}

/// Ratio n_bar/(1+n_bar) of the geometric thermal distribution.
inline double thermal_ratio(double n_bar) { return n_bar / (1.0 + n_bar); }

/// Smallest basis size whose thermal tail weight r^N drops below `tail`,
/// plus `guard` extra levels.
inline int default_dimension(double n_bar, double tail = 1e-6, int guard = 5)
{
    if (!(n_bar >= 0.0)) {
        throw InvalidParameter("n_bar must be >= 0");
    }
    int n = 1;
    if (n_bar > 0.0) {
        const double r = thermal_ratio(n_bar);
        n = static_cast<int>(std::ceil(std::log(tail) / std::log(r)));
        if (std::pow(r, n) >= tail) {
            ++n;
        }
        n = std::max(n, 1);
    }
    return n + guard;
}

inline DensityMatrix thermal_state(double n_bar, int dim)
{
    if (!(n_bar >= 0.0)) {
        throw InvalidParameter("thermal_state: n_bar must be >= 0");
    }
    if (dim < 1) {
        throw InvalidDimension("thermal_state: dim must be >= 1");
    }
    const double r = thermal_ratio(n_bar);
    Eigen::VectorXd p(dim);
    double w = 1.0;
    for (int n = 0; n < dim; ++n) {
        p(n) = w;
        w *= r;
    }
    p /= p.sum();
    Matrix m = Matrix::Zero(dim, dim);
    m.diagonal() = p.cast<cplx>();
    return DensityMatrix::unchecked(std::move(m));
}

/// L[O; rho] = 2 O rho O^+ - O^+ O rho - rho O^+ O.
inline Matrix dissipator(const FockOperator& op, const Matrix& rho)
{
    require_same_dim(op.dim(), static_cast<int>(rho.rows()), "dissipator");
    if (rho.rows() != rho.cols()) {
        throw ShapeError("dissipator: rho must be square");
    }
    const Matrix& o = op.matrix();
    const Matrix od = o.adjoint();
    const Matrix odo = od * o;
    return 2.0 * o * rho * od - odo * rho - rho * odo;
}

inline Matrix dissipator(const FockOperator& op, const DensityMatrix& rho)
{
    return dissipator(op, rho.matrix());
}

namespace detail {

// Principal square root of a PSD Hermitian matrix; eigenvalues clamped at 0.
inline Matrix psd_sqrt(const Matrix& m)
{
    const Matrix h = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(h);
    const Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().adjoint();
}

inline void require_psd(const DensityMatrix& rho, double tol, const char* name)
{
    const double lmin = min_eigenvalue(rho.matrix());
    if (lmin < -tol) {
        throw InvalidState(std::string("uhlmann_fidelity: ") + name +
                           " not positive semidefinite (eigenvalue " + std::to_string(lmin) +
                           ")");
    }
}

} // namespace detail

/// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2, clamped to [0, 1].
inline double uhlmann_fidelity(const DensityMatrix& rho, const DensityMatrix& sigma,
                               double psd_tolerance = 1e-8)
{
    require_same_dim(rho.dim(), sigma.dim(), "uhlmann_fidelity");
    detail::require_psd(rho, psd_tolerance, "rho");
    detail::require_psd(sigma, psd_tolerance, "sigma");
    const Matrix sr = detail::psd_sqrt(rho.matrix());
    const Matrix inner = sr * sigma.matrix() * sr;
    Eigen::VectorXd ev = hermitian_eigenvalues(inner);
    // Eigenvalues at the solver's noise floor would contribute ~sqrt(eps) each.
    const double floor = 4.0 * rho.dim() * std::numeric_limits<double>::epsilon() *
                         std::max(ev.maxCoeff(), 0.0);
    double root_trace = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) > floor) root_trace += std::sqrt(ev(i));
    }
    return std::clamp(root_trace * root_trace, 0.0, 1.0);
}

/// Re Tr(rho sigma); equals the Uhlmann fidelity when either state is pure.
inline double trace_overlap(const DensityMatrix& rho, const DensityMatrix& sigma)
{
    require_same_dim(rho.dim(), sigma.dim(), "trace_overlap");
    return (rho.matrix() * sigma.matrix()).trace().real();
}

struct ParityPopulations {
    double even = 0.0;
    double odd = 0.0;
};

inline ParityPopulations parity_populations(const DensityMatrix& rho)
{
    ParityPopulations p;
    for (int n = 0; n < rho.dim(); ++n) {
        (n % 2 == 0 ? p.even : p.odd) += rho.population(n);
    }
    return p;
}

/// p_even |0><0| + p_odd |1><1|: the fixed point of pure two-phonon decay for
/// parity-diagonal inputs. Coherences of the input are discarded.
inline DensityMatrix two_phonon_target(const DensityMatrix& rho0)
{
    const auto p = parity_populations(rho0);
    Matrix m = Matrix::Zero(rho0.dim(), rho0.dim());
    m(0, 0) = p.even;
    if (rho0.dim() > 1) {
        m(1, 1) = p.odd;
    } else if (p.odd != 0.0) {
        throw InvalidDimension("two_phonon_target: odd weight in a 1-level basis");
    }
    return DensityMatrix::unchecked(std::move(m));
}

/// Wigner function sampled on a rectangular (x, p) grid; values(i, j) is
/// W(x_values[i], p_values[j]).
struct WignerGrid {
    std::vector<double> x_values;
    std::vector<double> p_values;
    Eigen::MatrixXd values;

    double at(std::size_t ix, std::size_t ip) const
    {
        return values(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(ip));
    }

    double min() const { return values.minCoeff(); }
    double max() const { return values.maxCoeff(); }

    /// Riemann sum of W dx dp, assuming uniform spacing along each axis.
    double integral() const
    {
        if (x_values.size() < 2 || p_values.size() < 2) {
            return 0.0;
        }
        const double dx = (x_values.back() - x_values.front()) /
                          static_cast<double>(x_values.size() - 1);
        const double dp = (p_values.back() - p_values.front()) /
                          static_cast<double>(p_values.size() - 1);
        return values.sum() * dx * dp;
    }
};

namespace detail {

// <m|D(beta)|n> for all m, n < dim, from the closed form with associated
// Laguerre polynomials. Exact: no truncation of D itself.
inline Matrix displacement_elements(cplx beta, int dim)
{
    const double x = std::norm(beta);
    const double abs_beta = std::abs(beta);
    const double phase = std::arg(beta);
    Matrix d = Matrix::Zero(dim, dim);
    for (int n = 0; n < dim; ++n) {
        for (int k = 0; n + k < dim; ++k) {
            // L_n^(k)(x) by upward recurrence in the degree.
            double l_prev = 1.0;
            double l = 1.0;
            if (n >= 1) {
                l = 1.0 + k - x;
                for (int j = 1; j < n; ++j) {
                    const double next = ((2.0 * j + 1.0 + k - x) * l - (j + k) * l_prev) /
                                        (j + 1.0);
                    l_prev = l;
                    l = next;
                }
            }
            const int m = n + k;
            double magnitude;
            if (k == 0) {
                magnitude = std::exp(-0.5 * x);
            } else if (abs_beta == 0.0) {
                magnitude = 0.0;
            } else {
                magnitude = std::exp(-0.5 * x + k * std::log(abs_beta) +
                                     0.5 * (std::lgamma(n + 1.0) - std::lgamma(m + 1.0)));
            }
            const double value = magnitude * l;
            // m >= n: beta^k; m < n (transpose slot): (-beta*)^k.
            d(m, n) = value * std::polar(1.0, k * phase);
            if (k > 0) {
                d(n, m) = value * std::polar(1.0, k * (std::numbers::pi - phase));
            }
        }
    }
    return d;
}

} // namespace detail

/// W(x, p) with alpha = x + i p, normalized so that the integral over dx dp is 1;
/// W(alpha) = (2/pi) Tr[rho D(alpha) P D(alpha)^+] with P the parity operator.
inline double wigner_at(const DensityMatrix& rho, double x, double p)
{
    const int dim = rho.dim();
    const Matrix d = detail::displacement_elements(2.0 * cplx(x, p), dim);
    cplx acc = 0.0;
    for (int n = 0; n < dim; ++n) {
        const double sign = (n % 2 == 0) ? 1.0 : -1.0;
        for (int m = 0; m < dim; ++m) {
            acc += rho(n, m) * sign * d(m, n);
        }
    }
    return 2.0 / std::numbers::pi * acc.real();
}

inline WignerGrid wigner(const DensityMatrix& rho, std::span<const double> x_values,
                         std::span<const double> p_values)
{
    if (x_values.empty() || p_values.empty()) {
        throw InvalidParameter("wigner: coordinate lists must be non-empty");
    }
    WignerGrid grid;
    grid.x_values.assign(x_values.begin(), x_values.end());
    grid.p_values.assign(p_values.begin(), p_values.end());
    grid.values.resize(static_cast<Eigen::Index>(x_values.size()),
                       static_cast<Eigen::Index>(p_values.size()));
    for (std::size_t i = 0; i < x_values.size(); ++i) {
        for (std::size_t j = 0; j < p_values.size(); ++j) {
            grid.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                wigner_at(rho, x_values[i], p_values[j]);
        }
    }
    return grid;
}

/// Evenly spaced points lo, lo + step, ..., up to hi (inclusive within step/2).
inline std::vector<double> linspace_step(double lo, double hi, double step)
{
    if (!(step > 0.0) || hi < lo) {
        throw InvalidParameter("linspace_step: need step > 0 and hi >= lo");
    }
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 0.5)) + 1;
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        v[i] = lo + step * static_cast<double>(i);
    }
    return v;
}

} // namespace twophonon
