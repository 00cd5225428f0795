#pragma once

// Time evolution of the membrane: the full master equation in the frame
// rotating at omega_m, the adiabatically reduced qubit model, and the pi-pulse
// protocol built on both. Time is measured in units of 1/Gamma2 throughout.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twophonon/circuit_model.hpp"
#include "twophonon/errors.hpp"
#include "twophonon/quantum_core.hpp"

namespace twophonon {

/// Parameters of one master-equation run.
struct SimulationConfig {
    double Gamma2 = 1.0;
    double Gamma1_r = 0.0;
    double Gamma1_b = 0.0;
    cplx Omega = 0.0;
    double gamma_m = 0.0;
    double n_bar_m = 0.0;
    int dim = 0;
    double dt = 0.0; ///< 0 selects default_dt()
    /// Weight w of the two-phonon term w * Gamma2 * L[bb]. The default 1/2 makes
    /// the full model consistent with the reduced qubit equations and the
    /// closed-form pi-pulse fidelity.
    double two_phonon_weight = 0.5;

    double Gamma1_total() const { return Gamma1_r + Gamma1_b; }

    double cooling_coefficient() const
    {
        return 0.5 * gamma_m * (n_bar_m + 1.0) + 0.5 * (Gamma1_r + Gamma1_b);
    }
    double heating_coefficient() const
    {
        return 0.5 * gamma_m * n_bar_m + 0.5 * (Gamma1_r / 9.0 + Gamma1_b);
    }
    double two_phonon_coefficient() const { return two_phonon_weight * Gamma2; }

    /// Largest diagonal decay rate of the truncated generator.
    double max_decay_rate() const
    {
        const double n = dim - 1.0;
        return 2.0 * two_phonon_coefficient() * n * (n - 1.0) +
               2.0 * (cooling_coefficient() + heating_coefficient()) * (n + 1.0) +
               std::abs(Omega) * std::sqrt(n + 1.0);
    }

    /// 1e-3 / max(Gamma2, |Omega|, Gamma1_r + Gamma1_b), capped at the inverse
    /// of the largest truncated decay rate so RK4 stays inside its stability region.
    double default_dt() const
    {
        const double scale = std::max({Gamma2, std::abs(Omega), Gamma1_total()});
        double dt_default = 1e-3 / (scale > 0.0 ? scale : 1.0);
        const double stiff = max_decay_rate();
        if (stiff > 0.0) {
            dt_default = std::min(dt_default, 1.0 / stiff);
        }
        return dt_default;
    }

    double resolved_dt() const { return dt > 0.0 ? dt : default_dt(); }

    void validate() const
    {
        if (dim < 1) throw InvalidDimension("SimulationConfig: dim must be >= 1");
        if (std::abs(Omega) > 0.0 && dim < 3) {
            throw InvalidDimension("SimulationConfig: a drive needs dim >= 3 to reach |2>");
        }
        if (!(Gamma2 >= 0.0 && Gamma1_r >= 0.0 && Gamma1_b >= 0.0)) {
            throw InvalidParameter("SimulationConfig: rates must be >= 0");
        }
        if (!(gamma_m >= 0.0 && n_bar_m >= 0.0)) {
            throw InvalidParameter("SimulationConfig: gamma_m and n_bar_m must be >= 0");
        }
        if (!(two_phonon_weight >= 0.0)) {
            throw InvalidParameter("SimulationConfig: two_phonon_weight must be >= 0");
        }
        if (dt < 0.0 || !std::isfinite(dt)) {
            throw InvalidParameter("SimulationConfig: dt must be > 0");
        }
    }
};

/// Gamma2 = 1, Gamma1_r + Gamma1_b = 1/lambda split by ratio = Gamma1_b/Gamma1_r.
/// lambda = inf switches the linear rates off.
inline RateSet scaled_rates(double lambda, double ratio_b_over_r)
{
    if (!(lambda > 0.0)) throw InvalidParameter("lambda must be > 0");
    if (!(ratio_b_over_r >= 0.0)) throw InvalidParameter("ratio_b_over_r must be >= 0");
    RateSet r;
    r.Gamma2 = 1.0;
    r.lambda = lambda;
    if (std::isinf(lambda)) {
        return r;
    }
    const double total = 1.0 / lambda;
    r.Gamma1_r = total / (1.0 + ratio_b_over_r);
    r.Gamma1_b = total - r.Gamma1_r;
    r.lambda_r = r.Gamma1_r > 0.0 ? r.Gamma2 / r.Gamma1_r : infinity;
    r.lambda_m = r.Gamma1_b > 0.0 ? r.Gamma2 / r.Gamma1_b : infinity;
    return r;
}

inline SimulationConfig config_from_rates(const RateSet& rates, int dim)
{
    SimulationConfig cfg;
    cfg.Gamma2 = rates.Gamma2;
    cfg.Gamma1_r = rates.Gamma1_r;
    cfg.Gamma1_b = rates.Gamma1_b;
    cfg.dim = dim;
    return cfg;
}

/// Right-hand side of the master equation, evaluated from explicit
/// number-basis matrix elements (all operators are banded).
class MasterEquation {
public:
    explicit MasterEquation(const SimulationConfig& cfg)
        : dim_(cfg.dim), omega_(cfg.Omega), c_down_(cfg.cooling_coefficient()),
          c_up_(cfg.heating_coefficient()), c_two_(cfg.two_phonon_coefficient()),
          sq_(static_cast<std::size_t>(cfg.dim) + 2)
    {
        cfg.validate();
        for (std::size_t k = 0; k < sq_.size(); ++k) {
            sq_[k] = std::sqrt(static_cast<double>(k));
        }
    }

    int dim() const noexcept { return dim_; }

    /// out = d rho / dt.
    void apply(const Matrix& rho, Matrix& out) const
    {
        const int N = dim_;
        out.resize(N, N);
        const cplx half_omega = 0.5 * omega_;
        const cplx half_omega_c = std::conj(half_omega);
        const cplx minus_i(0.0, -1.0);
        for (int n = 0; n < N; ++n) {
            const double nn = n;
            const double up_n = (n < N - 1) ? nn + 1.0 : 0.0; // (b b^+)_nn in the truncated basis
            for (int m = 0; m < N; ++m) {
                const double mm = m;
                const double up_m = (m < N - 1) ? mm + 1.0 : 0.0;
                cplx acc = 0.0;

                // -i [H, rho], H = (Omega b + Omega* b^+)/2
                cplx comm = 0.0;
                if (m + 1 < N) comm += half_omega * sq_[m + 1] * rho(m + 1, n);
                if (m >= 1) comm += half_omega_c * sq_[m] * rho(m - 1, n);
                if (n >= 1) comm -= half_omega * sq_[n] * rho(m, n - 1);
                if (n + 1 < N) comm -= half_omega_c * sq_[n + 1] * rho(m, n + 1);
                acc += minus_i * comm;

                const cplx r = rho(m, n);
                // L[b]
                if (c_down_ != 0.0) {
                    cplx d = -(mm + nn) * r;
                    if (m + 1 < N && n + 1 < N) d += 2.0 * sq_[m + 1] * sq_[n + 1] * rho(m + 1, n + 1);
                    acc += c_down_ * d;
                }
                // L[b^+]
                if (c_up_ != 0.0) {
                    cplx d = -(up_m + up_n) * r;
                    if (m >= 1 && n >= 1) d += 2.0 * sq_[m] * sq_[n] * rho(m - 1, n - 1);
                    acc += c_up_ * d;
                }
                // L[bb]
                if (c_two_ != 0.0) {
                    cplx d = -(mm * (mm - 1.0) + nn * (nn - 1.0)) * r;
                    if (m + 2 < N && n + 2 < N) {
                        d += 2.0 * sq_[m + 1] * sq_[m + 2] * sq_[n + 1] * sq_[n + 2] *
                             rho(m + 2, n + 2);
                    }
                    acc += c_two_ * d;
                }
                out(m, n) = acc;
            }
        }
    }

    Matrix operator()(const Matrix& rho) const
    {
        Matrix out;
        apply(rho, out);
        return out;
    }

private:
    int dim_;
    cplx omega_;
    double c_down_;
    double c_up_;
    double c_two_;
    std::vector<double> sq_;
};

/// d rho/dt for the full model.
inline Matrix full_rhs(const DensityMatrix& rho, const SimulationConfig& cfg)
{
    require_same_dim(rho.dim(), cfg.dim, "full_rhs");
    return MasterEquation(cfg)(rho.matrix());
}

/// Classical RK4 stepper with preallocated work space.
class Rk4Stepper {
public:
    explicit Rk4Stepper(const MasterEquation& eq) : eq_(eq) {}

    void step(Matrix& rho, double h)
    {
        eq_.apply(rho, k1_);
        tmp_ = rho + (0.5 * h) * k1_;
        eq_.apply(tmp_, k2_);
        tmp_ = rho + (0.5 * h) * k2_;
        eq_.apply(tmp_, k3_);
        tmp_ = rho + h * k3_;
        eq_.apply(tmp_, k4_);
        rho += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    }

private:
    const MasterEquation& eq_;
    Matrix k1_, k2_, k3_, k4_, tmp_;
};

/// Populations-only generator, exact when Omega = 0 and rho is diagonal.
class PopulationEquation {
public:
    explicit PopulationEquation(const SimulationConfig& cfg)
        : dim_(cfg.dim), c_down_(cfg.cooling_coefficient()), c_up_(cfg.heating_coefficient()),
          c_two_(cfg.two_phonon_coefficient())
    {
        cfg.validate();
    }

    void apply(const Eigen::VectorXd& p, Eigen::VectorXd& out) const
    {
        const int N = dim_;
        out.resize(N);
        for (int m = 0; m < N; ++m) {
            const double mm = m;
            const double up_m = (m < N - 1) ? mm + 1.0 : 0.0;
            double d = -2.0 * (c_down_ * mm + c_up_ * up_m + c_two_ * mm * (mm - 1.0)) * p(m);
            if (m + 1 < N) d += 2.0 * c_down_ * (mm + 1.0) * p(m + 1);
            if (m >= 1) d += 2.0 * c_up_ * mm * p(m - 1);
            if (m + 2 < N) d += 2.0 * c_two_ * (mm + 1.0) * (mm + 2.0) * p(m + 2);
            out(m) = d;
        }
    }

private:
    int dim_;
    double c_down_;
    double c_up_;
    double c_two_;
};

class PopulationStepper {
public:
    explicit PopulationStepper(const PopulationEquation& eq) : eq_(eq) {}

    void step(Eigen::VectorXd& p, double h)
    {
        eq_.apply(p, k1_);
        tmp_ = p + (0.5 * h) * k1_;
        eq_.apply(tmp_, k2_);
        tmp_ = p + (0.5 * h) * k2_;
        eq_.apply(tmp_, k3_);
        tmp_ = p + h * k3_;
        eq_.apply(tmp_, k4_);
        p += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    }

private:
    const PopulationEquation& eq_;
    Eigen::VectorXd k1_, k2_, k3_, k4_, tmp_;
};

/// Worst-case diagnostics observed at the sampled states of a run.
struct EvolutionStats {
    double max_trace_drift = 0.0;
    double max_hermiticity_error = 0.0;
    double min_eigenvalue = std::numeric_limits<double>::infinity();
    long long steps = 0;

    void merge(const EvolutionStats& o)
    {
        max_trace_drift = std::max(max_trace_drift, o.max_trace_drift);
        max_hermiticity_error = std::max(max_hermiticity_error, o.max_hermiticity_error);
        min_eigenvalue = std::min(min_eigenvalue, o.min_eigenvalue);
        steps += o.steps;
    }
};

/// Failure thresholds applied to every sampled state.
struct EvolutionLimits {
    double trace_drift = 1e-6;
    double min_eigenvalue = -1e-6;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<DensityMatrix> states;
    EvolutionStats stats;
};

namespace detail {

inline DensityMatrix checked_sample(const Matrix& rho, double t, const EvolutionLimits& limits,
                                    EvolutionStats& stats)
{
    const double tr = rho.trace().real();
    const double drift = std::abs(tr - 1.0);
    const double herm = hermiticity_error(rho);
    stats.max_trace_drift = std::max(stats.max_trace_drift, drift);
    stats.max_hermiticity_error = std::max(stats.max_hermiticity_error, herm);
    if (!std::isfinite(tr) || drift > limits.trace_drift) {
        throw IntegrationError("trace drifted by " + std::to_string(drift) + " at t = " +
                               std::to_string(t) + "; reduce dt");
    }
    Matrix normalized = 0.5 * (rho + rho.adjoint()) / tr;
    const double lmin = min_eigenvalue(normalized);
    stats.min_eigenvalue = std::min(stats.min_eigenvalue, lmin);
    if (lmin < limits.min_eigenvalue) {
        throw IntegrationError("positivity lost (eigenvalue " + std::to_string(lmin) +
                               ") at t = " + std::to_string(t) + "; reduce dt or raise dim");
    }
    return DensityMatrix::unchecked(std::move(normalized));
}

} // namespace detail

namespace detail {

inline bool is_diagonal(const Matrix& m)
{
    for (int c = 0; c < m.cols(); ++c) {
        for (int r = 0; r < m.rows(); ++r) {
            if (r != c && m(r, c) != cplx(0.0)) return false;
        }
    }
    return true;
}

template <class State, class Stepper, class ToMatrix>
void integrate_samples(State state, Stepper& stepper, double t0, double dt,
                       std::span<const double> sample_times, ToMatrix to_matrix,
                       const EvolutionLimits& limits, Trajectory& traj)
{
    long long k = 0;
    State scratch;
    for (double target : sample_times) {
        const auto k_target =
            static_cast<long long>(std::floor((target - t0) / dt * (1.0 + 1e-12) + 1e-9));
        while (k < k_target) {
            stepper.step(state, dt);
            ++k;
        }
        const double remainder = (target - t0) - static_cast<double>(k) * dt;
        if (remainder > 1e-12 * dt) {
            scratch = state;
            stepper.step(scratch, remainder);
            traj.states.push_back(checked_sample(to_matrix(scratch), target, limits, traj.stats));
            ++traj.stats.steps;
        } else {
            traj.states.push_back(checked_sample(to_matrix(state), target, limits, traj.stats));
        }
    }
    traj.stats.steps += k;
}

} // namespace detail

/// Fixed-step RK4 integration from `initial` at time t0, returning the state at
/// each requested time (sorted, >= t0). Sampling never perturbs the underlying
/// step grid t0 + k dt: off-grid samples are reached by a partial step on a copy.
/// Undriven runs from a diagonal state stay diagonal and evolve populations only.
inline Trajectory evolve_from(const SimulationConfig& cfg, const DensityMatrix& initial, double t0,
                              std::span<const double> sample_times,
                              const EvolutionLimits& limits = {})
{
    cfg.validate();
    require_same_dim(initial.dim(), cfg.dim, "evolve_full");
    if (!std::is_sorted(sample_times.begin(), sample_times.end())) {
        throw InvalidParameter("evolve_full: sample times must be sorted");
    }
    if (!sample_times.empty() && sample_times.front() < t0) {
        throw InvalidParameter("evolve_full: sample times must not precede the start time");
    }
    const double dt = cfg.resolved_dt();

    Trajectory traj;
    traj.times.assign(sample_times.begin(), sample_times.end());
    traj.states.reserve(sample_times.size());

    if (cfg.Omega == cplx(0.0) && detail::is_diagonal(initial.matrix())) {
        const PopulationEquation eq(cfg);
        PopulationStepper stepper(eq);
        Eigen::VectorXd p = initial.matrix().diagonal().real();
        auto to_matrix = [](const Eigen::VectorXd& v) -> Matrix {
            return v.cast<cplx>().asDiagonal();
        };
        detail::integrate_samples(p, stepper, t0, dt, sample_times, to_matrix, limits, traj);
    } else {
        const MasterEquation eq(cfg);
        Rk4Stepper stepper(eq);
        auto to_matrix = [](const Matrix& m) -> const Matrix& { return m; };
        detail::integrate_samples(initial.matrix(), stepper, t0, dt, sample_times, to_matrix,
                                  limits, traj);
    }
    return traj;
}

inline Trajectory evolve_full(const SimulationConfig& cfg, const DensityMatrix& initial,
                              std::span<const double> sample_times,
                              const EvolutionLimits& limits = {})
{
    return evolve_from(cfg, initial, 0.0, sample_times, limits);
}

// ---------------------------------------------------------------------------
// Two-phonon cooling from a thermal state

/// tau = 0 followed by `count` log-spaced points in [lo, hi].
inline std::vector<double> default_tau_grid(double lo = 1e-2, double hi = 1e2, int count = 400)
{
    if (!(lo > 0.0 && hi > lo && count >= 2)) {
        throw InvalidParameter("tau grid needs 0 < lo < hi and count >= 2");
    }
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(count) + 1);
    grid.push_back(0.0);
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (int i = 0; i < count; ++i) {
        grid.push_back(std::pow(10.0, a + (b - a) * i / (count - 1)));
    }
    return grid;
}

struct CoolingOptions {
    int dim = 0;    ///< 0 selects default_dimension(n_bar)
    double dt = 0.0;
    double two_phonon_weight = 0.5;
    /// Explicit initial state; overrides the thermal state (its dim wins).
    std::optional<DensityMatrix> initial;
};

struct CoolingPoint {
    double tau = 0.0;
    double infidelity = 0.0;         ///< 1 - Uhlmann fidelity
    double overlap_infidelity = 0.0; ///< 1 - Tr(rho target)
    double odd_population = 0.0;
};

struct CoolingCurve {
    double lambda = 0.0;
    double ratio_b_over_r = 1.0;
    double n_bar = 0.0;
    SimulationConfig config;
    DensityMatrix initial = DensityMatrix::fock(0, 1);
    DensityMatrix target = DensityMatrix::fock(0, 1);
    std::vector<CoolingPoint> points;
    std::vector<DensityMatrix> states;
    EvolutionStats stats;
};

inline SimulationConfig cooling_config(double lambda, double ratio_b_over_r, int dim,
                                       double dt = 0.0, double weight = 0.5)
{
    auto cfg = config_from_rates(scaled_rates(lambda, ratio_b_over_r), dim);
    cfg.dt = dt;
    cfg.two_phonon_weight = weight;
    return cfg;
}

inline CoolingCurve cooling_infidelity_curve(double lambda, double ratio_b_over_r, double n_bar,
                                             std::span<const double> tau_grid,
                                             const CoolingOptions& opts = {})
{
    if (!(n_bar >= 0.0)) throw InvalidParameter("cooling: n_bar must be >= 0");
    CoolingCurve curve;
    curve.lambda = lambda;
    curve.ratio_b_over_r = ratio_b_over_r;
    curve.n_bar = n_bar;
    if (opts.initial) {
        curve.initial = *opts.initial;
    } else {
        const int dim = opts.dim > 0 ? opts.dim : default_dimension(n_bar);
        curve.initial = thermal_state(n_bar, dim);
    }
    curve.config = cooling_config(lambda, ratio_b_over_r, curve.initial.dim(), opts.dt,
                                  opts.two_phonon_weight);
    curve.target = two_phonon_target(curve.initial);

    auto traj = evolve_full(curve.config, curve.initial, tau_grid);
    curve.stats = traj.stats;
    curve.points.reserve(traj.states.size());
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        const auto& s = traj.states[i];
        CoolingPoint p;
        p.tau = traj.times[i];
        p.infidelity = 1.0 - uhlmann_fidelity(s, curve.target);
        p.overlap_infidelity = 1.0 - trace_overlap(s, curve.target);
        p.odd_population = parity_populations(s).odd;
        curve.points.push_back(p);
    }
    curve.states = std::move(traj.states);
    return curve;
}

struct CoolingMinimum {
    double tau_min = 0.0;
    double infidelity_min = 0.0;
};

/// Grid minimum of the curve, refined by golden-section search between the
/// neighbouring grid points to relative tau precision `rel_tol`.
inline CoolingMinimum refine_minimum(const CoolingCurve& curve, double rel_tol = 1e-3)
{
    const auto& pts = curve.points;
    if (pts.empty()) throw InvalidParameter("refine_minimum: empty curve");
    std::size_t k = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].infidelity < pts[k].infidelity) k = i;
    }
    CoolingMinimum best{pts[k].tau, pts[k].infidelity};
    if (k == 0 || k + 1 == pts.size()) {
        return best;
    }
    const double origin = pts[k - 1].tau;
    const DensityMatrix& start = curve.states[k - 1];
    auto f = [&](double tau) {
        const std::array<double, 1> t{tau};
        auto traj = evolve_from(curve.config, start, origin, t);
        return 1.0 - uhlmann_fidelity(traj.states.front(), curve.target);
    };
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = pts[k - 1].tau;
    double b = pts[k + 1].tau;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c);
    double fd = f(d);
    while ((b - a) > rel_tol * 0.5 * (a + b)) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    const double tau = fc < fd ? c : d;
    const double val = std::min(fc, fd);
    if (val < best.infidelity_min) {
        best = {tau, val};
    }
    return best;
}

inline CoolingMinimum min_infidelity(double lambda, double ratio_b_over_r, double n_bar,
                                     const CoolingOptions& opts = {})
{
    if (!(lambda > 0.0) || std::isinf(lambda)) {
        throw InvalidParameter("min_infidelity: lambda must be finite and > 0");
    }
    const auto grid = default_tau_grid();
    return refine_minimum(cooling_infidelity_curve(lambda, ratio_b_over_r, n_bar, grid, opts));
}

// ---------------------------------------------------------------------------
// Reduced qubit model with |2> adiabatically eliminated

/// rho_x = rho_10 + rho_01, rho_y = i(rho_10 - rho_01), rho_11.
struct ReducedState {
    double rho_x = 0.0;
    double rho_y = 0.0;
    double rho_11 = 0.0;

    /// rho_x^2 + rho_y^2 - 4 rho_11 (1 - rho_11); <= 0 inside the Bloch ball.
    double bloch_excess() const
    {
        return rho_x * rho_x + rho_y * rho_y - 4.0 * rho_11 * (1.0 - rho_11);
    }
};

/// Effective coherence damping |Omega|^2/(4 Gamma2) + Gamma1_r/3 + Gamma1_b.
inline double reduced_damping(cplx Omega, const RateSet& rates)
{
    return std::norm(Omega) / (4.0 * rates.Gamma2) + rates.Gamma1_r / 3.0 + rates.Gamma1_b;
}

/// Time derivative of the reduced model. The coherent term in d rho_11/dt is
/// (Re Omega rho_y - Im Omega rho_x)/2, the value generated by the drive
/// Hamiltonian (Omega b + Omega* b^+)/2 on the qubit subspace.
inline ReducedState reduced_rhs(const ReducedState& s, cplx Omega, const RateSet& rates)
{
    if (!(rates.Gamma2 > 0.0)) throw InvalidParameter("reduced_rhs: Gamma2 must be > 0");
    const double g = reduced_damping(Omega, rates);
    const double z = 1.0 - 2.0 * s.rho_11;
    ReducedState d;
    d.rho_x = -2.0 * g * s.rho_x - Omega.imag() * z;
    d.rho_y = -2.0 * g * s.rho_y + Omega.real() * z;
    d.rho_11 = -4.0 * g * s.rho_11 + rates.Gamma1_b + rates.Gamma1_r / 9.0 +
               0.5 * (Omega.real() * s.rho_y - Omega.imag() * s.rho_x);
    return d;
}

struct ReducedEvolution {
    ReducedState state;
    double max_bloch_excess = -std::numeric_limits<double>::infinity();
    long long steps = 0;
};

inline ReducedEvolution evolve_reduced(const ReducedState& initial, cplx Omega,
                                       const RateSet& rates, double t_final, double dt = 0.0)
{
    if (!(t_final >= 0.0)) throw InvalidParameter("evolve_reduced: t_final must be >= 0");
    if (dt <= 0.0) {
        const double scale = std::max({rates.Gamma2, std::abs(Omega),
                                       rates.Gamma1_r + rates.Gamma1_b});
        dt = 1e-3 / scale;
    }
    auto axpy = [](const ReducedState& a, double h, const ReducedState& b) {
        return ReducedState{a.rho_x + h * b.rho_x, a.rho_y + h * b.rho_y, a.rho_11 + h * b.rho_11};
    };
    ReducedEvolution out;
    ReducedState s = initial;
    out.max_bloch_excess = s.bloch_excess();
    const auto n_full = static_cast<long long>(std::floor(t_final / dt * (1.0 + 1e-12) + 1e-9));
    const double remainder = t_final - static_cast<double>(n_full) * dt;
    auto step = [&](double h) {
        const auto k1 = reduced_rhs(s, Omega, rates);
        const auto k2 = reduced_rhs(axpy(s, 0.5 * h, k1), Omega, rates);
        const auto k3 = reduced_rhs(axpy(s, 0.5 * h, k2), Omega, rates);
        const auto k4 = reduced_rhs(axpy(s, h, k3), Omega, rates);
        s.rho_x += h / 6.0 * (k1.rho_x + 2.0 * k2.rho_x + 2.0 * k3.rho_x + k4.rho_x);
        s.rho_y += h / 6.0 * (k1.rho_y + 2.0 * k2.rho_y + 2.0 * k3.rho_y + k4.rho_y);
        s.rho_11 += h / 6.0 * (k1.rho_11 + 2.0 * k2.rho_11 + 2.0 * k3.rho_11 + k4.rho_11);
        out.max_bloch_excess = std::max(out.max_bloch_excess, s.bloch_excess());
        ++out.steps;
    };
    for (long long i = 0; i < n_full; ++i) step(dt);
    if (remainder > 1e-12 * dt) step(remainder);
    out.state = s;
    return out;
}

/// Omega = 2 sqrt((Gamma1_r/3 + Gamma1_b) Gamma2), the drive maximizing the
/// closed-form pi-pulse fidelity.
inline double optimal_drive(const RateSet& rates)
{
    return 2.0 * std::sqrt((rates.Gamma1_r / 3.0 + rates.Gamma1_b) * rates.Gamma2);
}

// ---------------------------------------------------------------------------
// Pi pulse

struct QubitState {
    cplx eta = 1.0;
    cplx beta = 0.0;

    QubitState() = default;
    QubitState(cplx e, cplx b) : eta(e), beta(b)
    {
        if (std::abs(std::norm(eta) + std::norm(beta) - 1.0) > 1e-10) {
            throw InvalidState("QubitState: |eta|^2 + |beta|^2 must be 1");
        }
    }

    /// cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>, eta real.
    static QubitState from_bloch(double theta, double phi)
    {
        return {std::cos(0.5 * theta), std::polar(std::sin(0.5 * theta), phi)};
    }

    ReducedState reduced() const
    {
        const cplx r10 = beta * std::conj(eta);
        return {2.0 * r10.real(), -2.0 * r10.imag(), std::norm(beta)};
    }

    DensityMatrix density(int dim) const
    {
        Vector psi = Vector::Zero(dim);
        psi(0) = eta;
        psi(1) = beta;
        return DensityMatrix::pure(psi);
    }
};

inline DensityMatrix reduced_density(const ReducedState& s)
{
    Matrix m(2, 2);
    const cplx r10 = 0.5 * cplx(s.rho_x, -s.rho_y);
    m(0, 0) = 1.0 - s.rho_11;
    m(1, 1) = s.rho_11;
    m(1, 0) = r10;
    m(0, 1) = std::conj(r10);
    return DensityMatrix::unchecked(std::move(m));
}

/// U = exp(-i (pi/2)(e^{i phi} s_- + e^{-i phi} s_+)) applied to the qubit state:
/// -i (e^{i phi} beta, e^{-i phi} eta).
inline Vector ideal_pi_target(const QubitState& q, double phi, int dim)
{
    Vector t = Vector::Zero(dim);
    const cplx minus_i(0.0, -1.0);
    t(0) = minus_i * std::polar(1.0, phi) * q.beta;
    t(1) = minus_i * std::polar(1.0, -phi) * q.eta;
    return t;
}

enum class PulseModel { full, reduced };

struct PulseSettings {
    double lambda = infinity;
    double ratio_b_over_r = 1.0;
    /// Drive amplitude override; by default optimal_drive() with phase `phase`.
    /// With lambda = inf the default is 4e-3 Gamma2, small enough that drive-induced
    /// loss through |2> stays below 1%.
    std::optional<cplx> omega;
    double phase = 0.0;
    int dim = 0; ///< full model only; 0 selects resolved_dim()
    double dt = 0.0;
    double two_phonon_weight = 0.5;

    RateSet rates() const { return scaled_rates(lambda, ratio_b_over_r); }

    cplx drive() const
    {
        if (omega) return *omega;
        const auto r = rates();
        double magnitude = optimal_drive(r);
        if (magnitude == 0.0) magnitude = 4e-3 * r.Gamma2;
        return std::polar(magnitude, phase);
    }

    /// Two occupied levels plus eight guard levels; strong drives (|Omega| ~ Gamma2)
    /// populate |3>, |4>, ... and need more than five.
    int resolved_dim() const { return dim > 0 ? dim : 2 + 8; }

    double duration() const { return std::numbers::pi / std::abs(drive()); }

    SimulationConfig config() const
    {
        auto cfg = config_from_rates(rates(), resolved_dim());
        cfg.Omega = drive();
        cfg.dt = dt;
        cfg.two_phonon_weight = two_phonon_weight;
        return cfg;
    }
};

struct PulseResult {
    DensityMatrix final_state = DensityMatrix::fock(0, 1);
    double fidelity = 0.0;
    EvolutionStats stats;
    double max_bloch_excess = 0.0; ///< reduced model only
};

inline DensityMatrix pure_target(const QubitState& q, double phi, int dim)
{
    return DensityMatrix::pure(ideal_pi_target(q, phi, dim));
}

inline PulseResult pi_pulse(const QubitState& initial, const PulseSettings& settings,
                            PulseModel model)
{
    const cplx omega = settings.drive();
    if (std::abs(omega) == 0.0) throw InvalidParameter("pi_pulse: drive must be non-zero");
    const double phi = std::arg(omega);
    const double t = settings.duration();
    PulseResult out;
    if (model == PulseModel::reduced) {
        auto ev = evolve_reduced(initial.reduced(), omega, settings.rates(), t, settings.dt);
        out.final_state = reduced_density(ev.state);
        out.max_bloch_excess = ev.max_bloch_excess;
        out.stats.steps = ev.steps;
        out.fidelity = std::clamp(trace_overlap(out.final_state, pure_target(initial, phi, 2)),
                                  0.0, 1.0);
        return out;
    }
    const auto cfg = settings.config();
    const std::array<double, 1> times{t};
    auto traj = evolve_full(cfg, initial.density(cfg.dim), times);
    out.final_state = traj.states.front();
    out.stats = traj.stats;
    out.fidelity = uhlmann_fidelity(out.final_state, pure_target(initial, phi, cfg.dim));
    return out;
}

/// Final states of the full-model pulse for the four qubit-subspace basis
/// operators, reconstructed by linearity from four physical initial states.
class PulseChannel {
public:
    explicit PulseChannel(const PulseSettings& settings)
        : settings_(settings), cfg_(settings.config()), phi_(std::arg(settings.drive()))
    {
        const int dim = cfg_.dim;
        const std::array<double, 1> times{settings.duration()};
        auto run = [&](const QubitState& q) {
            auto traj = evolve_full(cfg_, q.density(dim), times);
            stats_.merge(traj.stats);
            return traj.states.front().matrix();
        };
        const double s = 1.0 / std::sqrt(2.0);
        const Matrix p0 = run(QubitState(1.0, 0.0));
        const Matrix p1 = run(QubitState(0.0, 1.0));
        const Matrix plus = run(QubitState(s, s));
        const Matrix plus_i = run(QubitState(s, cplx(0.0, s)));
        const Matrix sym = 2.0 * plus - p0 - p1;
        const Matrix asym = 2.0 * plus_i - p0 - p1;
        const cplx i(0.0, 1.0);
        e00_ = p0;
        e11_ = p1;
        e01_ = 0.5 * (sym + i * asym);
        e10_ = 0.5 * (sym - i * asym);
    }

    DensityMatrix apply(const QubitState& q) const
    {
        Matrix m = std::norm(q.eta) * e00_ + std::norm(q.beta) * e11_ +
                   (q.eta * std::conj(q.beta)) * e01_ + (std::conj(q.eta) * q.beta) * e10_;
        m = 0.5 * (m + m.adjoint());
        return DensityMatrix::unchecked(std::move(m));
    }

    double fidelity(const QubitState& q) const
    {
        return uhlmann_fidelity(apply(q), pure_target(q, phi_, cfg_.dim));
    }

    const EvolutionStats& stats() const noexcept { return stats_; }
    const SimulationConfig& config() const noexcept { return cfg_; }

private:
    PulseSettings settings_;
    SimulationConfig cfg_;
    double phi_;
    Matrix e00_, e11_, e01_, e10_;
    EvolutionStats stats_;
};

/// Large-lambda expansion of the pi-pulse fidelity with optimal drive, with
/// r = Gamma1_b/Gamma1_r:
/// 1 - [(1+r)(1+3r)]^{-1/2} lambda^{-1/2} [ (sqrt3 pi/2)(1+3r)
///   - (2 Im(eta beta)/(3 sqrt3))(11+27r) - (2 pi Re(eta beta)^2/sqrt3)(1+3r) ].
/// The product eta*beta is used as written, so the global phase must be fixed
/// with eta real (QubitState::from_bloch does this).
inline double fidelity_asymptotic(double lambda, cplx eta, cplx beta, double ratio_b_over_r)
{
    if (!(lambda > 0.0)) throw InvalidParameter("fidelity_asymptotic: lambda must be > 0");
    if (std::abs(std::norm(eta) + std::norm(beta) - 1.0) > 1e-10) {
        throw InvalidState("fidelity_asymptotic: |eta|^2 + |beta|^2 must be 1");
    }
    if (std::isinf(lambda)) return 1.0;
    const double r = ratio_b_over_r;
    const double sqrt3 = std::sqrt(3.0);
    const double pi = std::numbers::pi;
    const cplx eb = eta * beta;
    const double bracket = sqrt3 * pi / 2.0 * (1.0 + 3.0 * r) -
                           2.0 * eb.imag() / (3.0 * sqrt3) * (11.0 + 27.0 * r) -
                           2.0 * pi * eb.real() * eb.real() / sqrt3 * (1.0 + 3.0 * r);
    return 1.0 - bracket / (std::sqrt(lambda) * std::sqrt((1.0 + r) * (1.0 + 3.0 * r)));
}

// ---------------------------------------------------------------------------
// Bloch-sphere sweeps

struct BlochPoint {
    double theta = 0.0;
    double phi = 0.0;
    double weight = 0.0; ///< uniform sphere measure, sums to 1 over the sample
};

/// Midpoint grid in (theta, phi) plus both poles (poles carry zero weight).
inline std::vector<BlochPoint> bloch_grid(int theta_steps = 24, int phi_steps = 24)
{
    if (theta_steps < 1 || phi_steps < 1) {
        throw InvalidParameter("bloch_grid: steps must be >= 1");
    }
    std::vector<BlochPoint> pts;
    pts.push_back({0.0, 0.0, 0.0});
    double total = 0.0;
    for (int i = 0; i < theta_steps; ++i) {
        const double theta = (i + 0.5) * std::numbers::pi / theta_steps;
        for (int j = 0; j < phi_steps; ++j) {
            const double phi = 2.0 * std::numbers::pi * j / phi_steps;
            const double w = std::sin(theta);
            pts.push_back({theta, phi, w});
            total += w;
        }
    }
    pts.push_back({std::numbers::pi, 0.0, 0.0});
    for (auto& p : pts) p.weight /= total;
    return pts;
}

/// `count` points spread over the sphere, both poles included, unit total weight.
inline std::vector<BlochPoint> bloch_spiral(int count = 10)
{
    if (count < 2) throw InvalidParameter("bloch_spiral: count must be >= 2");
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<BlochPoint> pts;
    for (int k = 0; k < count; ++k) {
        const double theta = std::numbers::pi * k / (count - 1);
        pts.push_back({theta, std::fmod(golden * k, 2.0 * std::numbers::pi), 1.0 / count});
    }
    return pts;
}

struct FidelityStats {
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
    double mean = 0.0;

    void add(double f, double w)
    {
        min = std::min(min, f);
        max = std::max(max, f);
        mean += w * f;
    }
};

struct StateFidelity {
    BlochPoint point;
    double fidelity = 0.0;
    double asymptotic = 0.0;
};

struct SweepRow {
    double lambda = 0.0;
    FidelityStats fidelity;
    FidelityStats asymptotic;
    std::vector<StateFidelity> states;
    EvolutionStats stats;
    double max_bloch_excess = -std::numeric_limits<double>::infinity();
};

inline SweepRow pi_pulse_sweep_point(const PulseSettings& settings,
                                     std::span<const BlochPoint> sample, PulseModel model)
{
    SweepRow row;
    row.lambda = settings.lambda;
    std::optional<PulseChannel> channel;
    if (model == PulseModel::full) {
        channel.emplace(settings);
        row.stats = channel->stats();
    }
    for (const auto& pt : sample) {
        const auto q = QubitState::from_bloch(pt.theta, pt.phi);
        StateFidelity sf;
        sf.point = pt;
        if (channel) {
            sf.fidelity = channel->fidelity(q);
        } else {
            const auto res = pi_pulse(q, settings, PulseModel::reduced);
            sf.fidelity = res.fidelity;
            row.max_bloch_excess = std::max(row.max_bloch_excess, res.max_bloch_excess);
        }
        sf.asymptotic = fidelity_asymptotic(settings.lambda, q.eta, q.beta, settings.ratio_b_over_r);
        row.fidelity.add(sf.fidelity, pt.weight);
        row.asymptotic.add(sf.asymptotic, pt.weight);
        row.states.push_back(sf);
    }
    return row;
}

/// Min, max and sphere-averaged pi-pulse fidelity for each lambda.
inline std::vector<SweepRow> pi_pulse_fidelity_sweep(std::span<const double> lambda_grid,
                                                     double ratio_b_over_r,
                                                     std::span<const BlochPoint> sample,
                                                     PulseModel model = PulseModel::reduced,
                                                     PulseSettings base = {})
{
    if (lambda_grid.empty() || sample.empty()) {
        throw InvalidParameter("pi_pulse_fidelity_sweep: grids must be non-empty");
    }
    std::vector<SweepRow> rows;
    for (double lambda : lambda_grid) {
        PulseSettings s = base;
        s.lambda = lambda;
        s.ratio_b_over_r = ratio_b_over_r;
        rows.push_back(pi_pulse_sweep_point(s, sample, model));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Wigner function after a pi pulse from the ground state

struct PulseWigner {
    PulseResult pulse;
    WignerGrid grid;
};

inline PulseWigner pi_pulse_wigner(const PulseSettings& settings, std::span<const double> x_values,
                                   std::span<const double> p_values)
{
    PulseWigner out;
    out.pulse = pi_pulse(QubitState(1.0, 0.0), settings, PulseModel::full);
    out.grid = wigner(out.pulse.final_state, x_values, p_values);
    return out;
}

inline PulseWigner pi_pulse_wigner(const PulseSettings& settings)
{
    const auto axis = linspace_step(-3.5, 3.5, 0.05);
    return pi_pulse_wigner(settings, axis, axis);
}

} // namespace twophonon
