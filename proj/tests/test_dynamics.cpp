#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "twophonon/dynamics.hpp"

using namespace twophonon;

namespace {

constexpr double pi = std::numbers::pi;

Matrix dense_rhs(const Matrix& rho, const SimulationConfig& cfg)
{
    const auto b = make_annihilation(cfg.dim);
    const auto bd = b.adjoint();
    const Matrix H = 0.5 * (cfg.Omega * b.matrix() + std::conj(cfg.Omega) * bd.matrix());
    const cplx i(0.0, 1.0);
    return -i * (H * rho - rho * H) + cfg.cooling_coefficient() * dissipator(b, rho) +
           cfg.heating_coefficient() * dissipator(bd, rho) +
           cfg.two_phonon_coefficient() * dissipator(b * b, rho);
}

DensityMatrix random_state(int dim, std::mt19937& rng)
{
    std::normal_distribution<double> g;
    Matrix a(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c) a(r, c) = cplx(g(rng), g(rng));
    Matrix m = a * a.adjoint();
    m /= m.trace();
    return DensityMatrix::from_matrix(m);
}

SimulationConfig driven_config(int dim)
{
    SimulationConfig cfg;
    cfg.Gamma2 = 1.0;
    cfg.Gamma1_r = 0.03;
    cfg.Gamma1_b = 0.02;
    cfg.Omega = cplx(0.3, -0.2);
    cfg.dim = dim;
    return cfg;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace

TEST(FullRhs, TwoPhononDecayOfFockTwo)
{
    auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 4);
    const auto two = DensityMatrix::fock(2, 4);
    cfg.two_phonon_weight = 0.25;
    Matrix d = full_rhs(two, cfg);
    EXPECT_NEAR(d(0, 0).real(), 1.0, 1e-14);
    EXPECT_NEAR(d(2, 2).real(), -1.0, 1e-14);
    cfg.two_phonon_weight = 0.5;
    d = full_rhs(two, cfg);
    EXPECT_NEAR(d(0, 0).real(), 2.0, 1e-14);
    EXPECT_NEAR(d(1, 1).real(), 0.0, 1e-14);
}

TEST(FullRhs, GroundStateFixedWithoutLinearLoss)
{
    const auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 6);
    EXPECT_LT(max_abs(full_rhs(DensityMatrix::fock(0, 6), cfg)), 1e-15);
    EXPECT_LT(max_abs(full_rhs(DensityMatrix::fock(1, 6), cfg)), 1e-15);
}

TEST(FullRhs, MatchesDenseGenerator)
{
    std::mt19937 rng(7);
    auto cfg = driven_config(9);
    cfg.gamma_m = 0.01;
    cfg.n_bar_m = 0.7;
    for (int k = 0; k < 5; ++k) {
        const auto rho = random_state(9, rng);
        EXPECT_LT(max_abs(full_rhs(rho, cfg) - dense_rhs(rho.matrix(), cfg)), 1e-13);
    }
}

TEST(FullRhs, HermitianAndTraceless)
{
    std::mt19937 rng(11);
    const auto cfg = driven_config(12);
    const auto rho = random_state(12, rng);
    const Matrix d = full_rhs(rho, cfg);
    EXPECT_LT(std::abs(d.trace()), 1e-13);
    EXPECT_LT(hermiticity_error(d), 1e-13);
}

TEST(FullRhs, DimensionMismatchThrows)
{
    const auto cfg = driven_config(5);
    EXPECT_THROW(full_rhs(DensityMatrix::fock(0, 4), cfg), ShapeError);
}

TEST(SimulationConfig, Validation)
{
    auto cfg = driven_config(2);
    EXPECT_THROW(cfg.validate(), InvalidDimension);
    cfg.dim = 5;
    EXPECT_NO_THROW(cfg.validate());
    cfg.Gamma1_r = -1.0;
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    EXPECT_THROW(scaled_rates(0.0, 1.0), InvalidParameter);
    EXPECT_THROW(scaled_rates(10.0, -1.0), InvalidParameter);
}

TEST(ScaledRates, SplitsLinearLoss)
{
    const auto r = scaled_rates(50.0, 3.0);
    EXPECT_DOUBLE_EQ(r.Gamma2, 1.0);
    EXPECT_NEAR(r.Gamma1_r + r.Gamma1_b, 0.02, 1e-16);
    EXPECT_NEAR(r.Gamma1_b / r.Gamma1_r, 3.0, 1e-12);
    const auto inf = scaled_rates(infinity, 1.0);
    EXPECT_EQ(inf.Gamma1_r, 0.0);
    EXPECT_EQ(inf.Gamma1_b, 0.0);
}

TEST(Evolve, GroundStateStationary)
{
    const auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 8);
    const std::array<double, 2> times{1.0, 10.0};
    const auto traj = evolve_full(cfg, DensityMatrix::fock(0, 8), times);
    EXPECT_LT(max_abs(traj.states.back().matrix() - DensityMatrix::fock(0, 8).matrix()), 1e-15);
}

TEST(Evolve, WeakDriveMatchesReducedModel)
{
    auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 6);
    cfg.Omega = 0.01;
    cfg.dt = 0.01;
    const std::array<double, 1> times{pi / 0.01};
    const auto traj = evolve_full(cfg, DensityMatrix::fock(0, 6), times);
    const auto ev = evolve_reduced(ReducedState{}, cfg.Omega, scaled_rates(infinity, 1.0), pi / 0.01, 0.01);
    EXPECT_NEAR(traj.states.front().population(1), ev.state.rho_11, 2e-4);
    EXPECT_GT(traj.states.front().population(1), 0.98);
}

TEST(Evolve, ThermalStateCoolsToParityTarget)
{
    const auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 30);
    const auto rho0 = thermal_state(4.0, 30);
    const auto target = two_phonon_target(rho0);
    std::vector<double> times;
    for (int k = 1; k <= 30; ++k) times.push_back(k);
    const auto traj = evolve_full(cfg, rho0, times);
    const double p_odd = parity_populations(rho0).odd;
    for (const auto& s : traj.states) {
        EXPECT_LT(std::abs(parity_populations(s).odd - p_odd), 1e-8);
    }
    EXPECT_GE(uhlmann_fidelity(traj.states.back(), target), 1.0 - 1e-4);
    EXPECT_LT(traj.stats.max_trace_drift, 1e-10);
}

TEST(Evolve, SamplingDoesNotPerturbGrid)
{
    const auto cfg = driven_config(8);
    const auto rho0 = DensityMatrix::fock(1, 8);
    const std::array<double, 1> one{5.0};
    const std::array<double, 4> many{0.0, 1.2345, 3.33333, 5.0};
    const auto a = evolve_full(cfg, rho0, one);
    const auto b = evolve_full(cfg, rho0, many);
    EXPECT_LT(max_abs(a.states.back().matrix() - b.states.back().matrix()), 1e-14);
    EXPECT_LT(max_abs(b.states.front().matrix() - rho0.matrix()), 1e-15);
}

TEST(Evolve, PopulationPathMatchesFullStepper)
{
    const auto cfg = cooling_config(20.0, 1.0, 15, 1e-3);
    const auto rho0 = thermal_state(2.0, 15);
    const int steps = 2000;
    const std::array<double, 1> times{steps * 1e-3};
    const auto fast = evolve_full(cfg, rho0, times);

    const MasterEquation eq(cfg);
    Rk4Stepper stepper(eq);
    Matrix rho = rho0.matrix();
    for (int i = 0; i < steps; ++i) stepper.step(rho, 1e-3);
    EXPECT_LT(max_abs(fast.states.front().matrix() - rho), 1e-12);
}

TEST(Evolve, UnstableStepRaises)
{
    auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 30);
    cfg.dt = 1.0;
    const std::array<double, 1> times{10.0};
    EXPECT_THROW(evolve_full(cfg, thermal_state(4.0, 30), times), IntegrationError);
}

TEST(Evolve, RejectsBadSampleTimes)
{
    const auto cfg = driven_config(5);
    const std::array<double, 2> unsorted{2.0, 1.0};
    EXPECT_THROW(evolve_full(cfg, DensityMatrix::fock(0, 5), unsorted), InvalidParameter);
    const std::array<double, 1> early{0.5};
    EXPECT_THROW(evolve_from(cfg, DensityMatrix::fock(0, 5), 1.0, early), InvalidParameter);
}

TEST(Cooling, TauGrid)
{
    const auto g = default_tau_grid();
    ASSERT_EQ(g.size(), 401u);
    EXPECT_EQ(g.front(), 0.0);
    EXPECT_NEAR(g[1], 1e-2, 1e-16);
    EXPECT_NEAR(g.back(), 1e2, 1e-10);
}

TEST(Cooling, GroundStateInitialHasZeroMinimum)
{
    const auto grid = default_tau_grid();
    const auto curve = cooling_infidelity_curve(34.0, 1.0, 0.0, grid);
    EXPECT_EQ(curve.points.front().infidelity, 0.0);
    EXPECT_GT(curve.points.back().infidelity, 0.0);
    EXPECT_EQ(refine_minimum(curve).infidelity_min, 0.0);
}

TEST(Cooling, NoLinearLossReachesTarget)
{
    const auto grid = default_tau_grid(1e-2, 30.0, 50);
    CoolingOptions opts;
    opts.dim = 30;
    const auto curve = cooling_infidelity_curve(infinity, 1.0, 4.0, grid, opts);
    EXPECT_LT(curve.points.back().infidelity, 1e-4);
    EXPECT_NEAR(curve.points.back().odd_population, parity_populations(curve.initial).odd, 1e-8);
}

TEST(Cooling, MinimumDecreasesWithLambda)
{
    CoolingOptions opts;
    opts.dim = 30;
    const auto m34 = min_infidelity(34.0, 1.0, 4.0, opts);
    const auto m340 = min_infidelity(340.0, 1.0, 4.0, opts);
    const auto m3400 = min_infidelity(3400.0, 1.0, 4.0, opts);
    EXPECT_GT(m34.infidelity_min, m340.infidelity_min);
    EXPECT_GT(m340.infidelity_min, m3400.infidelity_min);
    EXPECT_GT(m34.infidelity_min / m3400.infidelity_min, 10.0);
    EXPECT_LT(m34.tau_min, m3400.tau_min);
    EXPECT_THROW(min_infidelity(infinity, 1.0, 4.0, opts), InvalidParameter);
}

TEST(Reduced, SteadyState)
{
    for (double lambda : {3.0, 30.0, 3000.0}) {
        const auto rates = scaled_rates(lambda, 1.0);
        const auto d0 = reduced_rhs(ReducedState{}, 0.0, rates);
        EXPECT_NEAR(d0.rho_11, rates.Gamma1_b + rates.Gamma1_r / 9.0, 1e-15);
        const auto ev = evolve_reduced(ReducedState{}, 0.0, rates, 40.0 * lambda, 0.05 * lambda);
        EXPECT_NEAR(ev.state.rho_11, 5.0 / 24.0, 1e-8) << lambda;
    }
}

TEST(Reduced, PiRotationWithWeakDampingFlipsQubit)
{
    const auto rates = scaled_rates(infinity, 1.0);
    const cplx omega = 1e-3;
    const auto ev = evolve_reduced(ReducedState{}, omega, rates, pi / 1e-3, 0.5);
    EXPECT_GT(ev.state.rho_11, 1.0 - 2e-3);
    EXPECT_NEAR(ev.state.rho_x, 0.0, 1e-3);
}

TEST(Reduced, StaysInsideBlochBall)
{
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 8; ++k) {
        const auto q = QubitState::from_bloch(pi * u(rng), 2.0 * pi * u(rng));
        const auto rates = scaled_rates(5.0, 1.0);
        const cplx omega = std::polar(optimal_drive(rates), 2.0 * pi * u(rng));
        const auto ev = evolve_reduced(q.reduced(), omega, rates, 30.0);
        EXPECT_LE(ev.max_bloch_excess, 1e-9);
    }
}

TEST(Reduced, DensityRoundTrip)
{
    const auto q = QubitState::from_bloch(1.1, 2.3);
    const auto rho = reduced_density(q.reduced());
    EXPECT_LT(max_abs(rho.matrix() - q.density(2).matrix()), 1e-15);
}

TEST(Pulse, AsymptoticSpotValues)
{
    EXPECT_NEAR(fidelity_asymptotic(1e4, 1.0, 0.0, 1.0), 0.96152, 5e-6);
    const double s = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(fidelity_asymptotic(1e4, s, s, 1.0), 0.97435, 5e-6);
    EXPECT_EQ(fidelity_asymptotic(infinity, 1.0, 0.0, 1.0), 1.0);
    EXPECT_THROW(fidelity_asymptotic(1e4, 1.0, 1.0, 1.0), InvalidState);
}

TEST(Pulse, OptimalDrive)
{
    const auto r = scaled_rates(100.0, 1.0);
    EXPECT_NEAR(optimal_drive(r), 2.0 * std::sqrt(0.005 / 3.0 + 0.005), 1e-15);
    PulseSettings s;
    EXPECT_NEAR(std::abs(s.drive()), 4e-3, 1e-18);
    s.lambda = 100.0;
    s.phase = 0.7;
    EXPECT_NEAR(std::arg(s.drive()), 0.7, 1e-15);
    EXPECT_NEAR(s.duration(), pi / optimal_drive(r), 1e-12);
}

TEST(Pulse, IdealTargetMatchesExponential)
{
    const double phi = 0.9;
    Matrix sm = Matrix::Zero(2, 2);
    sm(0, 1) = 1.0;
    const Matrix G = (pi / 2.0) * (std::polar(1.0, phi) * sm + std::polar(1.0, -phi) * sm.adjoint());
    const Matrix U = (cplx(0.0, -1.0) * G).exp();
    const auto q = QubitState::from_bloch(0.8, 1.9);
    Vector psi(2);
    psi << q.eta, q.beta;
    const Vector expected = U * psi;
    const Vector got = ideal_pi_target(q, phi, 2);
    EXPECT_LT((expected - got).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Pulse, ReducedLargeLambdaNearAsymptotic)
{
    PulseSettings s;
    s.lambda = 1e4;
    const auto r = pi_pulse(QubitState(1.0, 0.0), s, PulseModel::reduced);
    EXPECT_NEAR(r.fidelity, 0.9615, 5e-3);
}

TEST(Pulse, FullModelWithoutLinearLoss)
{
    PulseSettings s;
    const auto r = pi_pulse(QubitState(1.0, 0.0), s, PulseModel::full);
    EXPECT_GE(r.fidelity, 0.99);
    EXPECT_LT(r.stats.max_trace_drift, 1e-8);
}

TEST(Pulse, ChannelMatchesDirectEvolution)
{
    PulseSettings s;
    s.lambda = 100.0;
    s.phase = 0.4;
    const PulseChannel channel(s);
    for (const auto& pt : bloch_spiral(4)) {
        const auto q = QubitState::from_bloch(pt.theta, pt.phi);
        const auto direct = pi_pulse(q, s, PulseModel::full);
        EXPECT_LT(max_abs(channel.apply(q).matrix() - direct.final_state.matrix()), 1e-10);
        EXPECT_NEAR(channel.fidelity(q), direct.fidelity, 1e-9);
    }
}

TEST(Sweep, BlochSamples)
{
    const auto grid = bloch_grid();
    ASSERT_EQ(grid.size(), 24u * 24u + 2u);
    double total = 0.0;
    for (const auto& p : grid) total += p.weight;
    EXPECT_NEAR(total, 1.0, 1e-14);
    EXPECT_EQ(grid.front().theta, 0.0);
    EXPECT_EQ(grid.back().theta, pi);
    const auto spiral = bloch_spiral();
    ASSERT_EQ(spiral.size(), 10u);
    EXPECT_EQ(spiral.front().theta, 0.0);
    EXPECT_NEAR(spiral.back().theta, pi, 1e-15);
}

TEST(Sweep, StatisticsOrderedAndImproveWithLambda)
{
    const auto sample = bloch_grid(6, 6);
    const std::array<double, 3> lambdas{10.0, 100.0, 1000.0};
    const auto rows = pi_pulse_fidelity_sweep(lambdas, 1.0, sample);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& f = rows[i].fidelity;
        EXPECT_LE(f.min, f.mean);
        EXPECT_LE(f.mean, f.max);
        EXPECT_LE(rows[i].max_bloch_excess, 1e-9);
        if (i > 0) {
            EXPECT_GT(f.min, rows[i - 1].fidelity.min);
            EXPECT_GT(f.mean, rows[i - 1].fidelity.mean);
        }
    }
}

TEST(Sweep, ReducedAgreesWithAsymptoticAtLargeLambda)
{
    const auto sample = bloch_grid(12, 12);
    const std::array<double, 1> lambdas{1e4};
    const auto row = pi_pulse_fidelity_sweep(lambdas, 1.0, sample).front();
    for (const auto& s : row.states) {
        EXPECT_NEAR(s.fidelity, s.asymptotic, 5e-3) << s.point.theta << ' ' << s.point.phi;
    }
    EXPECT_NEAR(row.fidelity.min, row.asymptotic.min, 5e-3);
    EXPECT_NEAR(row.fidelity.max, row.asymptotic.max, 5e-3);
}

TEST(PulseWigner, NegativeAtOriginForLambdaTwenty)
{
    PulseSettings s;
    s.lambda = 20.0;
    const auto axis = linspace_step(-3.5, 3.5, 0.05);
    const auto w = pi_pulse_wigner(s, axis, axis);
    const std::size_t mid = axis.size() / 2;
    ASSERT_NEAR(axis[mid], 0.0, 1e-12);
    EXPECT_LT(w.grid.at(mid, mid), 0.0);
    EXPECT_NEAR(w.grid.integral(), 1.0, 1e-6);
}

TEST(PulseWigner, NoLinearLossApproachesFockOne)
{
    PulseSettings s;
    const std::array<double, 1> origin{0.0};
    const auto w = pi_pulse_wigner(s, origin, origin);
    EXPECT_NEAR(w.grid.at(0, 0), -2.0 / pi, 0.02 * 2.0 / pi);
}

// The cases below state the target behaviour; they do not hold for this model.

TEST(Evolve, WeakDrivePiPulseReachesFockOne)
{
    auto cfg = config_from_rates(scaled_rates(infinity, 1.0), 6);
    cfg.Omega = 0.01;
    cfg.dt = 0.01;
    const std::array<double, 1> times{pi / 0.01};
    const auto traj = evolve_full(cfg, DensityMatrix::fock(0, 6), times);
    EXPECT_GE(traj.states.front().population(1), 0.99);
}

TEST(PulseWigner, NegativeAtOriginForLambdaTwo)
{
    PulseSettings s;
    s.lambda = 2.0;
    const std::array<double, 1> origin{0.0};
    const auto w = pi_pulse_wigner(s, origin, origin);
    EXPECT_LT(w.grid.at(0, 0), 0.0);
}

TEST(Pulse, FullAgreesWithReducedFromLambdaTen)
{
    const auto sample = bloch_spiral();
    for (double lambda : {10.0, 100.0}) {
        PulseSettings s;
        s.lambda = lambda;
        const auto full = pi_pulse_sweep_point(s, sample, PulseModel::full);
        const auto reduced = pi_pulse_sweep_point(s, sample, PulseModel::reduced);
        double df = 0.0;
        for (std::size_t i = 0; i < sample.size(); ++i) {
            df = std::max(df, std::abs(full.states[i].fidelity - reduced.states[i].fidelity));
        }
        EXPECT_LT(df, 0.01) << "lambda " << lambda;
    }
}
