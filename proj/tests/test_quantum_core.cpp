#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "twophonon/quantum_core.hpp"

using namespace twophonon;

namespace {

constexpr double two_over_pi = 2.0 / std::numbers::pi;

Matrix random_hermitian(int dim, std::mt19937& rng)
{
    std::normal_distribution<double> g;
    Matrix m(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) m(i, j) = cplx(g(rng), g(rng));
    return 0.5 * (m + m.adjoint());
}

DensityMatrix random_state(int dim, std::mt19937& rng)
{
    std::normal_distribution<double> g;
    Matrix a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) a(i, j) = cplx(g(rng), g(rng));
    Matrix rho = a * a.adjoint();
    rho /= rho.trace().real();
    return DensityMatrix::from_matrix(0.5 * (rho + rho.adjoint()));
}

DensityMatrix mixture_01(int dim)
{
    Matrix m = Matrix::Zero(dim, dim);
    m(0, 0) = 0.5;
    m(1, 1) = 0.5;
    return DensityMatrix::from_matrix(m);
}

} // namespace

TEST(FockOperator, AnnihilationDim3)
{
    const auto a = make_annihilation(3);
    EXPECT_DOUBLE_EQ(a(0, 1).real(), 1.0);
    EXPECT_DOUBLE_EQ(a(1, 2).real(), std::sqrt(2.0));
    double rest = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!(j == i + 1)) rest += std::abs(a(i, j));
    EXPECT_EQ(rest, 0.0);
}

TEST(FockOperator, AnnihilationDim1IsZero)
{
    const auto a = make_annihilation(1);
    ASSERT_EQ(a.dim(), 1);
    EXPECT_EQ(a(0, 0), cplx(0.0));
}

TEST(FockOperator, ZeroDimensionThrows)
{
    EXPECT_THROW(make_annihilation(0), InvalidDimension);
    EXPECT_THROW(make_annihilation(-2), InvalidDimension);
}

TEST(FockOperator, NumberOperatorDim4)
{
    const auto a = make_annihilation(4);
    const Matrix n = (a.adjoint() * a).matrix();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_NEAR(std::abs(n(i, j) - (i == j ? i : 0.0)), 0.0, 1e-15);
    EXPECT_TRUE(make_number(4).matrix().isApprox(n));
}

TEST(FockOperator, LadderCommutatorAwayFromEdge)
{
    for (int dim = 2; dim <= 12; ++dim) {
        const Matrix a = make_annihilation(dim).matrix();
        const Matrix c = a * a.adjoint() - a.adjoint() * a;
        for (int n = 0; n < dim - 1; ++n) {
            for (int m = 0; m < dim; ++m) {
                EXPECT_NEAR(std::abs(c(m, n) - (m == n ? 1.0 : 0.0)), 0.0, 1e-14);
            }
        }
    }
}

TEST(DensityMatrix, ValidationRejectsBadInput)
{
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = 1.0;
    m(0, 1) = 0.1;
    EXPECT_THROW(DensityMatrix::from_matrix(m), InvalidState); // not Hermitian
    m(0, 1) = 0.0;
    m(1, 1) = 0.5;
    EXPECT_THROW(DensityMatrix::from_matrix(m), InvalidState); // trace 1.5
    m(0, 0) = 1.2;
    m(1, 1) = -0.2;
    EXPECT_THROW(DensityMatrix::from_matrix(m), InvalidState); // negative eigenvalue
    EXPECT_THROW(DensityMatrix::from_matrix(Matrix(2, 3)), InvalidDimension);
    EXPECT_THROW(DensityMatrix::fock(3, 3), InvalidDimension);
}

TEST(DensityMatrix, EmbeddedPadsWithZeros)
{
    const auto t = thermal_state(1.0, 4).embedded(7);
    EXPECT_EQ(t.dim(), 7);
    EXPECT_NEAR(t.matrix().trace().real(), 1.0, 1e-14);
    EXPECT_EQ(t.population(6), 0.0);
    EXPECT_THROW(t.embedded(3), InvalidDimension);
}

TEST(ThermalState, ZeroTemperatureIsVacuum)
{
    const auto t = thermal_state(0.0, 5);
    EXPECT_DOUBLE_EQ(t.population(0), 1.0);
    EXPECT_DOUBLE_EQ(t.matrix().cwiseAbs().sum(), 1.0);
}

TEST(ThermalState, GeometricLawLargeBasis)
{
    const auto t = thermal_state(4.0, 200);
    EXPECT_NEAR(t.population(0), 0.2, 1e-12);
    EXPECT_NEAR(t.population(1), 0.16, 1e-12);
}

TEST(ThermalState, OddSectorWeight)
{
    EXPECT_NEAR(parity_populations(thermal_state(4.0, 200)).odd, 4.0 / 9.0, 1e-12);
    // Even truncations keep the ratio exactly.
    EXPECT_NEAR(parity_populations(thermal_state(4.0, 30)).odd, 4.0 / 9.0, 1e-14);
}

TEST(ThermalState, NegativeOccupationThrows)
{
    EXPECT_THROW(thermal_state(-0.1, 5), InvalidParameter);
    EXPECT_THROW(default_dimension(-1.0), InvalidParameter);
}

TEST(ThermalState, DefaultDimensionRule)
{
    const double r = thermal_ratio(4.0);
    const int dim = default_dimension(4.0);
    const int n = dim - 5;
    EXPECT_LT(std::pow(r, n), 1e-6);
    EXPECT_GE(std::pow(r, n - 1), 1e-6);
    EXPECT_EQ(dim, 67);
    EXPECT_EQ(default_dimension(0.0), 6);
}

TEST(Dissipator, SinglePhononDecayOfOne)
{
    const auto d = dissipator(make_annihilation(4), DensityMatrix::fock(1, 4));
    Matrix expected = Matrix::Zero(4, 4);
    expected(0, 0) = 2.0;
    expected(1, 1) = -2.0;
    EXPECT_LT((d - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Dissipator, OneIsDarkUnderTwoPhononDecay)
{
    const auto a = make_annihilation(5);
    const auto d = dissipator(a * a, DensityMatrix::fock(1, 5));
    EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dissipator, TracelessAndHermitianForRandomInput)
{
    std::mt19937 rng(7);
    std::normal_distribution<double> g;
    for (int dim = 1; dim <= 16; ++dim) {
        Matrix o(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) o(i, j) = cplx(g(rng), g(rng));
        const Matrix rho = random_hermitian(dim, rng);
        const Matrix d = dissipator(FockOperator(o), rho);
        EXPECT_LT(std::abs(d.trace()), 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff())) << dim;
        EXPECT_LT(hermiticity_error(d), 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff())) << dim;
    }
}

TEST(Dissipator, DimensionMismatchThrows)
{
    EXPECT_THROW(dissipator(make_annihilation(3), DensityMatrix::fock(0, 4)), ShapeError);
}

TEST(Fidelity, Examples)
{
    const auto z = DensityMatrix::fock(0, 3);
    EXPECT_NEAR(uhlmann_fidelity(z, z), 1.0, 1e-12);
    EXPECT_NEAR(uhlmann_fidelity(z, DensityMatrix::fock(1, 3)), 0.0, 1e-12);
    EXPECT_NEAR(uhlmann_fidelity(z, mixture_01(3)), 0.5, 1e-12);
}

TEST(Fidelity, SymmetricAndBounded)
{
    std::mt19937 rng(11);
    for (int k = 0; k < 20; ++k) {
        const int dim = 2 + k % 6;
        const auto a = random_state(dim, rng);
        const auto b = random_state(dim, rng);
        const double fab = uhlmann_fidelity(a, b);
        EXPECT_NEAR(fab, uhlmann_fidelity(b, a), 1e-10);
        EXPECT_GE(fab, 0.0);
        EXPECT_LE(fab, 1.0);
        EXPECT_NEAR(uhlmann_fidelity(a, a), 1.0, 1e-10);
    }
}

TEST(Fidelity, PureStateReducesToOverlap)
{
    std::mt19937 rng(3);
    const auto rho = random_state(4, rng);
    Vector psi(4);
    psi << 0.5, cplx(0.0, 0.5), -0.5, 0.5;
    const auto pure = DensityMatrix::pure(psi);
    EXPECT_NEAR(uhlmann_fidelity(rho, pure), trace_overlap(rho, pure), 1e-10);
}

TEST(Fidelity, RejectsNonPositiveInput)
{
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = 1.1;
    m(1, 1) = -0.1;
    const auto bad = DensityMatrix::unchecked(m);
    EXPECT_THROW(uhlmann_fidelity(bad, DensityMatrix::fock(0, 2)), InvalidState);
    EXPECT_THROW(uhlmann_fidelity(DensityMatrix::fock(0, 2), DensityMatrix::fock(0, 3)), ShapeError);
}

TEST(Parity, Examples)
{
    const auto p0 = parity_populations(DensityMatrix::fock(0, 4));
    EXPECT_EQ(p0.even, 1.0);
    EXPECT_EQ(p0.odd, 0.0);
    const auto p1 = parity_populations(DensityMatrix::fock(1, 4));
    EXPECT_EQ(p1.even, 0.0);
    EXPECT_EQ(p1.odd, 1.0);
    const auto pt = parity_populations(thermal_state(4.0, 200));
    EXPECT_NEAR(pt.even, 5.0 / 9.0, 1e-12);
    EXPECT_NEAR(pt.odd, 4.0 / 9.0, 1e-12);
    EXPECT_NEAR(pt.even + pt.odd, 1.0, 1e-10);
}

TEST(TwoPhononTarget, Examples)
{
    EXPECT_NEAR(uhlmann_fidelity(two_phonon_target(DensityMatrix::fock(0, 5)), DensityMatrix::fock(0, 5)),
                1.0, 1e-12);
    const auto t3 = two_phonon_target(DensityMatrix::fock(3, 5));
    EXPECT_DOUBLE_EQ(t3.population(1), 1.0);
    EXPECT_DOUBLE_EQ(t3.population(0), 0.0);
    const auto tt = two_phonon_target(thermal_state(4.0, 200));
    EXPECT_NEAR(tt.population(0), 5.0 / 9.0, 1e-12);
    EXPECT_NEAR(tt.population(1), 4.0 / 9.0, 1e-12);
    EXPECT_EQ(tt.population(2), 0.0);
}

TEST(TwoPhononTarget, DiscardsCoherences)
{
    Vector psi(3);
    psi << 1.0, 1.0, 0.0;
    const auto t = two_phonon_target(DensityMatrix::pure(psi));
    EXPECT_EQ(t(0, 1), cplx(0.0));
    EXPECT_NEAR(t.population(0), 0.5, 1e-15);
}

TEST(Wigner, OriginValues)
{
    EXPECT_NEAR(wigner_at(DensityMatrix::fock(0, 6), 0.0, 0.0), two_over_pi, 1e-12);
    EXPECT_NEAR(wigner_at(DensityMatrix::fock(1, 6), 0.0, 0.0), -two_over_pi, 1e-12);
    EXPECT_NEAR(wigner_at(mixture_01(6), 0.0, 0.0), 0.0, 1e-12);
}

TEST(Wigner, OriginIsParity)
{
    std::mt19937 rng(5);
    const auto rho = random_state(9, rng);
    double parity = 0.0;
    for (int n = 0; n < 9; ++n) parity += (n % 2 ? -1.0 : 1.0) * rho.population(n);
    EXPECT_NEAR(wigner_at(rho, 0.0, 0.0), two_over_pi * parity, 1e-10);
}

TEST(Wigner, VacuumGaussian)
{
    const auto vac = DensityMatrix::fock(0, 8);
    for (double x : {-1.0, -0.3, 0.4, 1.2}) {
        for (double p : {-0.7, 0.0, 0.9}) {
            EXPECT_NEAR(wigner_at(vac, x, p), two_over_pi * std::exp(-2.0 * (x * x + p * p)), 1e-12);
        }
    }
}

TEST(Wigner, CoherentStateIsDisplacedGaussian)
{
    const cplx beta(0.8, -0.3);
    const int dim = 40;
    Vector psi(dim);
    double log_fact = 0.0;
    for (int n = 0; n < dim; ++n) {
        if (n > 0) log_fact += std::log(static_cast<double>(n));
        psi(n) = std::exp(-0.5 * std::norm(beta) - 0.5 * log_fact) * std::pow(beta, n);
    }
    const auto rho = DensityMatrix::pure(psi);
    for (double x : {0.0, 0.8, 1.5}) {
        for (double p : {-0.3, 0.5}) {
            const double expected = two_over_pi * std::exp(-2.0 * std::norm(cplx(x, p) - beta));
            EXPECT_NEAR(wigner_at(rho, x, p), expected, 1e-10);
        }
    }
}

TEST(Wigner, DisplacementMatchesMatrixExponential)
{
    const int dim = 8;
    const int pad = 60;
    const cplx beta(0.7, 0.4);
    const Matrix a = make_annihilation(pad).matrix();
    const Matrix gen = beta * a.adjoint() - std::conj(beta) * a;
    const Matrix d = gen.exp();
    const Matrix closed = detail::displacement_elements(beta, dim);
    EXPECT_LT((closed - d.topLeftCorner(dim, dim)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Wigner, GridNormalization)
{
    const auto axis = linspace_step(-3.5, 3.5, 0.05);
    ASSERT_EQ(axis.size(), 141u);
    for (int n : {0, 1, 2}) {
        const auto g = wigner(DensityMatrix::fock(n, 8), axis, axis);
        EXPECT_EQ(g.values.rows(), 141);
        EXPECT_EQ(g.values.cols(), 141);
        EXPECT_NEAR(g.integral(), 1.0, 1e-3) << n;
    }
}

TEST(Wigner, EmptyGridThrows)
{
    const std::vector<double> none;
    const std::vector<double> one{0.0};
    EXPECT_THROW(wigner(DensityMatrix::fock(0, 2), none, one), InvalidParameter);
}
