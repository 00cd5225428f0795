#pragma once

// Electromechanical couplings and decoherence rates derived from the circuit
// and membrane parameters. All quantities in SI units (angular frequencies in
// rad/s).

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "twophonon/errors.hpp"

namespace twophonon {

inline constexpr double hbar = 1.054571817e-34;        // J s
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m
inline constexpr double graphene_areal_density = 7.6e-7; // kg/m^2, monolayer

inline constexpr double infinity = std::numeric_limits<double>::infinity();

struct MembraneParams {
    double omega_m = 0.0;
    double mass = 0.0; ///< total membrane mass
    double d0 = 0.0;
    double gamma_m = 0.0;
    double n_bar_m = 0.0;
    double mass_factor = 1.0; ///< effective mode mass = mass_factor * mass

    double effective_mass() const { return mass * mass_factor; }

    void validate() const
    {
        if (!(omega_m > 0.0)) throw InvalidParameter("omega_m must be > 0");
        if (!(mass > 0.0)) throw InvalidParameter("mass must be > 0");
        if (!(d0 > 0.0)) throw InvalidParameter("d0 must be > 0");
        if (!(mass_factor > 0.0)) throw InvalidParameter("mass_factor must be > 0");
        if (!(gamma_m >= 0.0)) throw InvalidParameter("gamma_m must be >= 0");
        if (!(n_bar_m >= 0.0)) throw InvalidParameter("n_bar_m must be >= 0");
    }
};

/// Circuit description. The mode frequencies may be given directly, or derived
/// from the element values via from_elements(); when both are present,
/// validate() checks that they agree.
struct CircuitParams {
    double omega_s = 0.0;
    double omega_a = 0.0;
    double gamma = 0.0; ///< symmetric-mode decay rate
    double R = 0.0;
    double R0 = 0.0;
    std::optional<double> L;
    std::optional<double> L0;
    std::optional<double> C0;
    double delta = 0.0;
    double Z_out = 0.0;
    double n_bar_e = 0.0;

    static double symmetric_frequency(double C0, double L, double L0)
    {
        return 1.0 / std::sqrt(C0 * (L + 2.0 * L0));
    }
    static double asymmetric_frequency(double C0, double L) { return 1.0 / std::sqrt(C0 * L); }

    static CircuitParams from_elements(double C0, double L, double L0, double gamma, double R,
                                       double R0, double delta, double Z_out,
                                       double n_bar_e = 0.0)
    {
        if (!(C0 > 0.0 && L > 0.0 && L0 >= 0.0)) {
            throw InvalidParameter("from_elements: need C0 > 0, L > 0, L0 >= 0");
        }
        CircuitParams c;
        c.C0 = C0;
        c.L = L;
        c.L0 = L0;
        c.omega_s = symmetric_frequency(C0, L, L0);
        c.omega_a = asymmetric_frequency(C0, L);
        c.gamma = gamma;
        c.R = R;
        c.R0 = R0;
        c.delta = delta;
        c.Z_out = Z_out;
        c.n_bar_e = n_bar_e;
        return c;
    }

    bool has_elements() const { return C0 && L && L0; }

    void validate() const
    {
        if (!(omega_s > 0.0)) throw InvalidParameter("omega_s must be > 0");
        if (!(omega_a > 0.0)) throw InvalidParameter("omega_a must be > 0");
        if (!(gamma >= 0.0)) throw InvalidParameter("gamma must be >= 0");
        if (!(R >= 0.0)) throw InvalidParameter("R must be >= 0");
        if (!(R0 >= 0.0)) throw InvalidParameter("R0 must be >= 0");
        if (!(delta >= 0.0)) throw InvalidParameter("delta must be >= 0");
        if (!(Z_out >= 0.0)) throw InvalidParameter("Z_out must be >= 0");
        if (!(n_bar_e >= 0.0)) throw InvalidParameter("n_bar_e must be >= 0");
        if (has_elements()) {
            const double ws = symmetric_frequency(*C0, *L, *L0);
            const double wa = asymmetric_frequency(*C0, *L);
            if (std::abs(omega_s * omega_s / (ws * ws) - 1.0) > 1e-6) {
                throw InvalidParameter("omega_s inconsistent with C0, L, L0");
            }
            if (std::abs(omega_a * omega_a / (wa * wa) - 1.0) > 1e-6) {
                throw InvalidParameter("omega_a inconsistent with C0, L");
            }
        }
    }
};

struct DriveParams {
    std::complex<double> alpha = 0.0; ///< |alpha|^2 = intracavity photon number
    double omega_in = 0.0;            ///< 0 selects omega_s - 2 omega_m
};

/// Two-phonon cooling rate, the linear rates, and the dimensionless ratios.
struct RateSet {
    double Gamma2 = 0.0;
    double Gamma1_r = 0.0;
    double Gamma1_b = 0.0;
    double lambda_r = infinity;
    double lambda_m = infinity;
    double lambda = infinity;
};

struct LambdaSet {
    double lambda_r = infinity;
    double lambda_m = infinity;
    double lambda = infinity;
};

/// (1/a + 1/b)^-1 with infinite arguments dropping out.
inline double harmonic_combination(double a, double b)
{
    if (std::isinf(a)) return b;
    if (std::isinf(b)) return a;
    return 1.0 / (1.0 / a + 1.0 / b);
}

inline void check_topology(const MembraneParams& mem, const CircuitParams& circ)
{
    if (!(mem.omega_m < circ.omega_s && circ.omega_s < circ.omega_a)) {
        throw InvalidParameter("frequencies must satisfy omega_m < omega_s < omega_a");
    }
}

inline double zero_point_motion(const MembraneParams& mem)
{
    if (!(mem.mass > 0.0 && mem.omega_m > 0.0 && mem.mass_factor > 0.0)) {
        throw InvalidParameter("zero_point_motion: mass and omega_m must be > 0");
    }
    return std::sqrt(hbar / (2.0 * mem.effective_mass() * mem.omega_m));
}

/// g2/g1 = pi^2 x_zpm / (8 d0).
inline double coupling_ratio(const MembraneParams& mem)
{
    if (!(mem.d0 > 0.0)) {
        throw InvalidParameter("coupling_ratio: d0 must be > 0");
    }
    return std::numbers::pi * std::numbers::pi * zero_point_motion(mem) / (8.0 * mem.d0);
}

/// lambda_r = (1/2)(g2/(delta g1))^2 (omega_m/gamma)^2,
/// lambda_m = (1/2)(g2/g1)^2 (omega_s/gamma)^2 R0/R.
/// delta = 0 or R = 0 give an infinite ratio for that channel.
inline LambdaSet lambda_from_ratios(double delta, double g_ratio, double omega_m, double gamma,
                                    double omega_s, double R, double R0)
{
    if (!(delta >= 0.0)) throw InvalidParameter("lambda_from_ratios: delta must be >= 0");
    if (!(R >= 0.0)) throw InvalidParameter("lambda_from_ratios: R must be >= 0");
    if (!(g_ratio > 0.0)) throw InvalidParameter("lambda_from_ratios: g2/g1 must be > 0");
    if (!(gamma > 0.0)) throw InvalidParameter("lambda_from_ratios: gamma must be > 0");
    if (!(omega_m > 0.0)) throw InvalidParameter("lambda_from_ratios: omega_m must be > 0");
    if (!(omega_s > 0.0)) throw InvalidParameter("lambda_from_ratios: omega_s must be > 0");
    if (!(R0 > 0.0)) throw InvalidParameter("lambda_from_ratios: R0 must be > 0");
    LambdaSet out;
    const double g2 = g_ratio * g_ratio;
    if (delta > 0.0) {
        const double wm = omega_m / gamma;
        out.lambda_r = 0.5 * g2 * wm * wm / (delta * delta);
    }
    if (R > 0.0) {
        const double ws = omega_s / gamma;
        out.lambda_m = 0.5 * g2 * ws * ws * R0 / R;
    }
    out.lambda = harmonic_combination(out.lambda_r, out.lambda_m);
    return out;
}

/// Closed-form sideband rates: Gamma2 = g2^2|alpha|^2/(4 gamma),
/// Gamma1_r = (delta g1)^2 |alpha|^2 gamma / (2 omega_m^2),
/// Gamma1_b = g1^2 |alpha|^2 gamma R / (2 omega_s^2 R0).
/// The lambda fields come from lambda_from_ratios, so they stay finite at alpha = 0.
/// Appends a message to `warnings` outside the resolved-sideband regime.
inline RateSet compute_rates(const MembraneParams& mem, const CircuitParams& circ,
                             const DriveParams& drive, double g1, double g2,
                             std::vector<std::string>* warnings = nullptr)
{
    mem.validate();
    circ.validate();
    check_topology(mem, circ);
    if (!(circ.gamma > 0.0)) throw InvalidParameter("compute_rates: gamma must be > 0");
    if (!(circ.R0 > 0.0)) throw InvalidParameter("compute_rates: R0 must be > 0");
    if (!(g1 > 0.0)) throw InvalidParameter("compute_rates: g1 must be > 0");
    if (!(g2 >= 0.0)) throw InvalidParameter("compute_rates: g2 must be >= 0");
    if (warnings && !(circ.gamma < mem.omega_m)) {
        warnings->push_back("gamma >= omega_m: outside the resolved-sideband regime, "
                            "closed-form rate formulas are approximate");
    }
    const double a2 = std::norm(drive.alpha);
    RateSet r;
    r.Gamma2 = g2 * g2 * a2 / (4.0 * circ.gamma);
    const double dg1 = circ.delta * g1;
    r.Gamma1_r = dg1 * dg1 * a2 * circ.gamma / (2.0 * mem.omega_m * mem.omega_m);
    r.Gamma1_b = g1 * g1 * a2 * circ.gamma * circ.R /
                 (2.0 * circ.omega_s * circ.omega_s * circ.R0);
    if (g2 > 0.0) {
        const auto l = lambda_from_ratios(circ.delta, g2 / g1, mem.omega_m, circ.gamma,
                                          circ.omega_s, circ.R, circ.R0);
        r.lambda_r = l.lambda_r;
        r.lambda_m = l.lambda_m;
        r.lambda = l.lambda;
    } else {
        r.lambda_r = circ.delta > 0.0 ? 0.0 : infinity;
        r.lambda_m = circ.R > 0.0 ? 0.0 : infinity;
        r.lambda = (circ.delta > 0.0 || circ.R > 0.0) ? 0.0 : infinity;
    }
    return r;
}

/// xi(Omega) = 1 / (omega0^2 - Omega^2 - i gamma Omega).
inline std::complex<double> response_xi(double omega0, double gamma, double Omega)
{
    const std::complex<double> denom(omega0 * omega0 - Omega * Omega, -gamma * Omega);
    if (denom == std::complex<double>(0.0, 0.0)) {
        throw PoleError("response_xi: exact pole at Omega = " + std::to_string(Omega));
    }
    return 1.0 / denom;
}

inline double effective_drive_frequency(const MembraneParams& mem, const CircuitParams& circ,
                                        const DriveParams& drive)
{
    return drive.omega_in > 0.0 ? drive.omega_in : circ.omega_s - 2.0 * mem.omega_m;
}

/// Dissipator coefficients of the Born-Markov master equation including the
/// full electrical response functions, before the sideband approximations.
struct GeneralizedRates {
    double cooling_r = 0.0;  ///< coefficient of L[b], symmetric mode
    double heating_r = 0.0;  ///< coefficient of L[b^+], symmetric mode
    double cooling_b = 0.0;  ///< coefficient of L[b], asymmetric mode
    double heating_b = 0.0;  ///< coefficient of L[b^+], asymmetric mode
    double two_phonon = 0.0; ///< coefficient of L[bb]

    /// Rates in the closed-form convention: L[b] carries Gamma1/2, so Gamma1 is
    /// twice the cooling coefficient; Gamma2 is the L[bb] coefficient itself.
    RateSet rates;

    /// cooling_r / heating_r; approaches 9 deep in the resolved-sideband regime.
    double heating_asymmetry() const
    {
        return heating_r > 0.0 ? cooling_r / heating_r : infinity;
    }
};

inline GeneralizedRates sm_rates(const MembraneParams& mem, const CircuitParams& circ,
                                 const DriveParams& drive, double g1, double g2)
{
    mem.validate();
    circ.validate();
    if (!circ.L) {
        throw InvalidParameter("sm_rates: inductance L is required for gamma_l = R/L");
    }
    if (!(*circ.L > 0.0)) throw InvalidParameter("sm_rates: L must be > 0");
    if (!(circ.gamma > 0.0)) throw InvalidParameter("sm_rates: gamma must be > 0");
    const double w_in = effective_drive_frequency(mem, circ, drive);
    const double gamma_l = circ.R / *circ.L;
    const double a2 = std::norm(drive.alpha);
    const double nbe = circ.n_bar_e;
    const double wm = mem.omega_m;

    const double pref_b = gamma_l * circ.omega_a * circ.omega_a * a2 * g1 * g1;
    const double dg1 = circ.delta * g1;
    const double pref_r = circ.gamma * circ.omega_s * circ.omega_s * a2 * dg1 * dg1;

    GeneralizedRates out;
    for (int s : {-1, 1}) {
        const double occ = nbe + (1.0 + s) / 2.0;
        if (occ == 0.0) {
            continue;
        }
        out.cooling_b += pref_b * occ * std::norm(response_xi(circ.omega_a, gamma_l, wm + s * w_in));
        out.heating_b += pref_b * occ * std::norm(response_xi(circ.omega_a, gamma_l, wm - s * w_in));
        out.cooling_r += pref_r * occ * std::norm(response_xi(circ.omega_s, circ.gamma, wm + s * w_in));
        out.heating_r += pref_r * occ * std::norm(response_xi(circ.omega_s, circ.gamma, wm - s * w_in));
    }
    out.two_phonon = circ.gamma * circ.omega_s * circ.omega_s * a2 * g2 * g2 / 4.0 *
                     std::norm(response_xi(circ.omega_s, circ.gamma, circ.omega_s)) *
                     (nbe + 1.0);

    RateSet& r = out.rates;
    r.Gamma2 = out.two_phonon;
    r.Gamma1_r = 2.0 * out.cooling_r;
    r.Gamma1_b = 2.0 * out.cooling_b;
    r.lambda_r = r.Gamma1_r > 0.0 ? r.Gamma2 / r.Gamma1_r : infinity;
    r.lambda_m = r.Gamma1_b > 0.0 ? r.Gamma2 / r.Gamma1_b : infinity;
    r.lambda = harmonic_combination(r.lambda_r, r.lambda_m);
    return out;
}

/// gamma_t = Z_out / (L0 + L/2).
inline double transmission_decay(const CircuitParams& circ)
{
    if (!circ.L || !circ.L0) {
        throw InvalidParameter("transmission_decay: L and L0 are required");
    }
    return circ.Z_out / (*circ.L0 + *circ.L / 2.0);
}

/// gamma_r = (R0 + R/2) / (L0 + L/2).
inline double resistive_decay(const CircuitParams& circ)
{
    if (!circ.L || !circ.L0) {
        throw InvalidParameter("resistive_decay: L and L0 are required");
    }
    return (circ.R0 + circ.R / 2.0) / (*circ.L0 + *circ.L / 2.0);
}

inline double matched_output_impedance(const CircuitParams& circ) { return circ.R0 + circ.R / 2.0; }

struct IntracavityAmplitude {
    double modulus = 0.0;     ///< |alpha|
    double input_phase = 0.0; ///< phase of A_in that makes alpha real and positive
};

/// alpha = 4 A_in / [(omega_s^2 - omega_in^2 - i gamma_t omega_in)(L + 2 L0)].
inline IntracavityAmplitude intracavity_alpha(double A_in, const CircuitParams& circ,
                                              double omega_in)
{
    if (!circ.L || !circ.L0) {
        throw InvalidParameter("intracavity_alpha: L and L0 are required");
    }
    const double inductance = *circ.L + 2.0 * *circ.L0;
    if (!(inductance > 0.0)) {
        throw InvalidParameter("intracavity_alpha: L + 2 L0 must be > 0");
    }
    const double gamma_t = transmission_decay(circ);
    const std::complex<double> denom(circ.omega_s * circ.omega_s - omega_in * omega_in,
                                     -gamma_t * omega_in);
    if (denom == std::complex<double>(0.0, 0.0)) {
        throw PoleError("intracavity_alpha: resonant drive with gamma_t = 0");
    }
    const std::complex<double> alpha = 4.0 * A_in / (denom * inductance);
    return {std::abs(alpha), std::arg(denom)};
}

/// Parasitic resistance that makes Gamma1_b equal Gamma1_r for the closed-form
/// formulas: R = R0 delta^2 omega_s^2 / omega_m^2.
inline double balanced_parasitic_resistance(const MembraneParams& mem, const CircuitParams& circ)
{
    const double ratio = circ.omega_s / mem.omega_m;
    return circ.R0 * circ.delta * circ.delta * ratio * ratio;
}

/// Complete parameter set for one device.
struct Device {
    MembraneParams membrane;
    CircuitParams circuit;
    DriveParams drive;
    double g1 = 1.0;
    double g2 = 0.0;
};

/// Monolayer graphene membrane of 1 x 0.3 um^2 at (2 pi) 80 MHz, 10 nm above the
/// plate, in a (2 pi) 7 GHz circuit with (2 pi) 150 kHz linewidth. R is chosen so
/// that Gamma1_b = Gamma1_r; omega_a = 10 omega_s and R0 follows from the
/// matched-impedance decay gamma = 2 R0 / (L0 + L/2).
inline Device graphene_reference_device(double delta, double mass_factor = 1.0)
{
    Device d;
    auto& mem = d.membrane;
    mem.omega_m = 2.0 * std::numbers::pi * 80e6;
    const double area = 1e-6 * 0.3e-6;
    mem.mass = graphene_areal_density * area;
    mem.d0 = 10e-9;
    mem.mass_factor = mass_factor;

    const double omega_s = 2.0 * std::numbers::pi * 7e9;
    const double omega_a = 10.0 * omega_s;
    const double gamma = 2.0 * std::numbers::pi * 150e3;
    const double C0 = vacuum_permittivity * area / mem.d0;
    const double L = 1.0 / (C0 * omega_a * omega_a);
    const double L0 = (1.0 / (C0 * omega_s * omega_s) - L) / 2.0;
    const double R0 = gamma * (L + 2.0 * L0) / 4.0;

    d.circuit = CircuitParams::from_elements(C0, L, L0, gamma, 0.0, R0, delta, 0.0);
    d.circuit.R = balanced_parasitic_resistance(mem, d.circuit);
    d.circuit.Z_out = matched_output_impedance(d.circuit);
    d.drive.alpha = 1.0;
    d.g1 = 1.0;
    d.g2 = coupling_ratio(mem) * d.g1;
    return d;
}

} // namespace twophonon
