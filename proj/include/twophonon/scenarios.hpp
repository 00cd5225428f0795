#pragma once

// The four numerical experiments behind the command-line tool. Each runner
// writes CSV datasets and a manifest.json into the output directory.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "twophonon/circuit_model.hpp"
#include "twophonon/config.hpp"
#include "twophonon/dynamics.hpp"
#include "twophonon/errors.hpp"
#include "twophonon/quantum_core.hpp"

namespace twophonon {

inline constexpr const char* tool_version = "1.0.0";

/// Convergence deltas above this make a run fail.
inline constexpr double convergence_threshold = 1e-6;

class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Calls f(i) for i in [0, n) on up to `jobs` threads (0 = hardware cores).
/// The exception of the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f)
{
    unsigned workers = jobs > 0 ? static_cast<unsigned>(jobs) : std::thread::hardware_concurrency();
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// ---------------------------------------------------------------------------
// Output

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
        : out_(path, std::ios::binary)
    {
        if (!out_) throw Error("cannot write " + path.string());
        row(header);
    }

    void row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    void row(const std::vector<double>& cells)
    {
        std::vector<std::string> s;
        s.reserve(cells.size());
        for (double c : cells) s.push_back(format_double(c));
        row(s);
    }

private:
    std::ofstream out_;
};

struct ConvergenceCheck {
    std::string name;
    double delta = 0.0;
    double threshold = convergence_threshold;

    bool passed() const { return delta < threshold; }
};

struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> parameters;
    std::string version = tool_version;
    double duration_seconds = 0.0;
    std::vector<std::string> outputs;
    std::vector<ConvergenceCheck> convergence;
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();

    bool converged() const
    {
        return std::all_of(convergence.begin(), convergence.end(),
                           [](const auto& c) { return c.passed(); });
    }

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["version"] = version;
        auto params = nlohmann::ordered_json::object();
        for (const auto& [k, v] : parameters) params[k] = v;
        j["parameters"] = params;
        j["duration_seconds"] = duration_seconds;
        j["outputs"] = outputs;
        auto conv = nlohmann::ordered_json::array();
        for (const auto& c : convergence) {
            conv.push_back({{"check", c.name},
                            {"delta", c.delta},
                            {"threshold", c.threshold},
                            {"passed", c.passed()}});
        }
        j["convergence"] = conv;
        j["converged"] = converged();
        j["summary"] = summary;
        return j;
    }

    void write(const std::filesystem::path& out_dir) const
    {
        std::ofstream out(out_dir / "manifest.json", std::ios::binary);
        if (!out) throw Error("cannot write manifest.json in " + out_dir.string());
        out << to_json().dump(2) << '\n';
    }
};

struct CommonOptions {
    std::filesystem::path out_dir = ".";
    int jobs = 0;
};

namespace detail {

class RunScope {
public:
    RunScope(RunManifest& m, const CommonOptions& common)
        : manifest_(m), common_(common), start_(std::chrono::steady_clock::now())
    {
        std::filesystem::create_directories(common.out_dir);
    }

    std::filesystem::path output(const std::string& name)
    {
        manifest_.outputs.push_back(name);
        return common_.out_dir / name;
    }

    /// Writes the manifest and fails on any convergence check above threshold.
    void finish()
    {
        manifest_.duration_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        manifest_.write(common_.out_dir);
        for (const auto& c : manifest_.convergence) {
            if (!c.passed()) {
                throw ConvergenceError("convergence check '" + c.name + "' failed: delta " +
                                       format_double(c.delta) + " >= " +
                                       format_double(c.threshold));
            }
        }
    }

private:
    RunManifest& manifest_;
    const CommonOptions& common_;
    std::chrono::steady_clock::time_point start_;
};

inline std::string join(const std::vector<double>& xs)
{
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += format_double(xs[i]);
    }
    return out;
}

inline void require_lambdas(const std::vector<double>& lambdas, const char* key_name)
{
    if (lambdas.empty()) throw ConfigError(key_name, std::string("'") + key_name + "' is empty");
    for (double l : lambdas) {
        if (!(l > 0.0)) {
            throw ConfigError(key_name, std::string("'") + key_name + "' values must be > 0");
        }
    }
}

inline std::vector<double> log_grid(double lo, double hi, int points)
{
    if (!(lo > 0.0 && hi >= lo && points >= 1)) {
        throw InvalidParameter("log grid needs 0 < lo <= hi and points >= 1");
    }
    std::vector<double> g;
    for (int i = 0; i < points; ++i) {
        const double f = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
        g.push_back(std::pow(10.0, std::log10(lo) + f * (std::log10(hi) - std::log10(lo))));
    }
    return g;
}

} // namespace detail

// ---------------------------------------------------------------------------
// rates

struct DeltaSweep {
    double delta_min = 1e-3;
    double delta_max = 1e-2;
    int steps = 0; ///< 0 disables the sweep
    bool balance = false; ///< set R so that Gamma1_b = Gamma1_r at every delta
};

struct RatesOptions {
    Config config;
    DeltaSweep sweep;
};

struct RatesRow {
    std::string quantity;
    double closed_form = 0.0;
    std::optional<double> sm;
};

inline double relative_deviation(double a, double b)
{
    if (a == b) return 0.0; // covers equal infinities
    if (std::isinf(a) || std::isinf(b)) return infinity;
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

inline std::vector<RatesRow> rates_table(const Device& d, std::vector<std::string>* warnings)
{
    const RateSet mt = compute_rates(d.membrane, d.circuit, d.drive, d.g1, d.g2, warnings);
    std::optional<RateSet> sm;
    if (d.circuit.L) {
        sm = sm_rates(d.membrane, d.circuit, d.drive, d.g1, d.g2).rates;
    } else if (warnings) {
        warnings->push_back("L not given: generalized rates skipped");
    }
    auto opt = [&](double RateSet::*f) -> std::optional<double> {
        if (sm) return (*sm).*f;
        return std::nullopt;
    };
    return {{"Gamma2", mt.Gamma2, opt(&RateSet::Gamma2)},
            {"Gamma1_r", mt.Gamma1_r, opt(&RateSet::Gamma1_r)},
            {"Gamma1_b", mt.Gamma1_b, opt(&RateSet::Gamma1_b)},
            {"lambda_r", mt.lambda_r, opt(&RateSet::lambda_r)},
            {"lambda_m", mt.lambda_m, opt(&RateSet::lambda_m)},
            {"lambda", mt.lambda, opt(&RateSet::lambda)}};
}

inline RunManifest run_rates(const RatesOptions& opts, const CommonOptions& common,
                             std::ostream& log)
{
    RunManifest manifest;
    manifest.command = "rates";
    detail::RunScope scope(manifest, common);
    const Device device = device_from_config(opts.config);
    const Config resolved = device_to_config(device);
    for (const auto& [k, v] : resolved.entries()) manifest.parameters.emplace_back(k, v);

    std::vector<std::string> warnings;
    const auto table = rates_table(device, &warnings);
    for (const auto& w : warnings) log << "warning: " << w << '\n';

    char line[160];
    std::snprintf(line, sizeof line, "%-10s %24s %24s %14s\n", "quantity", "closed_form", "generalized",
                  "rel_dev");
    log << line;
    {
        CsvWriter csv(scope.output("rates.csv"),
                      {"quantity", "closed_form", "generalized", "relative_deviation"});
        for (const auto& r : table) {
            const std::string sm = r.sm ? format_double(*r.sm) : "";
            const std::string dev = r.sm ? format_double(relative_deviation(r.closed_form, *r.sm)) : "";
            csv.row(std::vector<std::string>{r.quantity, format_double(r.closed_form), sm, dev});
            std::snprintf(line, sizeof line, "%-10s %24.12g %24s %14s\n", r.quantity.c_str(),
                          r.closed_form, r.sm ? format_double(*r.sm).substr(0, 24).c_str() : "-",
                          r.sm ? format_double(relative_deviation(r.closed_form, *r.sm)).substr(0, 14).c_str() : "-");
            log << line;
            manifest.summary[r.quantity] = {{"closed_form", format_double(r.closed_form)},
                                            {"generalized", sm}};
        }
    }
    manifest.summary["g2_over_g1"] = device.g2 / device.g1;
    if (device.circuit.L) {
        const auto gr = sm_rates(device.membrane, device.circuit, device.drive, device.g1, device.g2);
        manifest.summary["heating_asymmetry"] = format_double(gr.heating_asymmetry());
        log << "heating asymmetry (cooling_r/heating_r): " << format_double(gr.heating_asymmetry())
            << '\n';
    }

    if (opts.sweep.steps > 0) {
        const auto& sw = opts.sweep;
        if (!(sw.delta_min > 0.0 && sw.delta_max >= sw.delta_min)) {
            throw ConfigError("delta", "delta sweep needs 0 < delta_min <= delta_max");
        }
        manifest.parameters.emplace_back("sweep.delta_min", format_double(sw.delta_min));
        manifest.parameters.emplace_back("sweep.delta_max", format_double(sw.delta_max));
        manifest.parameters.emplace_back("sweep.steps", std::to_string(sw.steps));
        manifest.parameters.emplace_back("sweep.balance", sw.balance ? "true" : "false");
        CsvWriter csv(scope.output("rates_sweep.csv"),
                      {"delta", "R", "Gamma2", "Gamma1_r", "Gamma1_b", "lambda_r", "lambda_m",
                       "lambda", "generalized_lambda"});
        const auto deltas = detail::log_grid(sw.delta_min, sw.delta_max, sw.steps);
        std::vector<double> lambdas;
        for (double delta : deltas) {
            Device d = device;
            d.circuit.delta = delta;
            if (sw.balance) d.circuit.R = balanced_parasitic_resistance(d.membrane, d.circuit);
            const RateSet mt = compute_rates(d.membrane, d.circuit, d.drive, d.g1, d.g2);
            const double sml = d.circuit.L
                                   ? sm_rates(d.membrane, d.circuit, d.drive, d.g1, d.g2).rates.lambda
                                   : std::nan("");
            csv.row(std::vector<double>{delta, d.circuit.R, mt.Gamma2, mt.Gamma1_r, mt.Gamma1_b,
                                        mt.lambda_r, mt.lambda_m, mt.lambda, sml});
            lambdas.push_back(mt.lambda);
        }
        const double span = lambdas.front() / lambdas.back();
        manifest.summary["lambda_at_delta_min"] = format_double(lambdas.front());
        manifest.summary["lambda_at_delta_max"] = format_double(lambdas.back());
        manifest.summary["lambda_span"] = format_double(span);
        log << "lambda(delta_min) = " << format_double(lambdas.front())
            << ", lambda(delta_max) = " << format_double(lambdas.back())
            << ", span = " << format_double(span) << '\n';
    }
    scope.finish();
    return manifest;
}

// ---------------------------------------------------------------------------
// cool

struct CoolOptions {
    std::vector<double> lambdas{34.0, 340.0, 3400.0};
    double ratio_b_over_r = 1.0;
    double n_bar = 4.0;
    double tau_min = 1e-2;
    double tau_max = 1e2;
    int tau_points = 400;
    int dim = 0;
    double dt = 0.0;
    double two_phonon_weight = 0.5;

    static CoolOptions from_config(const Config& cfg)
    {
        CoolOptions o;
        if (cfg.has("lambda")) o.lambdas = cfg.get_list("lambda");
        o.ratio_b_over_r = cfg.get_double("ratio_b_over_r", o.ratio_b_over_r);
        o.n_bar = cfg.get_double("n_bar", o.n_bar);
        o.tau_max = cfg.get_double("tau_max", o.tau_max);
        o.dim = cfg.get_int("dim", o.dim);
        o.dt = cfg.get_double("dt", o.dt);
        o.two_phonon_weight = cfg.get_double("two_phonon_weight", o.two_phonon_weight);
        return o;
    }

    int resolved_dim() const { return dim > 0 ? dim : default_dimension(n_bar); }

    void validate() const
    {
        detail::require_lambdas(lambdas, "lambda");
        if (!(ratio_b_over_r >= 0.0)) throw ConfigError("ratio_b_over_r", "'ratio_b_over_r' must be >= 0");
        if (!(n_bar >= 0.0)) throw ConfigError("n_bar", "'n_bar' must be >= 0");
        if (!(tau_max > tau_min && tau_min > 0.0)) throw ConfigError("tau_max", "'tau_max' must exceed tau_min > 0");
        if (tau_points < 2) throw ConfigError("tau_points", "'tau_points' must be >= 2");
        if (dim < 0) throw ConfigError("dim", "'dim' must be >= 1");
        if (dt < 0.0) throw ConfigError("dt", "'dt' must be > 0");
        if (!(two_phonon_weight >= 0.0)) throw ConfigError("two_phonon_weight", "'two_phonon_weight' must be >= 0");
    }

    std::vector<std::pair<std::string, std::string>> params() const
    {
        return {{"lambda", detail::join(lambdas)},
                {"ratio_b_over_r", format_double(ratio_b_over_r)},
                {"n_bar", format_double(n_bar)},
                {"tau_min", format_double(tau_min)},
                {"tau_max", format_double(tau_max)},
                {"tau_points", std::to_string(tau_points)},
                {"dim", std::to_string(resolved_dim())},
                {"dt", dt > 0.0 ? format_double(dt) : "auto"},
                {"two_phonon_weight", format_double(two_phonon_weight)}};
    }
};

struct CoolResult {
    CoolingCurve curve;
    CoolingMinimum minimum;
    double dt_delta = 0.0;
    double dim_delta = 0.0;
};

/// Infidelity at tau for a modified run, integrated from tau = 0.
inline double cooling_infidelity_at(const SimulationConfig& cfg, const DensityMatrix& initial,
                                    const DensityMatrix& target, double tau)
{
    const std::array<double, 1> t{tau};
    auto traj = evolve_full(cfg, initial, t);
    return 1.0 - uhlmann_fidelity(traj.states.front(), target);
}

inline CoolResult cool_one(double lambda, const CoolOptions& o)
{
    CoolResult r;
    auto grid = default_tau_grid(o.tau_min, o.tau_max, o.tau_points);
    CoolingOptions co;
    co.dim = o.resolved_dim();
    co.dt = o.dt;
    co.two_phonon_weight = o.two_phonon_weight;
    r.curve = cooling_infidelity_curve(lambda, o.ratio_b_over_r, o.n_bar, grid, co);
    r.minimum = refine_minimum(r.curve);
    const double tau = r.minimum.tau_min;
    if (tau > 0.0) {
        SimulationConfig half = r.curve.config;
        half.dt = r.curve.config.resolved_dt() / 2.0;
        r.dt_delta = std::abs(cooling_infidelity_at(half, r.curve.initial, r.curve.target, tau) -
                              r.minimum.infidelity_min);
        SimulationConfig bigger = r.curve.config;
        bigger.dim += 5;
        bigger.dt = r.curve.config.resolved_dt();
        const auto init = r.curve.initial.embedded(bigger.dim);
        const auto target = r.curve.target.embedded(bigger.dim);
        r.dim_delta = std::abs(cooling_infidelity_at(bigger, init, target, tau) -
                               r.minimum.infidelity_min);
    }
    return r;
}

inline RunManifest run_cool(const CoolOptions& opts, const CommonOptions& common, std::ostream& log)
{
    opts.validate();
    RunManifest manifest;
    manifest.command = "cool";
    manifest.parameters = opts.params();
    detail::RunScope scope(manifest, common);

    std::vector<CoolResult> results(opts.lambdas.size());
    parallel_for(results.size(), common.jobs,
                 [&](std::size_t i) { results[i] = cool_one(opts.lambdas[i], opts); });

    {
        CsvWriter csv(scope.output("cool_curves.csv"),
                      {"tau", "lambda", "infidelity", "infidelity_trace_overlap"});
        for (const auto& r : results) {
            for (const auto& p : r.curve.points) {
                csv.row(std::vector<double>{p.tau, r.curve.lambda, p.infidelity, p.overlap_infidelity});
            }
        }
    }
    {
        CsvWriter csv(scope.output("cool_minima.csv"),
                      {"lambda", "tau_min", "infidelity_min", "n_bar"});
        for (const auto& r : results) {
            csv.row(std::vector<double>{r.curve.lambda, r.minimum.tau_min, r.minimum.infidelity_min,
                                        opts.n_bar});
        }
    }
    EvolutionStats stats;
    auto minima = nlohmann::ordered_json::array();
    for (const auto& r : results) {
        const std::string tag = "lambda=" + format_double(r.curve.lambda);
        manifest.convergence.push_back({"step_halving " + tag, r.dt_delta});
        manifest.convergence.push_back({"dim_plus_5 " + tag, r.dim_delta});
        stats.merge(r.curve.stats);
        minima.push_back({{"lambda", format_double(r.curve.lambda)},
                          {"tau_min", format_double(r.minimum.tau_min)},
                          {"infidelity_min", format_double(r.minimum.infidelity_min)},
                          {"final_infidelity", format_double(r.curve.points.back().infidelity)}});
        log << "lambda " << format_double(r.curve.lambda) << ": min infidelity "
            << format_double(r.minimum.infidelity_min) << " at tau " << format_double(r.minimum.tau_min)
            << '\n';
    }
    manifest.summary["minima"] = minima;
    manifest.summary["max_trace_drift"] = stats.max_trace_drift;
    manifest.summary["min_eigenvalue"] = stats.min_eigenvalue;
    scope.finish();
    return manifest;
}

// ---------------------------------------------------------------------------
// pipulse

struct PipulseOptions {
    std::vector<double> lambdas = detail::log_grid(1.0, 1e5, 21);
    std::vector<double> full_lambdas;
    double ratio_b_over_r = 1.0;
    int theta_steps = 24;
    int phi_steps = 24;
    int dim = 0;
    double dt = 0.0;
    double phase = 0.0;
    double two_phonon_weight = 0.5;
    bool write_states = true;

    static PipulseOptions from_config(const Config& cfg)
    {
        PipulseOptions o;
        if (cfg.has("lambda")) o.lambdas = cfg.get_list("lambda");
        o.ratio_b_over_r = cfg.get_double("ratio_b_over_r", o.ratio_b_over_r);
        o.dim = cfg.get_int("dim", o.dim);
        o.dt = cfg.get_double("dt", o.dt);
        o.phase = cfg.get_double("drive_phase", o.phase);
        o.two_phonon_weight = cfg.get_double("two_phonon_weight", o.two_phonon_weight);
        return o;
    }

    PulseSettings settings(double lambda) const
    {
        PulseSettings s;
        s.lambda = lambda;
        s.ratio_b_over_r = ratio_b_over_r;
        s.phase = phase;
        s.dim = dim;
        s.dt = dt;
        s.two_phonon_weight = two_phonon_weight;
        return s;
    }

    void validate() const
    {
        detail::require_lambdas(lambdas, "lambda");
        for (double l : full_lambdas) {
            if (!(l > 0.0)) throw ConfigError("full", "'full' values must be > 0");
        }
        if (!(ratio_b_over_r >= 0.0)) throw ConfigError("ratio_b_over_r", "'ratio_b_over_r' must be >= 0");
        if (theta_steps < 1) throw ConfigError("theta_steps", "'theta_steps' must be >= 1");
        if (phi_steps < 1) throw ConfigError("phi_steps", "'phi_steps' must be >= 1");
        if (dim < 0) throw ConfigError("dim", "'dim' must be >= 3");
        if (dim > 0 && dim < 3) throw ConfigError("dim", "'dim' must be >= 3");
        if (dt < 0.0) throw ConfigError("dt", "'dt' must be > 0");
        if (!(two_phonon_weight >= 0.0)) throw ConfigError("two_phonon_weight", "'two_phonon_weight' must be >= 0");
    }

    std::vector<std::pair<std::string, std::string>> params() const
    {
        return {{"lambda", detail::join(lambdas)},
                {"full", detail::join(full_lambdas)},
                {"ratio_b_over_r", format_double(ratio_b_over_r)},
                {"theta_steps", std::to_string(theta_steps)},
                {"phi_steps", std::to_string(phi_steps)},
                {"dim", std::to_string(settings(1.0).resolved_dim())},
                {"dt", dt > 0.0 ? format_double(dt) : "auto"},
                {"drive_phase", format_double(phase)},
                {"two_phonon_weight", format_double(two_phonon_weight)}};
    }
};

struct PipulseRow {
    SweepRow reduced;
    std::optional<SweepRow> full;
    double dF_max = 0.0;
};

inline RunManifest run_pipulse(const PipulseOptions& opts, const CommonOptions& common,
                               std::ostream& log)
{
    opts.validate();
    RunManifest manifest;
    manifest.command = "pipulse";
    manifest.parameters = opts.params();
    detail::RunScope scope(manifest, common);

    std::vector<double> lambdas = opts.lambdas;
    lambdas.insert(lambdas.end(), opts.full_lambdas.begin(), opts.full_lambdas.end());
    std::sort(lambdas.begin(), lambdas.end());
    lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());
    auto is_full = [&](double l) {
        return std::find(opts.full_lambdas.begin(), opts.full_lambdas.end(), l) !=
               opts.full_lambdas.end();
    };

    const auto sample = bloch_grid(opts.theta_steps, opts.phi_steps);
    std::vector<PipulseRow> rows(lambdas.size());
    // Full-model points are dispatched as separate tasks; they dominate the cost.
    std::vector<std::pair<std::size_t, bool>> tasks;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        tasks.emplace_back(i, false);
        if (is_full(lambdas[i])) tasks.emplace_back(i, true);
    }
    parallel_for(tasks.size(), common.jobs, [&](std::size_t t) {
        const auto [i, full] = tasks[t];
        const auto s = opts.settings(lambdas[i]);
        if (full) {
            rows[i].full = pi_pulse_sweep_point(s, sample, PulseModel::full);
        } else {
            rows[i].reduced = pi_pulse_sweep_point(s, sample, PulseModel::reduced);
        }
    });

    // Convergence: step halving for the reduced model at the ends of the grid,
    // step halving and dim + 5 for every full-model point, on a 10-point sample.
    const auto probe = bloch_spiral(10);
    std::vector<double> conv_lambdas{lambdas.front()};
    if (lambdas.back() != lambdas.front()) conv_lambdas.push_back(lambdas.back());
    struct Probe {
        std::string name;
        double delta = 0.0;
    };
    std::vector<std::pair<double, int>> conv_tasks;
    for (double l : conv_lambdas) conv_tasks.emplace_back(l, 0);
    for (double l : opts.full_lambdas) {
        conv_tasks.emplace_back(l, 1);
        conv_tasks.emplace_back(l, 2);
    }
    std::vector<Probe> probes(conv_tasks.size());
    parallel_for(conv_tasks.size(), common.jobs, [&](std::size_t t) {
        const auto [l, kind] = conv_tasks[t];
        auto base = opts.settings(l);
        const std::string tag = " lambda=" + format_double(l);
        if (kind == 0) {
            auto half = base;
            const double dt0 = base.dt > 0.0 ? base.dt
                                             : 1e-3 / std::max({1.0, std::abs(base.drive()),
                                                                base.rates().Gamma1_r + base.rates().Gamma1_b});
            half.dt = dt0 / 2.0;
            base.dt = dt0;
            double d = 0.0;
            for (const auto& pt : probe) {
                const auto q = QubitState::from_bloch(pt.theta, pt.phi);
                d = std::max(d, std::abs(pi_pulse(q, base, PulseModel::reduced).fidelity -
                                         pi_pulse(q, half, PulseModel::reduced).fidelity));
            }
            probes[t] = {"step_halving reduced" + tag, d};
            return;
        }
        const PulseChannel ref(base);
        auto other = base;
        if (kind == 1) {
            other.dt = ref.config().resolved_dt() / 2.0;
        } else {
            other.dim = ref.config().dim + 5;
            other.dt = ref.config().resolved_dt();
        }
        const PulseChannel alt(other);
        double d = 0.0;
        for (const auto& pt : probe) {
            const auto q = QubitState::from_bloch(pt.theta, pt.phi);
            d = std::max(d, std::abs(ref.fidelity(q) - alt.fidelity(q)));
        }
        probes[t] = {(kind == 1 ? "step_halving full" : "dim_plus_5 full") + tag, d};
    });
    for (const auto& p : probes) manifest.convergence.push_back({p.name, p.delta});

    for (auto& r : rows) {
        if (!r.full) continue;
        for (std::size_t k = 0; k < r.reduced.states.size(); ++k) {
            r.dF_max = std::max(r.dF_max, std::abs(r.full->states[k].fidelity -
                                                   r.reduced.states[k].fidelity));
        }
    }

    {
        CsvWriter csv(scope.output("pipulse.csv"),
                      {"lambda", "F_min", "F_max", "F_mean", "F_asymptotic_min",
                       "F_asymptotic_max", "F_full_min", "F_full_max", "F_full_mean", "dF_max"});
        for (const auto& r : rows) {
            const auto& f = r.reduced.fidelity;
            const auto& a = r.reduced.asymptotic;
            std::vector<std::string> cells{format_double(r.reduced.lambda), format_double(f.min),
                                           format_double(f.max),           format_double(f.mean),
                                           format_double(a.min),           format_double(a.max)};
            if (r.full) {
                cells.push_back(format_double(r.full->fidelity.min));
                cells.push_back(format_double(r.full->fidelity.max));
                cells.push_back(format_double(r.full->fidelity.mean));
                cells.push_back(format_double(r.dF_max));
            } else {
                cells.insert(cells.end(), 4, "");
            }
            csv.row(cells);
        }
    }
    if (opts.write_states) {
        CsvWriter csv(scope.output("pipulse_states.csv"),
                      {"lambda", "theta", "phi", "F_reduced", "F_asymptotic", "F_full"});
        for (const auto& r : rows) {
            for (std::size_t k = 0; k < r.reduced.states.size(); ++k) {
                const auto& s = r.reduced.states[k];
                csv.row(std::vector<std::string>{
                    format_double(r.reduced.lambda), format_double(s.point.theta),
                    format_double(s.point.phi), format_double(s.fidelity),
                    format_double(s.asymptotic),
                    r.full ? format_double(r.full->states[k].fidelity) : ""});
            }
        }
    }

    EvolutionStats stats;
    double bloch = -infinity;
    for (const auto& r : rows) {
        if (r.full) stats.merge(r.full->stats);
        bloch = std::max(bloch, r.reduced.max_bloch_excess);
        log << "lambda " << format_double(r.reduced.lambda) << ": F in ["
            << format_double(r.reduced.fidelity.min) << ", " << format_double(r.reduced.fidelity.max)
            << "], mean " << format_double(r.reduced.fidelity.mean);
        if (r.full) log << "; full mean " << format_double(r.full->fidelity.mean);
        log << '\n';
    }
    manifest.summary["max_bloch_excess"] = bloch;
    if (!opts.full_lambdas.empty()) {
        manifest.summary["max_trace_drift"] = stats.max_trace_drift;
        manifest.summary["min_eigenvalue"] = stats.min_eigenvalue;
    }
    scope.finish();
    return manifest;
}

// ---------------------------------------------------------------------------
// wigner

struct WignerOptions {
    double lambda = 20.0;
    double ratio_b_over_r = 1.0;
    double grid_min = -3.5;
    double grid_max = 3.5;
    double grid_step = 0.05;
    int dim = 0;
    double dt = 0.0;
    double phase = 0.0;
    double two_phonon_weight = 0.5;

    static WignerOptions from_config(const Config& cfg)
    {
        WignerOptions o;
        if (cfg.has("lambda")) {
            const auto l = cfg.get_list("lambda");
            if (l.size() != 1) throw ConfigError("lambda", "'lambda' must be a single value for wigner");
            o.lambda = l.front();
        }
        o.ratio_b_over_r = cfg.get_double("ratio_b_over_r", o.ratio_b_over_r);
        o.dim = cfg.get_int("dim", o.dim);
        o.dt = cfg.get_double("dt", o.dt);
        o.phase = cfg.get_double("drive_phase", o.phase);
        o.two_phonon_weight = cfg.get_double("two_phonon_weight", o.two_phonon_weight);
        return o;
    }

    PulseSettings settings() const
    {
        PulseSettings s;
        s.lambda = lambda;
        s.ratio_b_over_r = ratio_b_over_r;
        s.phase = phase;
        s.dim = dim;
        s.dt = dt;
        s.two_phonon_weight = two_phonon_weight;
        return s;
    }

    void validate() const
    {
        if (!(lambda > 0.0)) throw ConfigError("lambda", "'lambda' must be > 0");
        if (!(ratio_b_over_r >= 0.0)) throw ConfigError("ratio_b_over_r", "'ratio_b_over_r' must be >= 0");
        if (!(grid_max > grid_min)) throw ConfigError("grid_max", "'grid_max' must exceed grid_min");
        if (!(grid_step > 0.0)) throw ConfigError("grid_step", "'grid_step' must be > 0");
        if (dim < 0 || (dim > 0 && dim < 3)) throw ConfigError("dim", "'dim' must be >= 3");
        if (dt < 0.0) throw ConfigError("dt", "'dt' must be > 0");
        if (!(two_phonon_weight >= 0.0)) throw ConfigError("two_phonon_weight", "'two_phonon_weight' must be >= 0");
    }

    std::vector<std::pair<std::string, std::string>> params() const
    {
        return {{"lambda", format_double(lambda)},
                {"ratio_b_over_r", format_double(ratio_b_over_r)},
                {"grid_min", format_double(grid_min)},
                {"grid_max", format_double(grid_max)},
                {"grid_step", format_double(grid_step)},
                {"dim", std::to_string(settings().resolved_dim())},
                {"dt", dt > 0.0 ? format_double(dt) : "auto"},
                {"drive_phase", format_double(phase)},
                {"drive", format_double(std::abs(settings().drive()))},
                {"two_phonon_weight", format_double(two_phonon_weight)}};
    }
};

inline RunManifest run_wigner(const WignerOptions& opts, const CommonOptions& common,
                              std::ostream& log)
{
    opts.validate();
    RunManifest manifest;
    manifest.command = "wigner";
    manifest.parameters = opts.params();
    detail::RunScope scope(manifest, common);

    const auto axis = linspace_step(opts.grid_min, opts.grid_max, opts.grid_step);
    const auto settings = opts.settings();
    const auto res = pi_pulse_wigner(settings, axis, axis);
    const double w00 = wigner_at(res.pulse.final_state, 0.0, 0.0);

    {
        CsvWriter csv(scope.output("wigner.csv"), {"x", "p", "W"});
        for (std::size_t i = 0; i < res.grid.x_values.size(); ++i) {
            for (std::size_t j = 0; j < res.grid.p_values.size(); ++j) {
                csv.row(std::vector<double>{res.grid.x_values[i], res.grid.p_values[j],
                                            res.grid.at(i, j)});
            }
        }
    }

    std::array<PulseSettings, 2> variants{settings, settings};
    const double dt0 = settings.config().resolved_dt();
    variants[0].dt = dt0 / 2.0;
    variants[1].dim = settings.resolved_dim() + 5;
    variants[1].dt = dt0;
    std::array<PulseResult, 2> alt;
    parallel_for(2, common.jobs, [&](std::size_t k) {
        alt[k] = pi_pulse(QubitState(1.0, 0.0), variants[k], PulseModel::full);
    });
    manifest.convergence.push_back({"step_halving", std::abs(alt[0].fidelity - res.pulse.fidelity)});
    manifest.convergence.push_back({"dim_plus_5", std::abs(alt[1].fidelity - res.pulse.fidelity)});

    manifest.summary["W00"] = w00;
    manifest.summary["W_min"] = res.grid.min();
    manifest.summary["W_max"] = res.grid.max();
    manifest.summary["grid_integral"] = res.grid.integral();
    manifest.summary["pulse_fidelity"] = res.pulse.fidelity;
    manifest.summary["W00_dim_plus_5_delta"] =
        std::abs(wigner_at(alt[1].final_state, 0.0, 0.0) - w00);
    log << "W(0,0) = " << format_double(w00) << ", min W = " << format_double(res.grid.min())
        << ", integral = " << format_double(res.grid.integral())
        << ", pulse fidelity = " << format_double(res.pulse.fidelity) << '\n';
    scope.finish();
    return manifest;
}

} // namespace twophonon
