// twophonon: command-line front end for the rate, cooling, pi-pulse and
// Wigner-function experiments.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twophonon/config.hpp"
#include "twophonon/scenarios.hpp"

namespace tp = twophonon;

namespace {

struct Common {
    std::string config_path;
    std::string out_dir = ".";
    int jobs = 0;
    std::optional<int> dim;
    std::optional<std::string> dt;
    std::optional<std::string> weight;
    std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config_path, "key = value config file");
    app->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
    app->add_option("--jobs", c.jobs, "worker threads (0 = available cores)")->capture_default_str();
    app->add_option("--dim", c.dim, "Fock-space truncation");
    app->add_option("--dt", c.dt, "RK4 step in units of 1/Gamma2 (default automatic)");
    app->add_option("--two-phonon-weight", c.weight, "weight w of the w*Gamma2*L[bb] term");
    app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
}

/// File keys first, then --set, then dedicated flags; later entries win.
tp::Config resolve_config(const Common& c,
                          const std::vector<std::pair<std::string, std::optional<std::string>>>& flags)
{
    tp::Config cfg;
    if (!c.config_path.empty()) cfg = tp::Config::load(c.config_path);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw tp::ConfigError(s, "--set expects key=value, got '" + s + "'");
        const std::string key(tp::detail::trim(std::string_view(s).substr(0, eq)));
        cfg.set(key, std::string(tp::detail::trim(std::string_view(s).substr(eq + 1))));
    }
    if (c.dim) cfg.set("dim", std::to_string(*c.dim));
    if (c.dt) cfg.set("dt", *c.dt);
    if (c.weight) cfg.set("two_phonon_weight", *c.weight);
    for (const auto& [key, value] : flags) {
        if (value) cfg.set(key, *value);
    }
    return cfg;
}

std::vector<double> parse_list(const std::string& text, const std::string& key)
{
    tp::Config c;
    c.set("lambda", text);
    try {
        return c.get_list("lambda");
    } catch (const tp::ConfigError& e) {
        throw tp::ConfigError(key, "'" + key + "': cannot parse '" + text + "' as a list of numbers");
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Two-phonon cooling of a membrane: rates, cooling, pi pulses, Wigner functions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("twophonon ") + tp::tool_version);

    Common common;

    auto* rates = app.add_subcommand("rates", "closed-form and generalized rates for a device config");
    add_common(rates, common);
    tp::DeltaSweep sweep;
    rates->add_option("--delta-min", sweep.delta_min, "sweep lower delta")->capture_default_str();
    rates->add_option("--delta-max", sweep.delta_max, "sweep upper delta")->capture_default_str();
    rates->add_option("--delta-steps", sweep.steps, "log-spaced sweep points (0 = no sweep)")
        ->capture_default_str();
    rates->add_flag("--balance", sweep.balance, "choose R so that Gamma1_b = Gamma1_r at every delta");

    std::optional<std::string> lambda_flag, ratio_flag, nbar_flag, taumax_flag, phase_flag;

    auto* cool = app.add_subcommand("cool", "two-phonon cooling of a thermal state");
    add_common(cool, common);
    cool->add_option("--lambda", lambda_flag, "comma-separated lambda values (inf allowed)");
    cool->add_option("--ratio", ratio_flag, "Gamma1_b / Gamma1_r");
    cool->add_option("--n-bar", nbar_flag, "initial thermal occupation");
    cool->add_option("--tau-max", taumax_flag, "largest tau = Gamma2 t");
    double tau_min = 1e-2;
    int tau_points = 400;
    cool->add_option("--tau-min", tau_min, "smallest nonzero tau")->capture_default_str();
    cool->add_option("--tau-points", tau_points, "log-spaced tau points")->capture_default_str();

    auto* pipulse = app.add_subcommand("pipulse", "pi-pulse fidelity over the Bloch sphere");
    add_common(pipulse, common);
    pipulse->add_option("--lambda", lambda_flag, "comma-separated lambda grid");
    pipulse->add_option("--ratio", ratio_flag, "Gamma1_b / Gamma1_r");
    pipulse->add_option("--phase", phase_flag, "drive phase arg(Omega)");
    double lambda_lo = 1.0, lambda_hi = 1e5;
    int lambda_points = 21;
    pipulse->add_option("--lambda-min", lambda_lo, "log grid lower end")->capture_default_str();
    pipulse->add_option("--lambda-max", lambda_hi, "log grid upper end")->capture_default_str();
    pipulse->add_option("--lambda-points", lambda_points, "log grid points")->capture_default_str();
    std::string full_list;
    pipulse->add_option("--full", full_list, "lambda values that also get full-model columns");
    std::string model = "reduced";
    pipulse->add_option("--model", model, "reduced, or full for full-model columns at every lambda")
        ->check(CLI::IsMember({"reduced", "full"}))
        ->capture_default_str();
    tp::PipulseOptions pip_defaults;
    int theta_steps = pip_defaults.theta_steps, phi_steps = pip_defaults.phi_steps;
    pipulse->add_option("--theta-steps", theta_steps, "polar grid points")->capture_default_str();
    pipulse->add_option("--phi-steps", phi_steps, "azimuthal grid points")->capture_default_str();
    bool no_states = false;
    pipulse->add_flag("--no-states", no_states, "skip the per-state CSV");

    auto* wig = app.add_subcommand("wigner", "Wigner function after a pi pulse from |0>");
    add_common(wig, common);
    wig->add_option("--lambda", lambda_flag, "lambda (inf allowed)");
    wig->add_option("--ratio", ratio_flag, "Gamma1_b / Gamma1_r");
    wig->add_option("--phase", phase_flag, "drive phase arg(Omega)");
    tp::WignerOptions wig_defaults;
    double grid_min = wig_defaults.grid_min, grid_max = wig_defaults.grid_max,
           grid_step = wig_defaults.grid_step;
    wig->add_option("--grid-min", grid_min, "lower x and p")->capture_default_str();
    wig->add_option("--grid-max", grid_max, "upper x and p")->capture_default_str();
    wig->add_option("--grid-step", grid_step, "grid spacing")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::vector<std::pair<std::string, std::optional<std::string>>> flags = {
        {"lambda", lambda_flag},
        {"ratio_b_over_r", ratio_flag},
        {"n_bar", nbar_flag},
        {"tau_max", taumax_flag},
        {"drive_phase", phase_flag}};

    tp::CommonOptions run;
    run.out_dir = common.out_dir;
    run.jobs = common.jobs;

    try {
        const tp::Config cfg = resolve_config(common, flags);
        if (rates->parsed()) {
            tp::RatesOptions o;
            o.config = cfg;
            o.sweep = sweep;
            tp::run_rates(o, run, std::cout);
        } else if (cool->parsed()) {
            auto o = tp::CoolOptions::from_config(cfg);
            o.tau_min = tau_min;
            o.tau_points = tau_points;
            tp::run_cool(o, run, std::cout);
        } else if (pipulse->parsed()) {
            auto o = tp::PipulseOptions::from_config(cfg);
            if (!cfg.has("lambda")) {
                o.lambdas = tp::detail::log_grid(lambda_lo, lambda_hi, lambda_points);
            }
            if (!full_list.empty()) o.full_lambdas = parse_list(full_list, "full");
            if (model == "full") o.full_lambdas = o.lambdas;
            o.theta_steps = theta_steps;
            o.phi_steps = phi_steps;
            o.write_states = !no_states;
            tp::run_pipulse(o, run, std::cout);
        } else if (wig->parsed()) {
            auto o = tp::WignerOptions::from_config(cfg);
            o.grid_min = grid_min;
            o.grid_max = grid_max;
            o.grid_step = grid_step;
            tp::run_wigner(o, run, std::cout);
        }
    } catch (const tp::ConfigError& e) {
        std::cerr << "config error";
        if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
        std::cerr << ": " << e.what() << '\n';
        return 2;
    } catch (const tp::IntegrationError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const tp::ConvergenceError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const tp::PoleError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const tp::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
