#pragma once

// Flat "key = value" configuration files (SI units, '#' comments) and their
// mapping onto the circuit-model parameter records.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "twophonon/circuit_model.hpp"
#include "twophonon/errors.hpp"

namespace twophonon {

inline const std::vector<std::string>& known_config_keys()
{
    static const std::vector<std::string> keys = {
        "omega_m", "omega_s", "omega_a", "gamma", "gamma_m", "delta", "R", "R0", "L", "L0",
        "C0", "Z_out", "d0", "mass", "mass_factor", "alpha", "A_in", "n_bar_e", "n_bar_m",
        "lambda", "ratio_b_over_r", "n_bar", "dim", "dt", "tau_max",
        // extensions
        "g1", "g2", "omega_in", "two_phonon_weight", "drive_phase"};
    return keys;
}

/// 17 significant digits; "inf", "-inf" and "nan" for non-finite values.
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_number(std::string_view tok, double& out)
{
    tok = trim(tok);
    if (tok == "pi") {
        out = std::numbers::pi;
        return true;
    }
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    if (tok.empty()) return false;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

} // namespace detail

/// Parses a real value: a number, "inf", or a product such as "2*pi*80e6".
inline double parse_real(std::string_view text, const std::string& key)
{
    double value = 1.0;
    std::size_t start = 0;
    const std::string_view s = detail::trim(text);
    if (s.empty()) throw ConfigError(key, "key '" + key + "': empty value");
    while (true) {
        const auto star = s.find('*', start);
        const auto tok = s.substr(start, star == std::string_view::npos ? s.npos : star - start);
        double factor = 0.0;
        if (!detail::parse_number(tok, factor)) {
            throw ConfigError(key, "key '" + key + "': cannot parse '" + std::string(s) +
                                       "' as a number");
        }
        value *= factor;
        if (star == std::string_view::npos) break;
        start = star + 1;
    }
    return value;
}

class Config {
public:
    static bool is_known(const std::string& key)
    {
        const auto& k = known_config_keys();
        return std::find(k.begin(), k.end(), key) != k.end();
    }

    static Config parse(std::string_view text, const std::string& source = "<config>")
    {
        Config cfg;
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            auto nl = text.find('\n', pos);
            if (nl == std::string_view::npos) nl = text.size();
            std::string_view line = text.substr(pos, nl - pos);
            pos = nl + 1;
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string_view::npos) {
                line = line.substr(0, hash);
            }
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ConfigError("", source + ":" + std::to_string(line_no) +
                                          ": expected 'key = value'");
            }
            const std::string key(detail::trim(line.substr(0, eq)));
            const std::string value(detail::trim(line.substr(eq + 1)));
            if (key.empty()) {
                throw ConfigError("", source + ":" + std::to_string(line_no) + ": empty key");
            }
            if (cfg.has(key)) {
                throw ConfigError(key, source + ":" + std::to_string(line_no) +
                                           ": duplicate key '" + key + "'");
            }
            cfg.set(key, value);
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("", "cannot open config file " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    void set(const std::string& key, const std::string& value)
    {
        if (!is_known(key)) throw ConfigError(key, "unknown config key '" + key + "'");
        values_[key] = value;
    }

    void set(const std::string& key, double value) { set(key, format_double(value)); }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string& raw(const std::string& key) const
    {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            throw ConfigError(key, "missing required key '" + key + "'");
        }
        return it->second;
    }

    double get_double(const std::string& key) const { return parse_real(raw(key), key); }

    double get_double(const std::string& key, double fallback) const
    {
        return has(key) ? get_double(key) : fallback;
    }

    int get_int(const std::string& key, int fallback) const
    {
        if (!has(key)) return fallback;
        const std::string& s = raw(key);
        int out = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            throw ConfigError(key, "key '" + key + "': expected an integer, got '" + s + "'");
        }
        return out;
    }

    /// Comma-separated list of reals.
    std::vector<double> get_list(const std::string& key) const
    {
        std::vector<double> out;
        std::string_view s = raw(key);
        std::size_t start = 0;
        while (true) {
            const auto comma = s.find(',', start);
            out.push_back(parse_real(
                s.substr(start, comma == std::string_view::npos ? s.npos : comma - start), key));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return out;
    }

    /// Keys present, sorted.
    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

    /// Values of `other` replace or extend this config.
    void merge(const Config& other)
    {
        for (const auto& [k, v] : other.values_) values_[k] = v;
    }

    std::string to_text() const
    {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

namespace detail {

template <class F>
auto keyed(const std::string& key, F&& f)
{
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(key, "key '" + key + "': " + e.what());
    }
}

} // namespace detail

/// Builds a Device from config keys. The circuit is taken from C0, L, L0 when
/// all three are present (omega_s/omega_a, if also given, must agree), and from
/// omega_s, omega_a otherwise. g2 defaults to the membrane's g2/g1 ratio times g1.
inline Device device_from_config(const Config& cfg)
{
    Device d;
    auto& mem = d.membrane;
    mem.omega_m = cfg.get_double("omega_m");
    mem.mass = cfg.get_double("mass");
    mem.d0 = cfg.get_double("d0");
    mem.mass_factor = cfg.get_double("mass_factor", 1.0);
    mem.gamma_m = cfg.get_double("gamma_m", 0.0);
    mem.n_bar_m = cfg.get_double("n_bar_m", 0.0);

    auto& c = d.circuit;
    const bool elements = cfg.has("C0") || cfg.has("L") || cfg.has("L0");
    if (elements) {
        c = detail::keyed("C0", [&] {
            return CircuitParams::from_elements(cfg.get_double("C0"), cfg.get_double("L"),
                                                cfg.get_double("L0"), 0.0, 0.0, 0.0, 0.0, 0.0);
        });
        if (cfg.has("omega_s")) c.omega_s = cfg.get_double("omega_s");
        if (cfg.has("omega_a")) c.omega_a = cfg.get_double("omega_a");
    } else {
        c.omega_s = cfg.get_double("omega_s");
        c.omega_a = cfg.get_double("omega_a");
    }
    c.gamma = cfg.get_double("gamma");
    c.R0 = cfg.get_double("R0");
    c.R = cfg.get_double("R", 0.0);
    c.delta = cfg.get_double("delta", 0.0);
    c.Z_out = cfg.get_double("Z_out", 0.0);
    c.n_bar_e = cfg.get_double("n_bar_e", 0.0);

    d.drive.omega_in = cfg.get_double("omega_in", 0.0);
    if (cfg.has("alpha") && cfg.has("A_in")) {
        throw ConfigError("A_in", "give either 'alpha' or 'A_in', not both");
    }
    if (cfg.has("A_in")) {
        d.drive.alpha = detail::keyed("A_in", [&] {
            return intracavity_alpha(cfg.get_double("A_in"), c,
                                     effective_drive_frequency(mem, c, d.drive))
                .modulus;
        });
    } else {
        d.drive.alpha = cfg.get_double("alpha", 1.0);
    }

    // Validation messages start with the offending field name.
    auto validated = [](const auto& record) {
        try {
            record.validate();
        } catch (const Error& e) {
            const std::string msg = e.what();
            throw ConfigError(msg.substr(0, msg.find(' ')), msg);
        }
    };
    validated(mem);
    validated(c);
    d.g1 = cfg.get_double("g1", 1.0);
    if (!(d.g1 > 0.0)) throw ConfigError("g1", "key 'g1' must be > 0");
    d.g2 = cfg.has("g2") ? cfg.get_double("g2") : coupling_ratio(mem) * d.g1;
    if (!(d.g2 >= 0.0)) throw ConfigError("g2", "key 'g2' must be >= 0");
    return d;
}

inline Config device_to_config(const Device& d)
{
    Config cfg;
    const auto& mem = d.membrane;
    cfg.set("omega_m", mem.omega_m);
    cfg.set("mass", mem.mass);
    cfg.set("d0", mem.d0);
    cfg.set("mass_factor", mem.mass_factor);
    cfg.set("gamma_m", mem.gamma_m);
    cfg.set("n_bar_m", mem.n_bar_m);
    const auto& c = d.circuit;
    cfg.set("omega_s", c.omega_s);
    cfg.set("omega_a", c.omega_a);
    if (c.C0) cfg.set("C0", *c.C0);
    if (c.L) cfg.set("L", *c.L);
    if (c.L0) cfg.set("L0", *c.L0);
    cfg.set("gamma", c.gamma);
    cfg.set("R", c.R);
    cfg.set("R0", c.R0);
    cfg.set("delta", c.delta);
    cfg.set("Z_out", c.Z_out);
    cfg.set("n_bar_e", c.n_bar_e);
    cfg.set("alpha", std::abs(d.drive.alpha));
    if (d.drive.omega_in > 0.0) cfg.set("omega_in", d.drive.omega_in);
    cfg.set("g1", d.g1);
    cfg.set("g2", d.g2);
    return cfg;
}

} // namespace twophonon
