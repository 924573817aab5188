#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "rfgap/dataset.hpp"
#include "rfgap/rng.hpp"

namespace rfgap {

enum class NoiseProfile { homoscedastic, heteroscedastic };

/// Stand-in for real tabular data: a smooth nonlinear signal over uniform
/// numeric features plus categorical offsets, with either flat noise or noise
/// whose scale grows with the first numeric feature (so target uncertainty
/// differs by feature-space region).
struct SyntheticConfig {
    std::size_t n_rows = 1000;
    std::size_t n_numeric = 3;
    std::size_t n_categorical = 0;
    NoiseProfile noise = NoiseProfile::homoscedastic;
    double sigma = 0.5;      // homoscedastic scale
    double sigma_low = 0.1;  // heteroscedastic scale at feature0 = 0
    double sigma_high = 1.0; // heteroscedastic scale at feature0 = 1
    std::uint64_t seed = 0;

    void validate() const {
        if (n_rows == 0) throw std::invalid_argument("n_rows must be positive");
        if (n_numeric == 0) throw std::invalid_argument("n_numeric must be positive");
        if (noise == NoiseProfile::homoscedastic) {
            if (sigma < 0) throw std::invalid_argument("sigma must be nonnegative");
        } else {
            if (sigma_low < 0) throw std::invalid_argument("sigma_low must be nonnegative");
            if (!(sigma_low < sigma_high))
                throw std::invalid_argument("heteroscedastic noise requires sigma_low < sigma_high");
        }
    }
};

namespace detail {

inline constexpr std::size_t kSyntheticCategories = 4;

inline double synthetic_numeric_term(std::size_t j, double x) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    switch (j % 3) {
        case 0: return 3.0 * std::sin(two_pi * x);
        case 1: return 8.0 * (x - 0.5) * (x - 0.5);
        default: return 2.0 * x;
    }
}

inline double synthetic_categorical_offset(std::size_t code) {
    constexpr double offsets[kSyntheticCategories] = {-1.2, -0.4, 0.4, 1.2};
    return offsets[code];
}

} // namespace detail

/// Deterministic in the config: feature draws and noise draws come from
/// independent streams of the same seed, so two configs differing only in the
/// noise profile produce identical feature matrices (and a zero-noise run
/// yields the noiseless generating function for the same rows).
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng feature_rng(cfg.seed, 1);
    Rng noise_rng(cfg.seed, 2);

    const std::size_t P = cfg.n_numeric + cfg.n_categorical;
    Dataset ds;
    ds.features = Matrix(cfg.n_rows, P);
    ds.target.resize(cfg.n_rows);

    for (std::size_t j = 0; j < cfg.n_numeric; ++j) {
        ColumnSpec spec;
        spec.name = "num" + std::to_string(j);
        ds.schema.columns.push_back(std::move(spec));
    }
    for (std::size_t j = 0; j < cfg.n_categorical; ++j) {
        ColumnSpec spec;
        spec.name = "cat" + std::to_string(j);
        spec.kind = ColumnKind::categorical;
        for (std::size_t c = 0; c < detail::kSyntheticCategories; ++c)
            spec.categories.push_back("lvl" + std::to_string(c));
        ds.schema.columns.push_back(std::move(spec));
    }
    ds.schema.target.name = "target";

    for (std::size_t i = 0; i < cfg.n_rows; ++i) {
        double signal = 0.0;
        for (std::size_t j = 0; j < cfg.n_numeric; ++j) {
            const double x = feature_rng.next_unit();
            ds.features(i, j) = x;
            signal += detail::synthetic_numeric_term(j, x);
        }
        if (cfg.n_numeric >= 2)
            signal += 2.0 * ds.features(i, 0) * ds.features(i, 1);
        for (std::size_t j = 0; j < cfg.n_categorical; ++j) {
            const auto code = feature_rng.next_below(detail::kSyntheticCategories);
            ds.features(i, cfg.n_numeric + j) = static_cast<double>(code);
            signal += detail::synthetic_categorical_offset(code);
        }
        const double scale =
            cfg.noise == NoiseProfile::homoscedastic
                ? cfg.sigma
                : cfg.sigma_low + (cfg.sigma_high - cfg.sigma_low) * ds.features(i, 0);
        ds.target[i] = signal + scale * noise_rng.next_normal();
    }
    return ds;
}

/// key=value config file ('#' starts a comment). Keys: n_rows, n_numeric,
/// n_categorical, noise (homoscedastic|heteroscedastic), sigma, sigma_low,
/// sigma_high, seed.
inline void apply_synthetic_kv(SyntheticConfig& cfg, const std::string& key,
                               const std::string& value) {
    auto as_u64 = [&](const std::string& v) {
        std::size_t pos = 0;
        const unsigned long long parsed = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("bad integer for " + key + ": " + v);
        return parsed;
    };
    auto as_double = [&](const std::string& v) {
        std::size_t pos = 0;
        const double parsed = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("bad number for " + key + ": " + v);
        return parsed;
    };
    if (key == "n_rows") cfg.n_rows = as_u64(value);
    else if (key == "n_numeric") cfg.n_numeric = as_u64(value);
    else if (key == "n_categorical") cfg.n_categorical = as_u64(value);
    else if (key == "seed") cfg.seed = as_u64(value);
    else if (key == "sigma") cfg.sigma = as_double(value);
    else if (key == "sigma_low") cfg.sigma_low = as_double(value);
    else if (key == "sigma_high") cfg.sigma_high = as_double(value);
    else if (key == "noise") {
        if (value == "homoscedastic") cfg.noise = NoiseProfile::homoscedastic;
        else if (value == "heteroscedastic") cfg.noise = NoiseProfile::heteroscedastic;
        else throw std::invalid_argument("unknown noise profile: " + value);
    } else {
        throw std::invalid_argument("unknown synthetic config key: " + key);
    }
}

inline SyntheticConfig parse_synthetic_config(std::istream& in) {
    SyntheticConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto text = detail::trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("expected key=value, got: " + std::string(text));
        apply_synthetic_kv(cfg, std::string(detail::trim(text.substr(0, eq))),
                           std::string(detail::trim(text.substr(eq + 1))));
    }
    return cfg;
}

inline SyntheticConfig load_synthetic_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synthetic config: " + path);
    return parse_synthetic_config(in);
}

} // namespace rfgap
