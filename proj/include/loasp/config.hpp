#pragma once

// Run-configuration plumbing shared by the CLI verbs. Config files are UTF-8
// lines of `key = value` with `#` starting a comment anywhere on a line; a
// later line overrides an earlier one, and CLI `key=value` overrides win over
// the file. Every key must be in the registry below: an unknown key is a
// configuration error, never silently ignored.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "loasp/harness.hpp"

namespace loasp {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline long parse_long(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(value, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != value.size() || value.empty())
        throw ConfigError("config: key '" + key + "' wants an integer, got '" + value + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    // stoull accepts a leading minus and wraps it, so refuse that up front
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        if (!value.empty() && value[0] != '-') v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != value.size() || value.empty())
        throw ConfigError("config: key '" + key + "' wants an unsigned integer, got '" + value + "'");
    return static_cast<std::uint64_t>(v);
}

inline double parse_double(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != value.size() || value.empty())
        throw ConfigError("config: key '" + key + "' wants a number, got '" + value + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: key '" + key + "' wants true/false, got '" + value + "'");
}

inline std::vector<std::string> split_strings(const std::string& key, const std::string& value) {
    std::vector<std::string> out;
    std::string piece;
    std::stringstream ss(value);
    while (std::getline(ss, piece, ',')) out.push_back(trim(piece));
    if (!value.empty() && value.back() == ',') out.push_back("");
    for (const std::string& p : out)
        if (p.empty())
            throw ConfigError("config: key '" + key + "' has an empty list entry in '" + value + "'");
    if (out.empty())
        throw ConfigError("config: key '" + key + "' wants a comma-separated list, got ''");
    return out;
}

inline std::vector<long> split_longs(const std::string& key, const std::string& value) {
    std::vector<long> out;
    for (const std::string& p : split_strings(key, value)) out.push_back(parse_long(key, p));
    return out;
}

// A knot-domain spec like "-1..1": two doubles joined by "..", low first.
inline std::pair<double, double> parse_range(const std::string& key, const std::string& value) {
    auto dots = value.find("..");
    if (dots == std::string::npos)
        throw ConfigError("config: key '" + key + "' wants 'lo..hi', got '" + value + "'");
    double lo = parse_double(key, trim(value.substr(0, dots)));
    double hi = parse_double(key, trim(value.substr(dots + 2)));
    if (!(lo < hi))
        throw ConfigError("config: key '" + key + "' wants lo < hi, got '" + value + "'");
    return {lo, hi};
}

}  // namespace detail

inline KeyValues parse_config_text(const std::string& text) {
    KeyValues kv;
    std::stringstream ss(text);
    std::string raw;
    long line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::string line = detail::trim(raw);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        std::string key = detail::trim(line.substr(0, eq));
        if (key.empty())
            throw ConfigError("config: line " + std::to_string(line_no) + ": empty key");
        kv[key] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline KeyValues load_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

// CLI overrides share the file syntax minus whitespace freedom: each entry
// must be a single `key=value` token.
inline void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("config: override '" + o + "' is not key=value");
        kv[detail::trim(o.substr(0, eq))] = detail::trim(o.substr(eq + 1));
    }
}

struct VizConfig {
    long block = 0;      // which wrapped block to probe
    double sigma = 1.5;  // Gaussian filter width for the rendered map
    std::string domain = "A";
    long sample = 0;  // seed index of the synthetic image to render
    long seed = 0;    // model init seed when no checkpoint is given
};

struct GridConfig {
    std::vector<long> r_values = {1, 2, 4, 8, 16};
    std::vector<long> p_values = {0, 1, 2, 3, 4};
    std::vector<long> u_values = {3, 4, 5, 6, 7};
};

struct Settings {
    RunConfig run;
    VizConfig viz;
    GridConfig grid;
    std::string checkpoint;  // eval reads it; viz renders fresh when empty
};

// The full key registry. Anything else throws, so a typo in a config file
// fails the run instead of silently training with defaults.
inline Settings settings_from_keys(const KeyValues& kv) {
    Settings s;
    for (const auto& [key, value] : kv) {
        if (key == "run_id") {
            s.run.run_id = value;
        } else if (key == "mode") {
            s.run.mode = value;
        } else if (key == "domains") {
            s.run.domains = detail::split_strings(key, value);
        } else if (key == "held_out") {
            s.run.held_out = value;
        } else if (key == "seeds") {
            s.run.seeds = detail::parse_long(key, value);
        } else if (key == "epochs") {
            s.run.epochs = detail::parse_long(key, value);
        } else if (key == "batch") {
            s.run.batch = detail::parse_long(key, value);
        } else if (key == "train_per_domain") {
            s.run.train_per_domain = detail::parse_long(key, value);
        } else if (key == "test_per_domain") {
            s.run.test_per_domain = detail::parse_long(key, value);
        } else if (key == "data_seed") {
            s.run.data_seed = detail::parse_u64(key, value);
        } else if (key == "lr") {
            s.run.lr = detail::parse_double(key, value);
        } else if (key == "weight_decay") {
            s.run.weight_decay = detail::parse_double(key, value);
        } else if (key == "lr_period") {
            s.run.lr_period = detail::parse_long(key, value);
        } else if (key == "low_rank_tuning") {
            s.run.low_rank_tuning = detail::parse_bool(key, value);
        } else if (key == "low_rank_lr") {
            s.run.low_rank_lr = detail::parse_double(key, value);
        } else if (key == "attach") {
            s.run.attach = detail::parse_bool(key, value);
        } else if (key == "ablation.prior") {
            s.run.prior = value;
        } else if (key == "ablation.fusion") {
            s.run.fusion = value;
        } else if (key == "loasp.r") {
            s.run.block.r = detail::parse_long(key, value);
        } else if (key == "loasp.c_hidden") {
            s.run.block.c_hidden = value == "auto" ? 0 : detail::parse_long(key, value);
            if (s.run.block.c_hidden < 0)
                throw ConfigError("config: key 'loasp.c_hidden' wants 'auto' or a positive width, got '" +
                                  value + "'");
        } else if (key == "dsconv.k") {
            s.run.block.dsconv_k = static_cast<int>(detail::parse_long(key, value));
        } else if (key == "dsconv.merge") {
            if (value != "mean")
                throw ConfigError("config: key 'dsconv.merge' only supports 'mean', got '" + value + "'");
        } else if (key == "spline.p") {
            s.run.block.spline_p = static_cast<int>(detail::parse_long(key, value));
        } else if (key == "spline.u") {
            s.run.block.spline_u = static_cast<int>(detail::parse_long(key, value));
        } else if (key == "spline.domain") {
            auto [lo, hi] = detail::parse_range(key, value);
            s.run.block.spline_lo = lo;
            s.run.block.spline_hi = hi;
        } else if (key == "viz.block") {
            s.viz.block = detail::parse_long(key, value);
        } else if (key == "viz.sigma") {
            s.viz.sigma = detail::parse_double(key, value);
        } else if (key == "checkpoint") {
            s.checkpoint = value;
        } else if (key == "viz.domain") {
            s.viz.domain = value;
        } else if (key == "viz.sample") {
            s.viz.sample = detail::parse_long(key, value);
        } else if (key == "viz.seed") {
            s.viz.seed = detail::parse_long(key, value);
        } else if (key == "grid.r") {
            s.grid.r_values = detail::split_longs(key, value);
        } else if (key == "grid.p") {
            s.grid.p_values = detail::split_longs(key, value);
        } else if (key == "grid.u") {
            s.grid.u_values = detail::split_longs(key, value);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    if (!(s.viz.sigma > 0.0))
        throw ConfigError("config: key 'viz.sigma' wants a positive width, got " +
                          std::to_string(s.viz.sigma));
    if (s.grid.r_values.empty() || s.grid.p_values.empty() || s.grid.u_values.empty())
        throw ConfigError("config: grid sweep lists must be non-empty");
    return s;
}

inline Settings load_settings(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    KeyValues kv;
    if (!config_path.empty()) kv = load_config_file(config_path);
    apply_overrides(kv, overrides);
    return settings_from_keys(kv);
}

}  // namespace loasp
