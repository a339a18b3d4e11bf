#pragma once

// Experiment configuration: one `key = value` per line, `#` starts a comment,
// flat dotted keys. Unknown keys and malformed values are errors.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rcs/attack.hpp"
#include "rcs/data.hpp"
#include "rcs/distance.hpp"
#include "rcs/error.hpp"
#include "rcs/model.hpp"
#include "rcs/objectives.hpp"

namespace rcs {

enum class TrainMethod { acl, dynacl, sat, trades, standard };
enum class SelectMethod { full, rcs, random };
enum class LrSchedule { constant, cosine };

struct ExperimentConfig {
    std::uint64_t seed = 0;

    // data
    std::string data_path;  // empty: generate from the synthetic spec
    SyntheticSpec data;
    double validation_fraction = 0.05;

    // model; input_dim follows the dataset
    EncoderConfig model;

    // training
    TrainMethod method = TrainMethod::acl;
    std::size_t epochs = 100;
    std::size_t batch_size = 512;
    double learning_rate = 0.1;
    LrSchedule schedule = LrSchedule::cosine;
    double momentum = 0.0;
    double temperature = 0.1;
    double omega = 0.0;
    double augment_strength = 1.0;
    std::size_t dynacl_period = 50;
    double dynacl_rate = 2.0 / 3.0;
    double trades_c = 6.0;

    // attack used for training
    AttackConfig attack{5, 2.0 / 255.0, 8.0 / 255.0, std::nullopt, false};

    // selection
    SelectMethod selection = SelectMethod::rcs;
    double fraction = 0.1;
    double selection_lr = 0.01;
    std::size_t selection_steps = 3;
    double warmup_fraction = 0.1;
    long long warmup_epochs = -1;  // -1: derived from warmup_fraction
    std::size_t interval = 20;
    bool last_layer = true;
    std::size_t chunk = 0;  // 0: select over all batches at once
    DistanceKind distance{Distance::kl, 1.0};
    bool rd_random_start = true;
    Branch rd_branch = Branch::adversarial;

    std::string output_dir = "run";

    bool supervised() const {
        return method == TrainMethod::sat || method == TrainMethod::trades || method == TrainMethod::standard;
    }

    std::size_t warmup() const {
        if (warmup_epochs >= 0) return static_cast<std::size_t>(warmup_epochs);
        return static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(epochs) + 1e-9));
    }

    /// Attack used inside selection: T_RCS steps with the travel of the training attack kept.
    AttackConfig selection_attack() const {
        AttackConfig a = attack;
        a.steps = selection_steps;
        a.step_size = rcs_step_size(attack.step_size, attack.steps, selection_steps);
        return a;
    }

    RdSettings rd_settings(std::uint64_t rd_seed) const {
        AttackConfig a = selection_attack();
        a.random_start = rd_random_start;
        return RdSettings{a, distance, rd_branch, rd_seed};
    }

    EncoderConfig encoder(std::size_t input_dim) const {
        EncoderConfig e = model;
        e.input_dim = input_dim;
        return e;
    }

    void validate() const;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] != '-') {
            const unsigned long long u = std::stoull(v, &used);
            if (used == v.size()) return u;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class E>
struct EnumNames {
    std::vector<std::pair<E, std::string>> names;

    std::string name(E e) const {
        for (const auto& [v, n] : names)
            if (v == e) return n;
        return "?";
    }

    E parse(const std::string& key, const std::string& v) const {
        std::string valid;
        for (const auto& [e, n] : names) {
            if (n == v) return e;
            valid += (valid.empty() ? "" : "|") + n;
        }
        throw ConfigError(key + ": expected one of " + valid + ", got '" + v + "'");
    }
};

inline const EnumNames<TrainMethod> kMethods{{{TrainMethod::acl, "acl"},
                                              {TrainMethod::dynacl, "dynacl"},
                                              {TrainMethod::sat, "sat"},
                                              {TrainMethod::trades, "trades"},
                                              {TrainMethod::standard, "standard"}}};
inline const EnumNames<SelectMethod> kSelections{{{SelectMethod::full, "full"}, {SelectMethod::rcs, "rcs"}, {SelectMethod::random, "random"}}};
inline const EnumNames<LrSchedule> kSchedules{{{LrSchedule::constant, "constant"}, {LrSchedule::cosine, "cosine"}}};
inline const EnumNames<NormMode> kNorms{{{NormMode::none, "none"}, {NormMode::per_feature, "per_feature"}, {NormMode::dual_per_feature, "dual_per_feature"}}};
inline const EnumNames<Distance> kDistances{{{Distance::kl, "kl"}, {Distance::js, "js"}}};
inline const EnumNames<Branch> kBranches{{{Branch::natural, "natural"}, {Branch::adversarial, "adversarial"}}};

struct ConfigKey {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline std::string join_widths(const std::vector<std::size_t>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
    return s;
}

inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of widths");
    return out;
}

#define RCS_NUM(name, field) \
    ConfigKey{name, [](const ExperimentConfig& c) { return fmt(c.field); }, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(name, v); }}
#define RCS_UINT(name, field)                                                              \
    ConfigKey{name, [](const ExperimentConfig& c) { return std::to_string(c.field); },     \
              [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(parse_uint(name, v)); }}
#define RCS_BOOL(name, field)                                                               \
    ConfigKey{name, [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }, \
              [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}
#define RCS_ENUM(key_, field, table) \
    ConfigKey{key_, [](const ExperimentConfig& c) { return table.name(c.field); }, [](ExperimentConfig& c, const std::string& v) { c.field = table.parse(key_, v); }}

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        RCS_UINT("seed", seed),
        ConfigKey{"data.path", [](const ExperimentConfig& c) { return c.data_path; },
                  [](ExperimentConfig& c, const std::string& v) { c.data_path = v; }},
        RCS_UINT("data.n", data.n),
        RCS_UINT("data.dim", data.dim),
        RCS_UINT("data.classes", data.classes),
        RCS_NUM("data.separation", data.separation),
        RCS_NUM("data.noise", data.noise),
        RCS_BOOL("data.labels", data.write_labels),
        RCS_UINT("data.seed", data.seed),
        RCS_NUM("data.validation_fraction", validation_fraction),
        ConfigKey{"model.hidden", [](const ExperimentConfig& c) { return join_widths(c.model.hidden); },
                  [](ExperimentConfig& c, const std::string& v) { c.model.hidden = parse_widths("model.hidden", v); }},
        RCS_UINT("model.embedding_dim", model.embedding_dim),
        RCS_UINT("model.projection_dim", model.projection_dim),
        RCS_UINT("model.head_layers", model.head_layers),
        RCS_ENUM("model.norm", model.norm, kNorms),
        RCS_UINT("model.seed", model.seed),
        RCS_ENUM("train.method", method, kMethods),
        RCS_UINT("train.epochs", epochs),
        RCS_UINT("train.batch_size", batch_size),
        RCS_NUM("train.lr", learning_rate),
        RCS_ENUM("train.schedule", schedule, kSchedules),
        RCS_NUM("train.momentum", momentum),
        RCS_NUM("train.temperature", temperature),
        RCS_NUM("train.omega", omega),
        RCS_NUM("train.augment_strength", augment_strength),
        RCS_UINT("dynacl.period", dynacl_period),
        RCS_NUM("dynacl.rate", dynacl_rate),
        RCS_NUM("trades.c", trades_c),
        RCS_NUM("attack.eps", attack.epsilon),
        RCS_NUM("attack.step", attack.step_size),
        RCS_UINT("attack.steps", attack.steps),
        RCS_BOOL("attack.random_start", attack.random_start),
        ConfigKey{"attack.clamp",
                  [](const ExperimentConfig& c) {
                      return c.attack.clamp ? fmt(c.attack.clamp->lo) + "," + fmt(c.attack.clamp->hi) : std::string("none");
                  },
                  [](ExperimentConfig& c, const std::string& v) {
                      if (v == "none") {
                          c.attack.clamp.reset();
                          return;
                      }
                      const auto comma = v.find(',');
                      if (comma == std::string::npos) throw ConfigError("attack.clamp: expected 'none' or 'lo,hi'");
                      c.attack.clamp = Interval{parse_double("attack.clamp", trim(v.substr(0, comma))),
                                                parse_double("attack.clamp", trim(v.substr(comma + 1)))};
                  }},
        RCS_ENUM("selection.method", selection, kSelections),
        RCS_NUM("selection.fraction", fraction),
        RCS_NUM("selection.lr", selection_lr),
        RCS_UINT("selection.steps", selection_steps),
        RCS_NUM("selection.warmup_fraction", warmup_fraction),
        ConfigKey{"selection.warmup_epochs",
                  [](const ExperimentConfig& c) { return c.warmup_epochs < 0 ? std::string("auto") : std::to_string(c.warmup_epochs); },
                  [](ExperimentConfig& c, const std::string& v) {
                      c.warmup_epochs = v == "auto" ? -1 : static_cast<long long>(parse_uint("selection.warmup_epochs", v));
                  }},
        RCS_UINT("selection.interval", interval),
        RCS_BOOL("selection.last_layer", last_layer),
        RCS_UINT("selection.chunk", chunk),
        RCS_ENUM("selection.distance", distance.tag, kDistances),
        RCS_NUM("selection.distance_temperature", distance.temperature),
        RCS_BOOL("selection.rd_random_start", rd_random_start),
        RCS_ENUM("selection.rd_branch", rd_branch, kBranches),
        ConfigKey{"output.dir", [](const ExperimentConfig& c) { return c.output_dir; },
                  [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},
    };
    return keys;
}

#undef RCS_NUM
#undef RCS_UINT
#undef RCS_BOOL
#undef RCS_ENUM

}  // namespace detail

inline std::string valid_config_keys() {
    std::string s;
    for (const auto& k : detail::config_keys()) s += (s.empty() ? "" : ", ") + k.key;
    return s;
}

/// Assigns one key; unknown keys raise ConfigError listing every valid key.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : detail::config_keys())
        if (k.key == key) {
            k.set(cfg, detail::trim(value));
            return;
        }
    throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_config_keys());
}

/// Applies `key = value` lines on top of `base`.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
        set_config_value(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    base.validate();
    return base;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every key in registry order; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : detail::config_keys()) out += k.key + " = " + k.get(cfg) + "\n";
    return out;
}

inline void ExperimentConfig::validate() const {
    model.validate();
    attack.validate();
    distance.validate();
    if (data_path.empty()) data.validate();
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("data.validation_fraction must lie in (0, 1)");
    if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("train.temperature must be positive");
    if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("train.omega must lie in [0, 1]");
    if (!(augment_strength >= 0.0 && augment_strength <= 1.0)) throw ConfigError("train.augment_strength must lie in [0, 1]");
    if (dynacl_period == 0) throw ConfigError("dynacl.period must be >= 1");
    if (!(dynacl_rate >= 0.0 && dynacl_rate <= 1.0)) throw ConfigError("dynacl.rate must lie in [0, 1]");
    if (!(trades_c >= 0.0)) throw ConfigError("trades.c must be non-negative");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("selection.fraction must lie in (0, 1]");
    if (!(selection_lr >= 0.0)) throw ConfigError("selection.lr must be non-negative");
    if (selection_steps == 0) throw ConfigError("selection.steps must be >= 1");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("selection.warmup_fraction must lie in [0, 1]");
    if (warmup() > epochs) throw ConfigError("warmup epochs exceed train.epochs");
    if (interval == 0) throw ConfigError("selection.interval must be >= 1");
    if (supervised() && data_path.empty() && model.projection_dim != data.classes)
        throw ConfigError("supervised training needs model.projection_dim == data.classes");
}

}  // namespace rcs
