#pragma once

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "actjepa/evalkit/probe.hpp"
#include "actjepa/trainer/trainer.hpp"

namespace actjepa::cli {

/// Everything a run needs besides input paths.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    ProbeConfig probe;
};

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed fields are parsed as size_t");

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline void parse_into(const std::string& key, const std::string& v, std::size_t& out) {
    std::size_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    out = x;
}

inline void parse_into(const std::string& key, const std::string& v, double& out) {
    std::istringstream is(v);
    is.imbue(std::locale::classic());
    double x = 0;
    if (!(is >> x) || !is.eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    out = x;
}

inline void parse_into(const std::string& key, const std::string& v, bool& out) {
    if (v == "true" || v == "1") out = true;
    else if (v == "false" || v == "0") out = false;
    else throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline void parse_into(const std::string& key, const std::string& v, ModelKind& out) {
    const auto k = kind_from_name(v);
    if (!k) throw ConfigError(key + ": expected actjepa, act or rbc, got '" + v + "'");
    out = *k;
}

inline void parse_into(const std::string& key, const std::string& v, ActionLoss& out) {
    if (v == "l1") out = ActionLoss::l1;
    else if (v == "l2") out = ActionLoss::l2;
    else throw ConfigError(key + ": expected l1 or l2, got '" + v + "'");
}

inline std::string show(std::size_t v) { return std::to_string(v); }
inline std::string show(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string show(bool v) { return v ? "true" : "false"; }
inline std::string show(ModelKind k) { return std::string(kind_name(k)); }
inline std::string show(ActionLoss l) { return l == ActionLoss::l1 ? "l1" : "l2"; }

}  // namespace detail

struct Field {
    std::string section, name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
    std::string key() const { return section + "." + name; }
};

template <class S, class V>
Field field(std::string section, std::string name, S RunConfig::*sec, V S::*mem) {
    const std::string key = section + "." + name;
    return {std::move(section), std::move(name),
            [=](RunConfig& c, const std::string& v) { detail::parse_into(key, v, c.*sec.*mem); },
            [=](const RunConfig& c) { return detail::show(c.*sec.*mem); }};
}

/// Every accepted key, in echo order.
inline const std::vector<Field>& config_fields() {
    static const std::vector<Field> fields = [] {
        using M = ModelConfig;
        using T = TrainConfig;
        using P = ProbeConfig;
        const auto m = &RunConfig::model;
        const auto t = &RunConfig::train;
        const auto p = &RunConfig::probe;
        return std::vector<Field>{
            field("model", "d_model", m, &M::d_model),
            field("model", "n_heads", m, &M::n_heads),
            field("model", "encoder_layers", m, &M::encoder_layers),
            field("model", "predictor_layers", m, &M::predictor_layers),
            field("model", "decoder_layers", m, &M::decoder_layers),
            field("model", "ffn_hidden", m, &M::ffn_hidden),
            field("model", "chunk", m, &M::chunk),
            field("model", "patch", m, &M::patch),
            field("model", "image_height", m, &M::image_height),
            field("model", "image_width", m, &M::image_width),
            field("model", "proprio_dim", m, &M::proprio_dim),
            field("model", "action_dim", m, &M::action_dim),
            field("model", "task_count", m, &M::task_count),
            field("model", "history", m, &M::history),
            field("model", "ema_momentum", m, &M::ema_momentum),
            field("model", "ema_final", m, &M::ema_final),
            field("model", "ema_schedule", m, &M::ema_schedule),
            field("train", "kind", t, &T::kind),
            field("train", "epochs", t, &T::epochs),
            field("train", "batch_size", t, &T::batch_size),
            field("train", "steps_per_epoch", t, &T::steps_per_epoch),
            field("train", "lr", t, &T::lr),
            field("train", "weight_decay", t, &T::weight_decay),
            field("train", "seed", t, &T::seed),
            field("train", "act_loss", t, &T::act_loss),
            field("train", "freeze_encoder", t, &T::freeze_encoder),
            field("train", "log_every", t, &T::log_every),
            field("train", "select_every", t, &T::select_every),
            field("train", "select_seeds", t, &T::select_seeds),
            field("train", "select_seed_base", t, &T::select_seed_base),
            field("probe", "epochs", p, &P::epochs),
            field("probe", "batch_size", p, &P::batch_size),
            field("probe", "lr", p, &P::lr),
            field("probe", "weight_decay", p, &P::weight_decay),
            field("probe", "holdout_fraction", p, &P::holdout_fraction),
        };
    }();
    return fields;
}

/// Sets "section.key" to `value`; unknown keys are errors.
inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : config_fields()) {
        if (f.key() == key) {
            f.set(c, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// "section.key=value" as given on the command line.
inline void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    set_key(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Flat `key = value` lines under `[section]` headers; '#' and ';' start
/// comments. Applied on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    std::string line, section;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        const auto cut = line.find_first_of("#;");
        if (cut != std::string::npos) line.resize(cut);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto where = "line " + std::to_string(no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "train" && section != "probe") throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of a section");
        try {
            set_key(base, section + "." + detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return base;
}

/// Every key with its effective value; parse_config(resolved_text(c)) == c.
inline std::string resolved_text(const RunConfig& c) {
    std::ostringstream os;
    std::string section;
    for (const auto& f : config_fields()) {
        if (f.section != section) {
            os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
            section = f.section;
        }
        os << f.name << " = " << f.get(c) << "\n";
    }
    return os.str();
}

}  // namespace actjepa::cli
