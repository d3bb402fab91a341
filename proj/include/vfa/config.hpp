#pragma once

// Plain-text run configuration:
//
//   # comment
//   synth.M = 200
//   train.lr_decay_iters = 2000, 3000
//   eval.similarity = cosine
//
// Keys are dotted (synth.*, train.*, eval.*). Unknown keys, duplicate keys and
// malformed values are errors.

#include "vfa/errors.hpp"
#include "vfa/eval.hpp"
#include "vfa/synthdata.hpp"
#include "vfa/trainer.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace vfa {

struct RunConfig {
    SynthConfig synth;
    TrainConfig train;
    EvalConfig eval;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

inline double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> to_uint_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_uint(key, item));
    }
    return out;
}

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
    Setter set;
    Getter get;
};

template <typename T>
Field uint_field(T RunConfig::*section, std::size_t T::*member) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_uint(k, v); },
            [=](const RunConfig& c) { return std::to_string((c.*section).*member); }};
}

template <typename T>
Field seed_field(T RunConfig::*section, std::uint64_t T::*member) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_uint(k, v); },
            [=](const RunConfig& c) { return std::to_string((c.*section).*member); }};
}

template <typename T>
Field real_field(T RunConfig::*section, double T::*member) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_real(k, v); },
            [=](const RunConfig& c) { return fmt_real((c.*section).*member); }};
}

inline Field train_bool(bool TrainConfig::*member) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.train.*member = to_bool(k, v); },
            [=](const RunConfig& c) { return std::string(c.train.*member ? "true" : "false"); }};
}

inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        using R = RunConfig;
        f["synth.M"] = uint_field(&R::synth, &SynthConfig::M);
        f["synth.L"] = uint_field(&R::synth, &SynthConfig::L);
        f["synth.d_in"] = uint_field(&R::synth, &SynthConfig::d_in);
        f["synth.samples_per_identity"] = uint_field(&R::synth, &SynthConfig::samples_per_identity);
        f["synth.noise_easy"] = real_field(&R::synth, &SynthConfig::noise_easy);
        f["synth.noise_hard"] = real_field(&R::synth, &SynthConfig::noise_hard);
        f["synth.frac_hard"] = real_field(&R::synth, &SynthConfig::frac_hard);
        f["synth.frac_personalized"] = real_field(&R::synth, &SynthConfig::frac_personalized);
        f["synth.seed"] = seed_field(&R::synth, &SynthConfig::seed);

        f["train.N"] = uint_field(&R::train, &TrainConfig::N);
        f["train.m"] = real_field(&R::train, &TrainConfig::m);
        f["train.beta"] = real_field(&R::train, &TrainConfig::beta);
        f["train.alpha"] = real_field(&R::train, &TrainConfig::alpha);
        f["train.k"] = uint_field(&R::train, &TrainConfig::k);
        f["train.T_warm"] = uint_field(&R::train, &TrainConfig::T_warm);
        f["train.T_update"] = uint_field(&R::train, &TrainConfig::T_update);
        f["train.T_max"] = uint_field(&R::train, &TrainConfig::T_max);
        f["train.R_keep"] = real_field(&R::train, &TrainConfig::R_keep);
        f["train.lr"] = real_field(&R::train, &TrainConfig::lr);
        f["train.lr_decay_iters"] = {
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_decay_iters = to_uint_list(k, v); },
            [](const RunConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.train.lr_decay_iters.size(); ++i)
                    out += (i ? ", " : "") + std::to_string(c.train.lr_decay_iters[i]);
                return out;
            }};
        f["train.momentum"] = real_field(&R::train, &TrainConfig::momentum);
        f["train.weight_decay"] = real_field(&R::train, &TrainConfig::weight_decay);
        f["train.init_fraction"] = real_field(&R::train, &TrainConfig::init_fraction);
        f["train.disable_explicit"] = train_bool(&TrainConfig::disable_explicit);
        f["train.disable_implicit"] = train_bool(&TrainConfig::disable_implicit);
        f["train.disable_reweighting"] = train_bool(&TrainConfig::disable_reweighting);
        f["train.normalize_anchor"] = train_bool(&TrainConfig::normalize_anchor);
        f["train.weight_normalization"] = {
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v == "batch") {
                    c.train.weight_normalization = WeightNormalization::Batch;
                } else if (v == "global") {
                    c.train.weight_normalization = WeightNormalization::Global;
                } else {
                    throw ConfigError(k + ": expected batch or global, got '" + v + "'");
                }
            },
            [](const RunConfig& c) {
                return std::string(c.train.weight_normalization == WeightNormalization::Batch ? "batch" : "global");
            }};
        f["train.hidden"] = uint_field(&R::train, &TrainConfig::hidden);
        f["train.embed"] = uint_field(&R::train, &TrainConfig::embed);
        f["train.val_every"] = uint_field(&R::train, &TrainConfig::val_every);
        f["train.stage2_cap_updates"] = uint_field(&R::train, &TrainConfig::stage2_cap_updates);
        f["train.seed"] = seed_field(&R::train, &TrainConfig::seed);

        f["eval.queries_per_probe"] = {
            [](RunConfig& c, const std::string& k, const std::string& v) {
                c.eval.budget.per_probe = to_uint(k, v);
                c.train.val_budget.per_probe = c.eval.budget.per_probe;
            },
            [](const RunConfig& c) { return std::to_string(c.eval.budget.per_probe); }};
        f["eval.max_queries"] = {
            [](RunConfig& c, const std::string& k, const std::string& v) {
                c.eval.budget.max_per_cell = to_uint(k, v);
                c.train.val_budget.max_per_cell = c.eval.budget.max_per_cell;
            },
            [](const RunConfig& c) { return std::to_string(c.eval.budget.max_per_cell); }};
        f["eval.max_gallery"] = uint_field(&R::eval, &EvalConfig::max_gallery);
        f["eval.similarity"] = {
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v == "cosine") {
                    c.eval.similarity = Similarity::Cosine;
                } else if (v == "dot") {
                    c.eval.similarity = Similarity::Dot;
                } else {
                    throw ConfigError(k + ": expected cosine or dot, got '" + v + "'");
                }
            },
            [](const RunConfig& c) { return std::string(c.eval.similarity == Similarity::Cosine ? "cosine" : "dot"); }};
        f["eval.seed"] = seed_field(&R::eval, &EvalConfig::seed);
        return f;
    }();
    return table;
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    const auto it = f.find(key);
    if (it == f.end()) throw ConfigError(key + ": unknown key");
    it->second.set(cfg, key, value);
}

inline void validate(const RunConfig& cfg) {
    validate(cfg.synth);
    validate(cfg.train);
    if (cfg.eval.max_gallery < 2) throw ConfigError("eval.max_gallery: must be >= 2");
}

/// Parses `text` on top of the defaults. Does not validate cross-field invariants.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = detail::trim(line.substr(0, eq));
        const auto value = detail::trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError(key + ": duplicate key (line " + std::to_string(line_no) + ")");
        set_config_value(cfg, key, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

/// Every key with its resolved value, one `key = value` line each.
inline std::string to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
    return out;
}

}  // namespace vfa
