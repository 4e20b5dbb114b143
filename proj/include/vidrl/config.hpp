#pragma once

#include <functional>
#include <sstream>

#include "vidrl/checkpoint.hpp"

namespace vidrl {

/// Flat experiment configuration. Every key has a default except
/// `experiment`, which must always be given.
struct Config {
    // identity
    std::string experiment;  // required
    std::string algo = "vader";  // vader | ddpo | dpo
    std::string outdir = "out";
    std::vector<long> seeds = {1, 2, 3};

    // toy world
    std::size_t frames = 4;
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    long velocity = 1;
    std::size_t dataset_size = 1000;

    // rewards
    std::vector<std::string> reward = {"brightness"};
    std::vector<double> reward_weights;  // empty = all ones
    std::string reward_agg = "mean";     // mean | sum
    std::size_t target = 0;              // object-absence target shape class
    double mask_ratio = 0.5;
    std::size_t disc_steps = 4000;

    // diffusion
    std::string conditioning = "class";  // class | first_frame
    std::size_t T = 50;
    std::string sampler = "ddim";  // ddim | ddpm
    std::size_t steps = 10;        // sampler steps
    double eta = 0.0;
    std::size_t hidden = 256;
    std::size_t pretrain_steps = 800;
    double pretrain_lr = 1e-3;
    bool grad_checkpoint = false;

    // alignment
    std::size_t K = 10;  // gradient cutoff (sampler steps with gradient)
    bool truncate_backprop_one_step = false;
    double lr = 1e-4;
    double grad_clip = 10.0;
    std::size_t batch = 8;
    std::size_t align_steps = 100;
    std::size_t subsample_m = 0;  // 0 = frames/2 chosen at run time
    std::size_t lora_rank = 4;
    std::size_t budget_queries = 0;  // 0 = unlimited
    double clip_eps = 0.2;
    std::size_t ppo_epochs = 1;
    double dpo_beta = 500.0;
    std::size_t pairs = 4;

    // evaluation / experiments
    std::size_t eval_every = 10;
    std::size_t eval_samples = 24;
    std::size_t rounds = 3;
};

namespace detail {

struct ConfigKey {
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

inline long parse_long(const std::string& v) {
    std::size_t pos = 0;
    long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}
inline std::size_t parse_size(const std::string& v) {
    long out = parse_long(v);
    if (out < 0) throw std::invalid_argument("must be >= 0");
    return static_cast<std::size_t>(out);
}
inline double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}
inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true/false");
}
inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    for (const auto& s : out)
        if (s.empty()) throw std::invalid_argument("empty list element");
    return out;
}

template <class T>
std::string join_list(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline const std::map<std::string, ConfigKey>& config_keys() {
    static const std::map<std::string, ConfigKey> keys = [] {
        std::map<std::string, ConfigKey> k;
        auto str = [&](const char* name, std::string Config::* f) {
            k[name] = {[f](Config& c, const std::string& v) { c.*f = v; },
                       [f](const Config& c) { return c.*f; }};
        };
        auto sz = [&](const char* name, std::size_t Config::* f) {
            k[name] = {[f](Config& c, const std::string& v) { c.*f = parse_size(v); },
                       [f](const Config& c) { return std::to_string(c.*f); }};
        };
        auto lng = [&](const char* name, long Config::* f) {
            k[name] = {[f](Config& c, const std::string& v) { c.*f = parse_long(v); },
                       [f](const Config& c) { return std::to_string(c.*f); }};
        };
        auto dbl = [&](const char* name, double Config::* f) {
            k[name] = {[f](Config& c, const std::string& v) { c.*f = parse_double(v); },
                       [f](const Config& c) { return fmt_double(c.*f); }};
        };
        auto bl = [&](const char* name, bool Config::* f) {
            k[name] = {[f](Config& c, const std::string& v) { c.*f = parse_bool(v); },
                       [f](const Config& c) { return c.*f ? "true" : "false"; }};
        };
        str("experiment", &Config::experiment);
        str("algo", &Config::algo);
        str("outdir", &Config::outdir);
        k["seeds"] = {[](Config& c, const std::string& v) {
                          c.seeds.clear();
                          for (const auto& s : split_list(v)) c.seeds.push_back(parse_long(s));
                          if (c.seeds.empty()) throw std::invalid_argument("need >= 1 seed");
                      },
                      [](const Config& c) { return join_list(c.seeds); }};
        sz("frames", &Config::frames);
        sz("channels", &Config::channels);
        sz("height", &Config::height);
        sz("width", &Config::width);
        lng("velocity", &Config::velocity);
        sz("dataset_size", &Config::dataset_size);
        k["reward"] = {[](Config& c, const std::string& v) {
                           c.reward = split_list(v);
                           if (c.reward.empty()) throw std::invalid_argument("need >= 1 reward");
                           for (const auto& r : c.reward) (void)reward_kind_from(r);
                       },
                       [](const Config& c) { return join_list(c.reward); }};
        k["reward_weights"] = {[](Config& c, const std::string& v) {
                                   c.reward_weights.clear();
                                   for (const auto& s : split_list(v))
                                       c.reward_weights.push_back(parse_double(s));
                               },
                               [](const Config& c) { return join_list(c.reward_weights); }};
        k["reward_agg"] = {[](Config& c, const std::string& v) {
                               if (v != "mean" && v != "sum")
                                   throw std::invalid_argument("expected mean or sum");
                               c.reward_agg = v;
                           },
                           [](const Config& c) { return c.reward_agg; }};
        sz("target", &Config::target);
        dbl("mask_ratio", &Config::mask_ratio);
        sz("disc_steps", &Config::disc_steps);
        k["conditioning"] = {[](Config& c, const std::string& v) {
                                 if (v != "class" && v != "first_frame")
                                     throw std::invalid_argument(
                                         "expected class or first_frame");
                                 c.conditioning = v;
                             },
                             [](const Config& c) { return c.conditioning; }};
        sz("T", &Config::T);
        k["sampler"] = {[](Config& c, const std::string& v) {
                            if (v != "ddim" && v != "ddpm")
                                throw std::invalid_argument("expected ddim or ddpm");
                            c.sampler = v;
                        },
                        [](const Config& c) { return c.sampler; }};
        sz("steps", &Config::steps);
        dbl("eta", &Config::eta);
        sz("hidden", &Config::hidden);
        sz("pretrain_steps", &Config::pretrain_steps);
        dbl("pretrain_lr", &Config::pretrain_lr);
        bl("grad_checkpoint", &Config::grad_checkpoint);
        sz("K", &Config::K);
        bl("truncate_backprop_one_step", &Config::truncate_backprop_one_step);
        dbl("lr", &Config::lr);
        dbl("grad_clip", &Config::grad_clip);
        sz("batch", &Config::batch);
        sz("align_steps", &Config::align_steps);
        sz("subsample_m", &Config::subsample_m);
        sz("lora_rank", &Config::lora_rank);
        sz("budget_queries", &Config::budget_queries);
        dbl("clip_eps", &Config::clip_eps);
        sz("ppo_epochs", &Config::ppo_epochs);
        dbl("dpo_beta", &Config::dpo_beta);
        sz("pairs", &Config::pairs);
        sz("eval_every", &Config::eval_every);
        sz("eval_samples", &Config::eval_samples);
        sz("rounds", &Config::rounds);
        return k;
    }();
    return keys;
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

/// Apply one `key=value` override (used both by the parser and by CLI
/// overrides). `where` prefixes error messages, e.g. "file.cfg:12".
inline void config_set(Config& cfg, const std::string& key, const std::string& value,
                       const std::string& where) {
    const auto& keys = detail::config_keys();
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    try {
        it->second.set(cfg, value);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(where + ": bad value '" + value + "' for key '" + key + "' (" +
                          e.what() + ")");
    }
}

/// Cross-field checks, called after all keys are applied.
inline void config_validate(const Config& cfg, const std::string& where) {
    if (cfg.experiment.empty())
        throw ConfigError(where + ": required key 'experiment' is missing");
    static const std::vector<std::string> kinds = {
        "pretrain", "align", "sweep-resolution", "sweep-efficiency", "generalize", "extend",
        "eval"};
    if (std::find(kinds.begin(), kinds.end(), cfg.experiment) == kinds.end())
        throw ConfigError(where + ": unknown experiment kind '" + cfg.experiment + "'");
    if (cfg.algo != "vader" && cfg.algo != "ddpo" && cfg.algo != "dpo")
        throw ConfigError(where + ": algo must be vader, ddpo, or dpo (got '" + cfg.algo + "')");
    if (!cfg.reward_weights.empty() && cfg.reward_weights.size() != cfg.reward.size())
        throw ConfigError(where + ": reward_weights length " +
                          std::to_string(cfg.reward_weights.size()) + " does not match " +
                          std::to_string(cfg.reward.size()) + " rewards");
    if (cfg.steps < 1 || cfg.steps > cfg.T)
        throw ConfigError(where + ": steps must satisfy 1 <= steps <= T");
    if (cfg.K < 1 || cfg.K > cfg.steps)
        throw ConfigError(where + ": K must satisfy 1 <= K <= steps");
    if (cfg.subsample_m > cfg.frames)
        throw ConfigError(where + ": subsample_m cannot exceed frames");
    if (cfg.height % 2 || cfg.width % 2)
        throw ConfigError(where + ": height and width must be even");
}

/// Parse `key = value` text with `#` comments. Unknown keys and malformed
/// lines are rejected with their line number.
inline Config parse_config_text(const std::string& text, const std::string& name) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = name + ":" + std::to_string(lineno);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(where + ": empty key");
        config_set(cfg, key, value, where);
    }
    return cfg;
}

inline Config parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

/// Canonical serialization: every key, sorted, one per line. Feeding the
/// output back through the parser reproduces the config exactly.
inline std::string serialize_config(const Config& cfg) {
    std::string out;
    for (const auto& [name, key] : detail::config_keys()) {
        const std::string v = key.get(cfg);
        if (name == "reward_weights" && v.empty()) continue;  // optional list
        out += name + " = " + v + "\n";
    }
    return out;
}

}  // namespace vidrl
