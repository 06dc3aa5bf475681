#pragma once

// Run configuration: flat "key = value" files with dotted keys, merged with
// command-line overrides. Seed precedence, lowest first: built-in default,
// XMODAL_SEED, config file, command line.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/data.hpp"
#include "xmodal/model.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/textio.hpp"
#include "xmodal/training.hpp"

namespace xmodal {

struct GradcheckOptions {
    double h = 1e-5;
    double threshold = 1e-4;
    std::uint64_t seed = 7;
    RandomProblemShape shape;  // defaults N=4, M=3, B=12, d=6
};

struct RunConfig {
    GenConfig gen;
    ModelConfig model;  // embed_dim and hidden_width; the rest comes from the data
    TrainConfig train;
    RetrievalOptions eval;
    GradcheckOptions gradcheck;
    std::vector<LossSet> ablate_combos{
        LossSet{Loss::CE},          LossSet{Loss::IV},          LossSet{Loss::NS},
        LossSet{Loss::IV, Loss::IC}, LossSet{Loss::CE, Loss::IV}, LossSet{Loss::CE, Loss::IV, Loss::IC},
        LossSet{Loss::CE, Loss::IC}};

    void validate() const {
        gen.validate();
        if (model.embed_dim < 2) throw BadConfig("model.embed_dim must be >= 2");
        if (model.hidden_width < 0) throw BadConfig("model.hidden_width must be >= 0");
        train.validate();
        if (!(gradcheck.h > 0.0)) throw BadConfig("gradcheck.h must be > 0");
        if (!(gradcheck.threshold > 0.0)) throw BadConfig("gradcheck.threshold must be > 0");
        const auto& s = gradcheck.shape;
        if (s.num_classes < 2 || s.num_modalities < 1 || s.batch < 2 || s.embed_dim < 2 || s.hidden_width < 0) {
            throw BadConfig("gradcheck shape out of range");
        }
        if (ablate_combos.empty()) throw BadConfig("ablate.combos is empty");
        for (const auto& c : ablate_combos) {
            try {
                c.validate();
            } catch (const ConflictingFlags& e) {
                throw BadConfig(std::string("ablate.combos: ") + e.what());
            }
        }
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    if (textio::parse_double(v, out)) return out;
    // "1/30" style fractions
    const auto slash = v.find('/');
    double num = 0.0;
    double den = 0.0;
    if (slash != std::string::npos && textio::parse_double(trim(v.substr(0, slash)), num) &&
        textio::parse_double(trim(v.substr(slash + 1)), den) && den != 0.0) {
        return num / den;
    }
    throw BadConfig(key + ": '" + v + "' is not a number");
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& v) {
    Int out{};
    if (!textio::parse_int(v, out)) throw BadConfig(key + ": '" + v + "' is not an integer");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw BadConfig(key + ": '" + v + "' is not a boolean");
}

inline std::vector<std::string> split_on(const std::string& v, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter>& config_keys() {
    static const std::map<std::string, Setter> keys = [] {
        std::map<std::string, Setter> k;
        auto integer = [](auto member) {
            return Setter([member](RunConfig& c, const std::string& key, const std::string& v) {
                auto& field = member(c);
                field = parse_integer<std::remove_reference_t<decltype(field)>>(key, v);
            });
        };
        auto real = [](auto member) {
            return Setter([member](RunConfig& c, const std::string& key, const std::string& v) {
                member(c) = parse_real(key, v);
            });
        };
        auto boolean = [](auto member) {
            return Setter([member](RunConfig& c, const std::string& key, const std::string& v) {
                member(c) = parse_bool(key, v);
            });
        };
        k["gen.N"] = integer([](RunConfig& c) -> int& { return c.gen.num_classes; });
        k["gen.M"] = integer([](RunConfig& c) -> int& { return c.gen.num_modalities; });
        k["gen.n_train"] = integer([](RunConfig& c) -> int& { return c.gen.n_train; });
        k["gen.n_test"] = integer([](RunConfig& c) -> int& { return c.gen.n_test; });
        k["gen.latent_dim"] = integer([](RunConfig& c) -> int& { return c.gen.latent_dim; });
        k["gen.dims"] = [](RunConfig& c, const std::string& key, const std::string& v) {
            c.gen.dims.clear();
            for (const auto& part : split_on(v, ',')) c.gen.dims.push_back(parse_integer<int>(key, part));
        };
        k["gen.sigma_intra"] = real([](RunConfig& c) -> double& { return c.gen.sigma_intra; });
        k["gen.modal_shift"] = real([](RunConfig& c) -> double& { return c.gen.modal_shift; });
        k["gen.overlap"] = real([](RunConfig& c) -> double& { return c.gen.overlap; });
        k["gen.shift_test"] = real([](RunConfig& c) -> double& { return c.gen.shift_test; });
        k["gen.seed"] = integer([](RunConfig& c) -> std::uint64_t& { return c.gen.seed; });

        k["model.embed_dim"] = integer([](RunConfig& c) -> int& { return c.model.embed_dim; });
        k["model.hidden_width"] = integer([](RunConfig& c) -> int& { return c.model.hidden_width; });

        k["train.base_lr"] = real([](RunConfig& c) -> double& { return c.train.base_lr; });
        k["train.decay_every"] = integer([](RunConfig& c) -> long& { return c.train.decay_every; });
        k["train.decay_factor"] = real([](RunConfig& c) -> double& { return c.train.decay_factor; });
        k["train.iterations"] = integer([](RunConfig& c) -> long& { return c.train.iterations; });
        k["train.batch_size"] = integer([](RunConfig& c) -> int& { return c.train.batch_size; });
        k["train.classes_per_batch"] = integer([](RunConfig& c) -> int& { return c.train.classes_per_batch; });
        k["train.momentum"] = real([](RunConfig& c) -> double& { return c.train.momentum; });
        k["train.seed"] = integer([](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
        k["train.checkpoint_every"] = integer([](RunConfig& c) -> long& { return c.train.checkpoint_every; });
        k["train.log_every"] = integer([](RunConfig& c) -> long& { return c.train.log_every; });
        k["train.loss"] = [](RunConfig& c, const std::string&, const std::string& v) {
            c.train.enabled = LossSet::parse(v);
        };
        k["train.hp.lambda0"] = real([](RunConfig& c) -> double& { return c.train.hp.lambda0; });
        k["train.hp.omega"] = real([](RunConfig& c) -> double& { return c.train.hp.omega; });
        k["train.hp.tau"] = real([](RunConfig& c) -> double& { return c.train.hp.tau; });
        k["train.hp.t_rbf"] = real([](RunConfig& c) -> double& { return c.train.hp.t_rbf; });
        k["train.hp.detach_weight"] = boolean([](RunConfig& c) -> bool& { return c.train.hp.detach_weight; });

        k["eval.top_R"] = integer([](RunConfig& c) -> std::size_t& { return c.eval.top_r; });
        k["eval.detail"] = boolean([](RunConfig& c) -> bool& { return c.eval.detail; });

        k["gradcheck.h"] = real([](RunConfig& c) -> double& { return c.gradcheck.h; });
        k["gradcheck.threshold"] = real([](RunConfig& c) -> double& { return c.gradcheck.threshold; });
        k["gradcheck.seed"] = integer([](RunConfig& c) -> std::uint64_t& { return c.gradcheck.seed; });
        k["gradcheck.N"] = integer([](RunConfig& c) -> int& { return c.gradcheck.shape.num_classes; });
        k["gradcheck.M"] = integer([](RunConfig& c) -> int& { return c.gradcheck.shape.num_modalities; });
        k["gradcheck.B"] = integer([](RunConfig& c) -> int& { return c.gradcheck.shape.batch; });
        k["gradcheck.d"] = integer([](RunConfig& c) -> int& { return c.gradcheck.shape.embed_dim; });
        k["gradcheck.hidden_width"] = integer([](RunConfig& c) -> int& { return c.gradcheck.shape.hidden_width; });

        k["ablate.combos"] = [](RunConfig& c, const std::string&, const std::string& v) {
            c.ablate_combos.clear();
            for (const auto& part : split_on(v, ';')) {
                if (!part.empty()) c.ablate_combos.push_back(LossSet::parse(part));
            }
        };
        return k;
    }();
    return keys;
}

}  // namespace detail

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Parses "key = value" lines; '#' starts a comment.
inline ConfigEntries parse_config_text(std::istream& in, const std::string& source) {
    ConfigEntries out;
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw BadConfig(source + ":" + std::to_string(no) + ": expected 'key = value'");
        }
        out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return out;
}

inline ConfigEntries read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    return parse_config_text(in, path);
}

/// Applies entries in order. Unknown keys and malformed values raise
/// BadConfig; nothing is validated until validate().
inline void apply_entries(RunConfig& cfg, const ConfigEntries& entries) {
    const auto& keys = detail::config_keys();
    for (const auto& [key, value] : entries) {
        const auto it = keys.find(key);
        if (it == keys.end()) throw BadConfig("unknown config key '" + key + "'");
        it->second(cfg, key, value);
    }
}

/// Layers: defaults, XMODAL_SEED, file entries, overrides. Validates the
/// merged result. When gen.M changes and gen.dims is not given, dims are
/// filled with a fixed pattern no smaller than the latent dimension.
inline RunConfig build_run_config(const ConfigEntries& file_entries, const ConfigEntries& overrides,
                                  const char* env_seed = std::getenv("XMODAL_SEED")) {
    RunConfig cfg;
    if (env_seed != nullptr && *env_seed != '\0') {
        const auto seed = detail::parse_integer<std::uint64_t>("XMODAL_SEED", env_seed);
        cfg.gen.seed = seed;
        cfg.train.seed = seed;
        cfg.gradcheck.seed = seed;
    }
    apply_entries(cfg, file_entries);
    apply_entries(cfg, overrides);
    bool dims_given = false;
    for (const auto* list : {&file_entries, &overrides})
        for (const auto& kv : *list) dims_given = dims_given || kv.first == "gen.dims";
    if (!dims_given) {
        static constexpr int pattern[] = {24, 32, 20};
        cfg.gen.dims.clear();
        for (int m = 0; m < cfg.gen.num_modalities; ++m) {
            cfg.gen.dims.push_back(std::max(pattern[m % 3], cfg.gen.latent_dim));
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace xmodal
