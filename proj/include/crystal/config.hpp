#pragma once

// Run configuration with canonical JSON round-tripping: keys sorted, compact
// separators, unknown keys rejected at every level.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "crystal/corruption.hpp"
#include "crystal/errors.hpp"
#include "crystal/model.hpp"
#include "crystal/taskgen.hpp"
#include "crystal/trainer.hpp"
#include "json.hpp"

namespace crystal {

using json = nlohmann::json;

namespace detail {

inline void expect_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

}  // namespace detail

inline json model_config_to_json(const ModelConfig& m) {
    return json{{"layers", m.layers},       {"heads", m.heads},
                {"dim", m.dim},             {"patch", m.patch},
                {"latents", m.latents},     {"latent_mode", latent_mode_name(m.latent_mode)},
                {"vocab", m.vocab},         {"max_seq", m.max_seq}};
}

inline ModelConfig model_config_from_json(const json& j) {
    detail::expect_keys(j, "model", {"layers", "heads", "dim", "patch", "latents", "latent_mode", "vocab", "max_seq"});
    ModelConfig m;
    m.layers = detail::get_or(j, "layers", m.layers);
    m.heads = detail::get_or(j, "heads", m.heads);
    m.dim = detail::get_or(j, "dim", m.dim);
    m.patch = detail::get_or(j, "patch", m.patch);
    m.latents = detail::get_or(j, "latents", m.latents);
    if (j.contains("latent_mode")) m.latent_mode = parse_latent_mode(j.at("latent_mode").get<std::string>());
    m.vocab = detail::get_or(j, "vocab", Vocab().size());
    m.max_seq = detail::get_or(j, "max_seq", m.max_seq);
    return m;
}

struct RunConfig {
    ModelConfig model;
    LossConfig loss;

    CorruptionMode corruption_mode = CorruptionMode::Blur;
    std::vector<double> corruption_levels = default_levels(CorruptionMode::Blur);
    double eval_level = 10.0;

    int train_n = 4000;
    int eval_n = 300;
    TaskMix mix;

    TrainConfig train;

    int ablate_steps = 300;
    int ablate_train_n = 600;
    int ablate_eval_n = 120;
    int ablate_batch = 4;

    uint64_t seed = 1234;
    std::string out_dir = "run_out";

    void validate() const {
        if (model.vocab == 0) throw ConfigError("model.vocab must be set");
        model.validate();
        loss.validate(model.layers);
        if (train_n < 1 || eval_n < 1) throw ConfigError("dataset sizes must be positive");
        if (train.steps < 0 || train.batch < 1) throw ConfigError("invalid training extents");
        if (std::abs(mix.count + mix.exist + mix.relation - 1.0) > 1e-9)
            throw ConfigError("task mix must sum to 1");
        if (eval_level < 0) throw ConfigError("eval_level must be nonnegative");
        if (corruption_mode != CorruptionMode::Identity && corruption_levels.empty())
            throw ConfigError("corruption ladder must not be empty");
    }

    json to_json() const {
        json j;
        j["model"] = model_config_to_json(model);
        j["loss"] = json{{"w_ce_int", loss.w_ce_int},
                         {"w_ce_cor", loss.w_ce_cor},
                         {"w_kl", loss.w_kl},
                         {"w_attn", loss.w_attn},
                         {"attn_variant", attn_variant_name(loss.attn_variant)},
                         {"layer_subset", loss.layer_subset},
                         {"teacher_detach", loss.teacher_detach}};
        j["corruption"] = json{{"mode", mode_name(corruption_mode)},
                               {"levels", corruption_levels},
                               {"eval_level", eval_level}};
        j["data"] = json{{"train_n", train_n},
                         {"eval_n", eval_n},
                         {"mix", json{{"count", mix.count}, {"exist", mix.exist}, {"relation", mix.relation}}}};
        j["train"] = json{{"steps", train.steps},
                          {"batch", train.batch},
                          {"lr", train.lr},
                          {"momentum", train.momentum},
                          {"warmup", train.warmup}};
        j["ablate"] = json{{"steps", ablate_steps},
                           {"train_n", ablate_train_n},
                           {"eval_n", ablate_eval_n},
                           {"batch", ablate_batch}};
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        return j;
    }

    static RunConfig from_json(const json& j) {
        detail::expect_keys(j, "config",
                            {"model", "loss", "corruption", "data", "train", "ablate", "seed", "out_dir"});
        RunConfig cfg;
        if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
        if (cfg.model.vocab == 0) cfg.model.vocab = Vocab().size();

        if (j.contains("loss")) {
            const json& l = j.at("loss");
            detail::expect_keys(l, "loss", {"w_ce_int", "w_ce_cor", "w_kl", "w_attn", "attn_variant",
                                            "layer_subset", "teacher_detach"});
            cfg.loss.w_ce_int = detail::get_or(l, "w_ce_int", 1.0);
            cfg.loss.w_ce_cor = detail::get_or(l, "w_ce_cor", 1.0);
            cfg.loss.w_kl = detail::get_or(l, "w_kl", 1.0);
            cfg.loss.w_attn = detail::get_or(l, "w_attn", 1.0);
            if (l.contains("attn_variant"))
                cfg.loss.attn_variant = parse_attn_variant(l.at("attn_variant").get<std::string>());
            cfg.loss.layer_subset = detail::get_or(l, "layer_subset", std::vector<int>{});
            cfg.loss.teacher_detach = detail::get_or(l, "teacher_detach", true);
        }
        if (j.contains("corruption")) {
            const json& c = j.at("corruption");
            detail::expect_keys(c, "corruption", {"mode", "levels", "eval_level"});
            if (c.contains("mode")) cfg.corruption_mode = parse_mode(c.at("mode").get<std::string>());
            cfg.corruption_levels = detail::get_or(c, "levels", default_levels(cfg.corruption_mode));
            cfg.eval_level = detail::get_or(c, "eval_level", 10.0);
        }
        if (j.contains("data")) {
            const json& d = j.at("data");
            detail::expect_keys(d, "data", {"train_n", "eval_n", "mix"});
            cfg.train_n = detail::get_or(d, "train_n", cfg.train_n);
            cfg.eval_n = detail::get_or(d, "eval_n", cfg.eval_n);
            if (d.contains("mix")) {
                const json& m = d.at("mix");
                detail::expect_keys(m, "data.mix", {"count", "exist", "relation"});
                cfg.mix.count = detail::get_or(m, "count", 1.0);
                cfg.mix.exist = detail::get_or(m, "exist", 0.0);
                cfg.mix.relation = detail::get_or(m, "relation", 0.0);
            }
        }
        if (j.contains("train")) {
            const json& t = j.at("train");
            detail::expect_keys(t, "train", {"steps", "batch", "lr", "momentum", "warmup"});
            cfg.train.steps = detail::get_or(t, "steps", cfg.train.steps);
            cfg.train.batch = detail::get_or(t, "batch", cfg.train.batch);
            cfg.train.lr = detail::get_or(t, "lr", cfg.train.lr);
            cfg.train.momentum = detail::get_or(t, "momentum", cfg.train.momentum);
            cfg.train.warmup = detail::get_or(t, "warmup", cfg.train.warmup);
        }
        if (j.contains("ablate")) {
            const json& a = j.at("ablate");
            detail::expect_keys(a, "ablate", {"steps", "train_n", "eval_n", "batch"});
            cfg.ablate_steps = detail::get_or(a, "steps", cfg.ablate_steps);
            cfg.ablate_train_n = detail::get_or(a, "train_n", cfg.ablate_train_n);
            cfg.ablate_eval_n = detail::get_or(a, "eval_n", cfg.ablate_eval_n);
            cfg.ablate_batch = detail::get_or(a, "batch", cfg.ablate_batch);
        }
        cfg.seed = detail::get_or(j, "seed", cfg.seed);
        cfg.out_dir = detail::get_or(j, "out_dir", cfg.out_dir);
        cfg.validate();
        return cfg;
    }

    // Canonical form: sorted keys, no whitespace, shortest round-trip floats.
    std::string canonical() const { return to_json().dump(); }
};

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return RunConfig::from_json(j);
}

}  // namespace crystal
