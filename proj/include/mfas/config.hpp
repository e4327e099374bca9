#pragma once
// Experiment configuration: one JSON document with defaults, strict unknown-
// key validation, and dotted-path overrides. Defaults follow the reference
// operating point: K=10, batch 32, source lr 1e-4 over 10 epochs, adaptation
// lr 1e-6, beta=500, pseudo-label threshold h=0.5.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfas/errors.hpp"
#include "mfas/rng.hpp"
#include "mfas/synthdata.hpp"

#include <json.hpp>

namespace mfas {

struct DataConfig {
    std::size_t latent_dim = 8;
    std::size_t raw_dim = 32;
    std::size_t n_source_domains = 3;
    std::size_t source_train_per_domain = 120;  // split evenly live/spoof
    std::size_t source_val_per_domain = 60;
    std::size_t target_adapt = 192;
    std::size_t target_eval = 192;
    double spoof_magnitude = 4.5;
    double skew = 0.3;
    double source_offset = 0.5;
    double source_mix_jitter = 0.1;
    double source_spoof_rotation = 0.1;
    std::array<double, 3> source_noise{0.1, 0.1, 0.1};          // rgb, ir, d
    std::array<double, 3> target_offset{0.3, 0.4, 0.8};
    std::array<double, 3> target_mix_jitter{0.1, 0.15, 0.0};
    std::array<double, 3> target_noise{0.05, 0.15, 6.0};
    double target_spoof_rotation = 0.35;
    // attack-axis gain per modality on the target (1 normal, -1 inverted);
    // magnitudes below 0.05 would leave the mixing rank-deficient
    std::array<double, 3> target_attack_visibility{1.0, 1.0, 1.0};
};

struct ModelConfig {
    std::size_t feat_dim = 16;
    std::vector<std::size_t> extractor_hidden{64, 64, 32};
    std::size_t adapter_hidden = 32;
    std::size_t frozen_prefix = 2;  // extractor layers fixed during adaptation
};

struct TrainConfig {
    std::size_t epochs = 10;
    double lr = 1e-4;
    std::size_t batch_size = 32;
    std::size_t adapter_pretrain_steps = 300;
    double adapter_lr = 3e-3;
};

struct AdaptConfig {
    double lr = 1e-6;
    std::size_t batch_size = 32;
    double beta = 500.0;
    std::size_t k = 10;
    double dropout_rate = 0.3;
    std::size_t passes = 1;
    std::size_t replay_size = 32;
    double adapter_refresh_lr = 3e-3;
    double pseudo_threshold = 0.5;       // h
    double label_corruption_rate = 0.0;  // ablation hook: flip pseudo-labels
    std::string pseudo = "reliability";  // or "naive"
    std::string strategy = "alpha";      // or "plain"
};

struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "runs/default";
    std::string missing = "none";
    std::string threshold_mode = "youden-source";
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    AdaptConfig adapt;
};

namespace cfgdetail {

inline nlohmann::json to_json(const ExperimentConfig& c) {
    return nlohmann::json{
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"missing", c.missing},
        {"threshold_mode", c.threshold_mode},
        {"data",
         {{"latent_dim", c.data.latent_dim},
          {"raw_dim", c.data.raw_dim},
          {"n_source_domains", c.data.n_source_domains},
          {"source_train_per_domain", c.data.source_train_per_domain},
          {"source_val_per_domain", c.data.source_val_per_domain},
          {"target_adapt", c.data.target_adapt},
          {"target_eval", c.data.target_eval},
          {"spoof_magnitude", c.data.spoof_magnitude},
          {"skew", c.data.skew},
          {"source_offset", c.data.source_offset},
          {"source_mix_jitter", c.data.source_mix_jitter},
          {"source_spoof_rotation", c.data.source_spoof_rotation},
          {"source_noise", c.data.source_noise},
          {"target_offset", c.data.target_offset},
          {"target_mix_jitter", c.data.target_mix_jitter},
          {"target_noise", c.data.target_noise},
          {"target_spoof_rotation", c.data.target_spoof_rotation},
          {"target_attack_visibility", c.data.target_attack_visibility}}},
        {"model",
         {{"feat_dim", c.model.feat_dim},
          {"extractor_hidden", c.model.extractor_hidden},
          {"adapter_hidden", c.model.adapter_hidden},
          {"frozen_prefix", c.model.frozen_prefix}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"lr", c.train.lr},
          {"batch_size", c.train.batch_size},
          {"adapter_pretrain_steps", c.train.adapter_pretrain_steps},
          {"adapter_lr", c.train.adapter_lr}}},
        {"adapt",
         {{"lr", c.adapt.lr},
          {"batch_size", c.adapt.batch_size},
          {"beta", c.adapt.beta},
          {"k", c.adapt.k},
          {"dropout_rate", c.adapt.dropout_rate},
          {"passes", c.adapt.passes},
          {"replay_size", c.adapt.replay_size},
          {"adapter_refresh_lr", c.adapt.adapter_refresh_lr},
          {"pseudo_threshold", c.adapt.pseudo_threshold},
          {"label_corruption_rate", c.adapt.label_corruption_rate},
          {"pseudo", c.adapt.pseudo},
          {"strategy", c.adapt.strategy}}}};
}

// Merge `user` into `base`, rejecting keys that do not exist in the defaults.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& user,
                         const std::string& prefix) {
    if (!user.is_object())
        throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected a JSON object");
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError(path, "unknown field");
        if (base[key].is_object()) {
            merge_strict(base[key], value, path);
        } else {
            base[key] = value;
        }
    }
}

template <typename T>
T get_checked(const nlohmann::json& j, const std::string& path) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path, e.what());
    }
}

}  // namespace cfgdetail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    return cfgdetail::to_json(c);
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& user) {
    ExperimentConfig c;
    nlohmann::json merged = cfgdetail::to_json(c);
    cfgdetail::merge_strict(merged, user, "");

    using cfgdetail::get_checked;
    c.seed = get_checked<std::uint64_t>(merged["seed"], "seed");
    c.out_dir = get_checked<std::string>(merged["out_dir"], "out_dir");
    c.missing = get_checked<std::string>(merged["missing"], "missing");
    c.threshold_mode = get_checked<std::string>(merged["threshold_mode"], "threshold_mode");

    const auto& d = merged["data"];
    c.data.latent_dim = get_checked<std::size_t>(d["latent_dim"], "data.latent_dim");
    c.data.raw_dim = get_checked<std::size_t>(d["raw_dim"], "data.raw_dim");
    c.data.n_source_domains = get_checked<std::size_t>(d["n_source_domains"], "data.n_source_domains");
    c.data.source_train_per_domain =
        get_checked<std::size_t>(d["source_train_per_domain"], "data.source_train_per_domain");
    c.data.source_val_per_domain =
        get_checked<std::size_t>(d["source_val_per_domain"], "data.source_val_per_domain");
    c.data.target_adapt = get_checked<std::size_t>(d["target_adapt"], "data.target_adapt");
    c.data.target_eval = get_checked<std::size_t>(d["target_eval"], "data.target_eval");
    c.data.spoof_magnitude = get_checked<double>(d["spoof_magnitude"], "data.spoof_magnitude");
    c.data.skew = get_checked<double>(d["skew"], "data.skew");
    c.data.source_offset = get_checked<double>(d["source_offset"], "data.source_offset");
    c.data.source_mix_jitter = get_checked<double>(d["source_mix_jitter"], "data.source_mix_jitter");
    c.data.source_spoof_rotation =
        get_checked<double>(d["source_spoof_rotation"], "data.source_spoof_rotation");
    c.data.source_noise = get_checked<std::array<double, 3>>(d["source_noise"], "data.source_noise");
    c.data.target_offset = get_checked<std::array<double, 3>>(d["target_offset"], "data.target_offset");
    c.data.target_mix_jitter =
        get_checked<std::array<double, 3>>(d["target_mix_jitter"], "data.target_mix_jitter");
    c.data.target_noise = get_checked<std::array<double, 3>>(d["target_noise"], "data.target_noise");
    c.data.target_spoof_rotation =
        get_checked<double>(d["target_spoof_rotation"], "data.target_spoof_rotation");
    c.data.target_attack_visibility = get_checked<std::array<double, 3>>(
        d["target_attack_visibility"], "data.target_attack_visibility");

    const auto& m = merged["model"];
    c.model.feat_dim = get_checked<std::size_t>(m["feat_dim"], "model.feat_dim");
    c.model.extractor_hidden =
        get_checked<std::vector<std::size_t>>(m["extractor_hidden"], "model.extractor_hidden");
    c.model.adapter_hidden = get_checked<std::size_t>(m["adapter_hidden"], "model.adapter_hidden");
    c.model.frozen_prefix = get_checked<std::size_t>(m["frozen_prefix"], "model.frozen_prefix");

    const auto& t = merged["train"];
    c.train.epochs = get_checked<std::size_t>(t["epochs"], "train.epochs");
    c.train.lr = get_checked<double>(t["lr"], "train.lr");
    c.train.batch_size = get_checked<std::size_t>(t["batch_size"], "train.batch_size");
    c.train.adapter_pretrain_steps =
        get_checked<std::size_t>(t["adapter_pretrain_steps"], "train.adapter_pretrain_steps");
    c.train.adapter_lr = get_checked<double>(t["adapter_lr"], "train.adapter_lr");

    const auto& a = merged["adapt"];
    c.adapt.lr = get_checked<double>(a["lr"], "adapt.lr");
    c.adapt.batch_size = get_checked<std::size_t>(a["batch_size"], "adapt.batch_size");
    c.adapt.beta = get_checked<double>(a["beta"], "adapt.beta");
    c.adapt.k = get_checked<std::size_t>(a["k"], "adapt.k");
    c.adapt.dropout_rate = get_checked<double>(a["dropout_rate"], "adapt.dropout_rate");
    c.adapt.passes = get_checked<std::size_t>(a["passes"], "adapt.passes");
    c.adapt.replay_size = get_checked<std::size_t>(a["replay_size"], "adapt.replay_size");
    c.adapt.adapter_refresh_lr = get_checked<double>(a["adapter_refresh_lr"], "adapt.adapter_refresh_lr");
    c.adapt.pseudo_threshold = get_checked<double>(a["pseudo_threshold"], "adapt.pseudo_threshold");
    c.adapt.label_corruption_rate =
        get_checked<double>(a["label_corruption_rate"], "adapt.label_corruption_rate");
    c.adapt.pseudo = get_checked<std::string>(a["pseudo"], "adapt.pseudo");
    c.adapt.strategy = get_checked<std::string>(a["strategy"], "adapt.strategy");

    // range and enum validation
    auto require = [](bool ok, const std::string& field, const std::string& msg) {
        if (!ok) throw ConfigError(field, msg);
    };
    require(c.adapt.lr > 0.0, "adapt.lr", "must be positive");
    require(c.adapt.beta > 0.0, "adapt.beta", "must be positive");
    require(c.adapt.batch_size >= 2, "adapt.batch_size", "must be at least 2");
    require(c.adapt.k >= 1, "adapt.k", "must be at least 1");
    require(c.adapt.dropout_rate >= 0.0 && c.adapt.dropout_rate < 1.0, "adapt.dropout_rate",
            "must lie in [0, 1)");
    require(c.adapt.passes >= 1, "adapt.passes", "must be at least 1");
    require(c.adapt.label_corruption_rate >= 0.0 && c.adapt.label_corruption_rate <= 1.0,
            "adapt.label_corruption_rate", "must lie in [0, 1]");
    require(c.adapt.pseudo == "naive" || c.adapt.pseudo == "reliability", "adapt.pseudo",
            "must be 'naive' or 'reliability'");
    require(c.adapt.strategy == "plain" || c.adapt.strategy == "alpha", "adapt.strategy",
            "must be 'plain' or 'alpha'");
    require(c.train.lr > 0.0, "train.lr", "must be positive");
    require(c.train.batch_size >= 1, "train.batch_size", "must be at least 1");
    require(c.model.feat_dim >= 1, "model.feat_dim", "must be at least 1");
    require(c.model.frozen_prefix <= c.model.extractor_hidden.size() + 1, "model.frozen_prefix",
            "exceeds extractor depth");
    require(c.data.n_source_domains >= 1, "data.n_source_domains", "must be at least 1");
    require(c.data.skew >= 0.0 && c.data.skew < 1.0, "data.skew", "must lie in [0, 1)");
    for (double v : c.data.target_attack_visibility)
        require(std::fabs(v) >= 0.05, "data.target_attack_visibility",
                "entries must have magnitude >= 0.05 (rank)");
    try {
        parse_missing_pattern(c.missing);
    } catch (const ContractError& e) {
        throw ConfigError("missing", e.what());
    }
    if (c.threshold_mode != "youden-source" && c.threshold_mode != "oracle-target" &&
        c.threshold_mode.rfind("fixed:", 0) != 0)
        throw ConfigError("threshold_mode", "must be youden-source, oracle-target, or fixed:X");
    if (c.threshold_mode.rfind("fixed:", 0) == 0) {
        try {
            const double v = std::stod(c.threshold_mode.substr(6));
            if (!(v >= 0.0 && v <= 1.0)) throw std::out_of_range("range");
        } catch (const std::exception&) {
            throw ConfigError("threshold_mode", "fixed threshold must be a number in [0, 1]");
        }
    }
    return c;
}

// Apply one `--set key.path=value` override on a raw config document.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError(assignment, "override must look like key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw_value = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw_value);
    } catch (const nlohmann::json::exception&) {
        value = raw_value;  // unquoted strings pass through
    }
    nlohmann::json* cursor = &doc;
    std::size_t begin = 0;
    while (true) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw ConfigError(path, "empty path segment");
        if (dot == std::string::npos) {
            (*cursor)[key] = value;
            return;
        }
        cursor = &(*cursor)[key];
        begin = dot + 1;
    }
}

namespace cfgdetail {

inline std::vector<double> random_unit_vector(std::size_t n, RngStream& rng) {
    std::vector<double> v(n);
    double norm2 = 0.0;
    for (double& x : v) {
        x = rng.next_gaussian();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

inline std::vector<double> rotate_toward(const std::vector<double>& base, double fraction,
                                         RngStream& rng) {
    std::vector<double> fresh = random_unit_vector(base.size(), rng);
    std::vector<double> out(base.size());
    double norm2 = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        out[i] = (1.0 - fraction) * base[i] + fraction * fresh[i];
        norm2 += out[i] * out[i];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : out) x *= inv;
    return out;
}

}  // namespace cfgdetail

// Builds the default protocol's domains: n source domains sharing a base
// mixing/attack structure with mild per-domain variation, plus one target
// domain ("t0") with stronger per-modality shift and a rotated attack
// direction. Deterministic in (cfg, seed).
inline std::vector<DomainSpec> build_domains(const DataConfig& cfg, std::uint64_t seed) {
    RngStream rng = RngStream(seed).derive("domains");
    const std::size_t ld = cfg.latent_dim;
    const std::size_t rd = cfg.raw_dim;
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(ld));

    std::array<std::vector<double>, 3> base_mix;
    for (auto& m : base_mix) {
        m.resize(rd * ld);
        for (double& v : m) v = mix_scale * rng.next_gaussian();
    }
    const std::vector<double> base_dir = cfgdetail::random_unit_vector(ld, rng);

    auto make_domain = [&](const std::string& id, const std::array<double, 3>& offset,
                           const std::array<double, 3>& jitter, const std::array<double, 3>& noise,
                           double rotation, const std::array<double, 3>& visibility) {
        DomainSpec spec;
        spec.id = id;
        spec.latent_dim = ld;
        spec.raw_dim = rd;
        spec.spoof_magnitude = cfg.spoof_magnitude;
        spec.skew = cfg.skew;
        spec.spoof_direction = cfgdetail::rotate_toward(base_dir, rotation, rng);
        for (std::size_t m = 0; m < 3; ++m) {
            auto& mm = spec.mix[m];
            mm.mixing = base_mix[m];
            // jitter rotates the mixing structure at constant output scale:
            // (M + j*G)/sqrt(1+j^2) keeps raw-space variance fixed while
            // scrambling the latent-to-raw relationship
            const double denom = std::sqrt(1.0 + jitter[m] * jitter[m]);
            for (double& v : mm.mixing)
                v = (v + jitter[m] * mix_scale * rng.next_gaussian()) / denom;
            // attack visibility: M <- M * (I + (c-1) d d^T) scales the attack
            // axis d by c in this modality (1 normal, 0 blind, -1 inverted);
            // directions orthogonal to d are untouched
            if (visibility[m] != 1.0) {
                const auto& d = spec.spoof_direction;
                for (std::size_t r = 0; r < rd; ++r) {
                    double along = 0.0;
                    for (std::size_t j = 0; j < ld; ++j) along += mm.mixing[r * ld + j] * d[j];
                    for (std::size_t j = 0; j < ld; ++j)
                        mm.mixing[r * ld + j] += (visibility[m] - 1.0) * along * d[j];
                }
            }
            // offset[m] is the per-coordinate shift scale; the direction is a
            // random unit vector, so the total offset norm is offset[m]*sqrt(rd)
            auto dir = cfgdetail::random_unit_vector(rd, rng);
            mm.offset.resize(rd);
            const double scaled = offset[m] * std::sqrt(static_cast<double>(rd));
            for (std::size_t r = 0; r < rd; ++r) mm.offset[r] = scaled * dir[r];
            mm.noise_sigma = noise[m];
        }
        return spec;
    };

    std::vector<DomainSpec> out;
    for (std::size_t k = 0; k < cfg.n_source_domains; ++k) {
        out.push_back(make_domain(
            "s" + std::to_string(k),
            {cfg.source_offset, cfg.source_offset, cfg.source_offset},
            {cfg.source_mix_jitter, cfg.source_mix_jitter, cfg.source_mix_jitter},
            cfg.source_noise, cfg.source_spoof_rotation, {1.0, 1.0, 1.0}));
    }
    out.push_back(make_domain("t0", cfg.target_offset, cfg.target_mix_jitter, cfg.target_noise,
                              cfg.target_spoof_rotation, cfg.target_attack_visibility));
    return out;
}

}  // namespace mfas
