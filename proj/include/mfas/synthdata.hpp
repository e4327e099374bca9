#pragma once
// Synthetic multi-domain, multi-modal liveness data with controllable domain
// shift. Each sample owns one latent vector shared by all modalities, so the
// modalities carry genuinely complementary views: x_mod = M_mod*z + b_mod +
// sigma_mod*noise, with spoof samples shifted along a latent attack
// direction before mixing. Datasets round-trip through a manifest.json plus
// one samples.jsonl per split, floats written with 17 significant digits.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfas/errors.hpp"
#include "mfas/rng.hpp"

#include <json.hpp>

namespace mfas {

enum class Modality { Rgb = 0, Ir = 1, D = 2 };
inline constexpr std::array<Modality, 3> kModalities{Modality::Rgb, Modality::Ir, Modality::D};

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Rgb: return "rgb";
        case Modality::Ir: return "ir";
        default: return "d";
    }
}

enum class MissingPattern { None, MissingD, MissingI, MissingDI };

inline const char* missing_pattern_name(MissingPattern p) {
    switch (p) {
        case MissingPattern::None: return "none";
        case MissingPattern::MissingD: return "d";
        case MissingPattern::MissingI: return "i";
        default: return "di";
    }
}

inline MissingPattern parse_missing_pattern(const std::string& s) {
    if (s == "none") return MissingPattern::None;
    if (s == "d") return MissingPattern::MissingD;
    if (s == "i") return MissingPattern::MissingI;
    if (s == "di") return MissingPattern::MissingDI;
    throw ContractError("unknown missing pattern '" + s + "' (expected none|d|i|di)");
}

struct MultiModalSample {
    std::string id;
    std::string domain;
    std::vector<double> rgb;               // always present
    std::optional<std::vector<double>> ir;
    std::optional<std::vector<double>> d;
    std::optional<int> label;              // 1 live, 0 spoof; absent on unlabeled target

    bool has(Modality m) const {
        switch (m) {
            case Modality::Rgb: return true;
            case Modality::Ir: return ir.has_value();
            default: return d.has_value();
        }
    }
    const std::vector<double>& raw(Modality m) const {
        switch (m) {
            case Modality::Rgb: return rgb;
            case Modality::Ir: return *ir;
            default: return *d;
        }
    }
};

// Per-modality mixing from latent to raw space plus a domain offset.
struct ModalityMix {
    std::vector<double> mixing;   // raw_dim x latent_dim, row-major
    std::vector<double> offset;   // raw_dim
    double noise_sigma = 0.0;
};

struct DomainSpec {
    std::string id;
    std::size_t latent_dim = 8;
    std::size_t raw_dim = 32;
    std::array<ModalityMix, 3> mix;        // indexed by Modality
    std::vector<double> spoof_direction;   // latent_dim, unit length
    double spoof_magnitude = 4.5;
    double skew = 0.3;                     // in [0,1): live/spoof overlap control
};

namespace detail {

// Column rank check by modified Gram-Schmidt; residual below tol means a
// linearly dependent column.
inline bool full_column_rank(const std::vector<double>& m, std::size_t rows, std::size_t cols,
                             double tol = 1e-9) {
    std::vector<std::vector<double>> basis;
    for (std::size_t c = 0; c < cols; ++c) {
        std::vector<double> v(rows);
        for (std::size_t r = 0; r < rows; ++r) v[r] = m[r * cols + c];
        for (const auto& b : basis) {
            double dot = 0.0;
            for (std::size_t r = 0; r < rows; ++r) dot += v[r] * b[r];
            for (std::size_t r = 0; r < rows; ++r) v[r] -= dot * b[r];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < tol) return false;
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    return true;
}

inline std::string format_double17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Draws n_live + n_spoof fully-modal labeled samples from one domain.
inline std::vector<MultiModalSample> generate_domain(const DomainSpec& spec, std::size_t n_live,
                                                     std::size_t n_spoof, RngStream& rng) {
    if (n_live == 0 || n_spoof == 0)
        throw ContractError("generate_domain: class counts must be positive");
    for (Modality m : kModalities) {
        const auto& mm = spec.mix[static_cast<std::size_t>(m)];
        if (mm.mixing.size() != spec.raw_dim * spec.latent_dim)
            throw GenerationError("domain '" + spec.id + "': mixing matrix for " +
                                  modality_name(m) + " has wrong size");
        if (!detail::full_column_rank(mm.mixing, spec.raw_dim, spec.latent_dim))
            throw GenerationError("domain '" + spec.id + "': mixing matrix for " +
                                  modality_name(m) + " is rank-deficient");
        if (mm.noise_sigma < 0.0)
            throw GenerationError("domain '" + spec.id + "': negative noise sigma");
    }

    std::vector<MultiModalSample> out;
    out.reserve(n_live + n_spoof);
    const std::size_t total = n_live + n_spoof;
    for (std::size_t idx = 0; idx < total; ++idx) {
        const bool live = idx < n_live;
        std::vector<double> z(spec.latent_dim);
        for (double& v : z) v = rng.next_gaussian();
        if (!live) {
            // skew shrinks the attack shift per sample, blending the classes
            const double mag = spec.spoof_magnitude * (1.0 - spec.skew * rng.next_double());
            for (std::size_t j = 0; j < spec.latent_dim; ++j)
                z[j] += mag * spec.spoof_direction[j];
        }
        MultiModalSample s;
        s.id = spec.id + "-" + std::to_string(idx);
        s.domain = spec.id;
        s.label = live ? 1 : 0;
        for (Modality m : kModalities) {
            const auto& mm = spec.mix[static_cast<std::size_t>(m)];
            std::vector<double> x(spec.raw_dim);
            for (std::size_t r = 0; r < spec.raw_dim; ++r) {
                double acc = mm.offset[r];
                for (std::size_t j = 0; j < spec.latent_dim; ++j)
                    acc += mm.mixing[r * spec.latent_dim + j] * z[j];
                x[r] = acc;
            }
            if (mm.noise_sigma > 0.0)
                for (double& v : x) v += mm.noise_sigma * rng.next_gaussian();
            switch (m) {
                case Modality::Rgb: s.rgb = std::move(x); break;
                case Modality::Ir: s.ir = std::move(x); break;
                case Modality::D: s.d = std::move(x); break;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline void apply_missing(std::vector<MultiModalSample>& samples, MissingPattern pattern) {
    for (auto& s : samples) {
        switch (pattern) {
            case MissingPattern::None: break;
            case MissingPattern::MissingD: s.d.reset(); break;
            case MissingPattern::MissingI: s.ir.reset(); break;
            case MissingPattern::MissingDI:
                s.ir.reset();
                s.d.reset();
                break;
        }
    }
}

struct Dataset {
    std::size_t raw_dim = 32;
    std::size_t latent_dim = 8;
    std::uint64_t seed = 0;
    MissingPattern missing = MissingPattern::None;
    std::vector<std::string> domains;
    std::map<std::string, std::vector<MultiModalSample>> splits;
};

namespace detail {

inline void write_sample_line(std::ostream& os, const MultiModalSample& s) {
    auto write_vec = [&os](const std::optional<std::vector<double>>& v) {
        if (!v) {
            os << "null";
            return;
        }
        os << "[";
        for (std::size_t i = 0; i < v->size(); ++i)
            os << (i ? "," : "") << format_double17((*v)[i]);
        os << "]";
    };
    os << "{\"id\":" << nlohmann::json(s.id).dump() << ",\"domain\":"
       << nlohmann::json(s.domain).dump() << ",\"label\":";
    if (s.label)
        os << *s.label;
    else
        os << "null";
    os << ",\"rgb\":";
    write_vec(s.rgb);
    os << ",\"ir\":";
    write_vec(s.ir);
    os << ",\"d\":";
    write_vec(s.d);
    os << "}\n";
}

inline std::vector<double> parse_vector_field(const nlohmann::json& j, const char* key,
                                              std::size_t raw_dim, const std::string& where) {
    const auto& field = j.at(key);
    if (!field.is_array())
        throw LoadError(where + ": field '" + std::string(key) + "' must be an array");
    if (field.size() != raw_dim)
        throw LoadError(where + ": field '" + std::string(key) + "' has " +
                        std::to_string(field.size()) + " values, manifest says " +
                        std::to_string(raw_dim));
    std::vector<double> out(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (!field[i].is_number())
            throw LoadError(where + ": field '" + std::string(key) + "' has a non-numeric entry");
        out[i] = field[i].get<double>();
        if (!std::isfinite(out[i]))
            throw LoadError(where + ": field '" + std::string(key) + "' has a non-finite value");
    }
    return out;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = ds.seed;
    manifest["latent_dim"] = ds.latent_dim;
    manifest["raw_dim"] = {{"rgb", ds.raw_dim}, {"ir", ds.raw_dim}, {"d", ds.raw_dim}};
    manifest["missing_pattern"] = missing_pattern_name(ds.missing);
    manifest["domains"] = ds.domains;
    nlohmann::json splits = nlohmann::json::object();
    for (const auto& [name, samples] : ds.splits)
        splits[name] = {{"file", name + "/samples.jsonl"}, {"count", samples.size()}};
    manifest["splits"] = splits;
    {
        std::ofstream mf(dir / "manifest.json");
        mf << manifest.dump(2) << "\n";
    }
    for (const auto& [name, samples] : ds.splits) {
        std::filesystem::create_directories(dir / name);
        std::ofstream sf(dir / name / "samples.jsonl");
        for (const auto& s : samples) detail::write_sample_line(sf, s);
    }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw LoadError("cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        if (manifest.at("schema_version").get<int>() != 1)
            throw LoadError(manifest_path.string() + ": unsupported schema_version");
        ds.seed = manifest.at("seed").get<std::uint64_t>();
        ds.latent_dim = manifest.at("latent_dim").get<std::size_t>();
        ds.raw_dim = manifest.at("raw_dim").at("rgb").get<std::size_t>();
        ds.missing = parse_missing_pattern(manifest.at("missing_pattern").get<std::string>());
        ds.domains = manifest.at("domains").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }

    for (const auto& [split_name, meta] : manifest.at("splits").items()) {
        const std::filesystem::path file = dir / meta.at("file").get<std::string>();
        std::ifstream sf(file);
        if (!sf) throw LoadError("cannot open " + file.string());
        std::vector<MultiModalSample> samples;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(sf, line)) {
            ++line_no;
            if (line.empty()) continue;
            const std::string where = file.filename().string() + " line " + std::to_string(line_no);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw LoadError(where + ": " + e.what());
            }
            MultiModalSample s;
            try {
                s.id = j.at("id").get<std::string>();
                s.domain = j.at("domain").get<std::string>();
                const auto& label = j.at("label");
                if (!label.is_null()) {
                    const int v = label.get<int>();
                    if (v != 0 && v != 1)
                        throw LoadError(where + ": label must be 0, 1, or null, got " +
                                        std::to_string(v));
                    s.label = v;
                }
                s.rgb = detail::parse_vector_field(j, "rgb", ds.raw_dim, where);
                if (!j.at("ir").is_null())
                    s.ir = detail::parse_vector_field(j, "ir", ds.raw_dim, where);
                if (!j.at("d").is_null())
                    s.d = detail::parse_vector_field(j, "d", ds.raw_dim, where);
            } catch (const nlohmann::json::exception& e) {
                throw LoadError(where + ": " + e.what());
            }
            samples.push_back(std::move(s));
        }
        if (samples.size() != meta.at("count").get<std::size_t>())
            throw LoadError(file.string() + ": has " + std::to_string(samples.size()) +
                            " samples, manifest says " +
                            std::to_string(meta.at("count").get<std::size_t>()));
        ds.splits[split_name] = std::move(samples);
    }
    return ds;
}

}  // namespace mfas
