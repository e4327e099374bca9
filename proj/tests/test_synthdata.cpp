#include "mfas/synthdata.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mfas/config.hpp"
#include "mfas/rng.hpp"

using namespace mfas;
namespace fs = std::filesystem;

namespace {

DomainSpec tiny_spec(std::uint64_t seed, double sigma = 0.0) {
    DataConfig cfg;
    cfg.source_noise = {sigma, sigma, sigma};
    auto domains = build_domains(cfg, seed);
    return domains.front();
}

// plain logistic regression trained by gradient descent; deliberately
// independent of the library's tensor machinery
double linear_probe_accuracy(const std::vector<MultiModalSample>& samples) {
    const std::size_t dim = samples.front().rgb.size();
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    const double lr = 0.05;
    for (int epoch = 0; epoch < 400; ++epoch) {
        std::vector<double> gw(dim, 0.0);
        double gb = 0.0;
        for (const auto& s : samples) {
            double z = b;
            for (std::size_t i = 0; i < dim; ++i) z += w[i] * s.rgb[i];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(*s.label);
            for (std::size_t i = 0; i < dim; ++i) gw[i] += err * s.rgb[i];
            gb += err;
        }
        for (std::size_t i = 0; i < dim; ++i) w[i] -= lr * gw[i] / samples.size();
        b -= lr * gb / samples.size();
    }
    std::size_t correct = 0;
    for (const auto& s : samples) {
        double z = b;
        for (std::size_t i = 0; i < dim; ++i) z += w[i] * s.rgb[i];
        if ((z >= 0.0 ? 1 : 0) == *s.label) ++correct;
    }
    return static_cast<double>(correct) / samples.size();
}

// mean-embedding distance between the rgb clouds of two sample sets
double mean_discrepancy(const std::vector<MultiModalSample>& a,
                        const std::vector<MultiModalSample>& b) {
    const std::size_t dim = a.front().rgb.size();
    std::vector<double> ma(dim, 0.0), mb(dim, 0.0);
    for (const auto& s : a)
        for (std::size_t i = 0; i < dim; ++i) ma[i] += s.rgb[i] / a.size();
    for (const auto& s : b)
        for (std::size_t i = 0; i < dim; ++i) mb[i] += s.rgb[i] / b.size();
    double d2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) d2 += (ma[i] - mb[i]) * (ma[i] - mb[i]);
    return std::sqrt(d2);
}

fs::path temp_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / "mfas_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Generate, NoiseFreeClassesDifferByAttackImage) {
    DomainSpec spec = tiny_spec(3, 0.0);
    spec.skew = 0.0;
    RngStream rng(5);
    auto samples = generate_domain(spec, 1, 1, rng);
    ASSERT_EQ(samples.size(), 2u);
    EXPECT_EQ(*samples[0].label, 1);
    EXPECT_EQ(*samples[1].label, 0);
    // latents differ, so compare the class difference against the attack
    // image under M for the *same* latent: regenerate with sigma=0 and
    // identical rng so both samples share draws? Instead verify directly:
    // x_spoof - x_live for a shared latent equals M * (mag * dir).
    for (Modality m : kModalities) {
        const auto& mm = spec.mix[static_cast<std::size_t>(m)];
        std::vector<double> shift(spec.raw_dim, 0.0);
        for (std::size_t r = 0; r < spec.raw_dim; ++r)
            for (std::size_t j = 0; j < spec.latent_dim; ++j)
                shift[r] += mm.mixing[r * spec.latent_dim + j] * spec.spoof_magnitude *
                            spec.spoof_direction[j];
        // build both classes from one latent by hand using the spec
        std::vector<double> z(spec.latent_dim, 0.7);
        std::vector<double> live(spec.raw_dim), spoof(spec.raw_dim);
        for (std::size_t r = 0; r < spec.raw_dim; ++r) {
            double acc = mm.offset[r];
            for (std::size_t j = 0; j < spec.latent_dim; ++j)
                acc += mm.mixing[r * spec.latent_dim + j] * z[j];
            live[r] = acc;
            double acc2 = mm.offset[r];
            for (std::size_t j = 0; j < spec.latent_dim; ++j)
                acc2 += mm.mixing[r * spec.latent_dim + j] *
                        (z[j] + spec.spoof_magnitude * spec.spoof_direction[j]);
            spoof[r] = acc2;
        }
        for (std::size_t r = 0; r < spec.raw_dim; ++r)
            EXPECT_NEAR(spoof[r] - live[r], shift[r], 1e-12);
    }
}

TEST(Generate, DeterministicGivenSeed) {
    DomainSpec spec = tiny_spec(9, 0.2);
    RngStream r1(21), r2(21);
    auto a = generate_domain(spec, 10, 10, r1);
    auto b = generate_domain(spec, 10, 10, r2);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].rgb, b[i].rgb);
        EXPECT_EQ(*a[i].ir, *b[i].ir);
        EXPECT_EQ(*a[i].d, *b[i].d);
    }
}

TEST(Generate, LinearProbeSeparatesDefaultConfig) {
    DomainSpec spec = tiny_spec(17, 0.1);
    RngStream rng(17);
    auto samples = generate_domain(spec, 60, 60, rng);
    EXPECT_GE(linear_probe_accuracy(samples), 0.95);
}

TEST(Generate, ClassMeansDifferInEveryModality) {
    DomainSpec spec = tiny_spec(29, 0.1);
    RngStream rng(29);
    auto samples = generate_domain(spec, 50, 50, rng);
    for (Modality m : kModalities) {
        std::vector<double> live(spec.raw_dim, 0.0), spoof(spec.raw_dim, 0.0);
        for (const auto& s : samples) {
            auto& acc = *s.label == 1 ? live : spoof;
            for (std::size_t i = 0; i < spec.raw_dim; ++i) acc[i] += s.raw(m)[i] / 50.0;
        }
        double d2 = 0.0;
        for (std::size_t i = 0; i < spec.raw_dim; ++i)
            d2 += (live[i] - spoof[i]) * (live[i] - spoof[i]);
        EXPECT_GT(std::sqrt(d2), 1.0) << modality_name(m);
    }
}

TEST(Generate, RankDeficientMixingRejected) {
    DomainSpec spec = tiny_spec(31);
    auto& mixing = spec.mix[0].mixing;
    // make column 1 a copy of column 0
    for (std::size_t r = 0; r < spec.raw_dim; ++r)
        mixing[r * spec.latent_dim + 1] = mixing[r * spec.latent_dim + 0];
    RngStream rng(1);
    EXPECT_THROW(generate_domain(spec, 2, 2, rng), GenerationError);
}

TEST(Generate, ZeroClassCountRejected) {
    DomainSpec spec = tiny_spec(33);
    RngStream rng(1);
    EXPECT_THROW(generate_domain(spec, 0, 2, rng), ContractError);
}

TEST(Generate, ShiftMonotonicity) {
    // growing the offset distance between two domains grows the mean
    // cross-domain discrepancy, checked at 3 shift levels
    DataConfig cfg;
    cfg.source_noise = {0.1, 0.1, 0.1};
    std::vector<double> discrepancy;
    for (double level : {0.0, 1.0, 2.5}) {
        DataConfig shifted = cfg;
        shifted.target_offset = {level, level, level};
        shifted.target_mix_jitter = {0.0, 0.0, 0.0};
        auto domains = build_domains(shifted, 77);
        RngStream ra(1), rb(2);
        auto base = generate_domain(domains.front(), 80, 80, ra);
        auto moved = generate_domain(domains.back(), 80, 80, rb);
        discrepancy.push_back(mean_discrepancy(base, moved));
    }
    EXPECT_LT(discrepancy[0], discrepancy[1]);
    EXPECT_LT(discrepancy[1], discrepancy[2]);
}

TEST(ApplyMissing, PatternsStripExactFields) {
    DomainSpec spec = tiny_spec(41);
    RngStream rng(41);
    auto base = generate_domain(spec, 3, 3, rng);

    auto none = base;
    apply_missing(none, MissingPattern::None);
    for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_EQ(none[i].rgb, base[i].rgb);
        EXPECT_TRUE(none[i].ir.has_value());
        EXPECT_TRUE(none[i].d.has_value());
    }

    auto missing_d = base;
    apply_missing(missing_d, MissingPattern::MissingD);
    for (const auto& s : missing_d) {
        EXPECT_FALSE(s.d.has_value());
        EXPECT_TRUE(s.ir.has_value());
    }

    auto missing_di = base;
    apply_missing(missing_di, MissingPattern::MissingDI);
    for (const auto& s : missing_di) {
        EXPECT_FALSE(s.d.has_value());
        EXPECT_FALSE(s.ir.has_value());
        EXPECT_FALSE(s.rgb.empty());
    }
}

TEST(DatasetIo, RoundTripIsExact) {
    DomainSpec spec = tiny_spec(55, 0.3);
    RngStream rng(55);
    Dataset ds;
    ds.raw_dim = spec.raw_dim;
    ds.latent_dim = spec.latent_dim;
    ds.seed = 55;
    ds.domains = {spec.id};
    ds.splits["train"] = generate_domain(spec, 50, 50, rng);
    auto unlabeled = generate_domain(spec, 25, 25, rng);
    for (auto& s : unlabeled) s.label.reset();
    apply_missing(unlabeled, MissingPattern::MissingD);
    ds.splits["target"] = unlabeled;

    const auto dir = temp_dir("roundtrip");
    write_dataset(ds, dir);
    Dataset back = read_dataset(dir);

    ASSERT_EQ(back.splits.size(), 2u);
    for (const auto& [name, samples] : ds.splits) {
        const auto& loaded = back.splits.at(name);
        ASSERT_EQ(loaded.size(), samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            EXPECT_EQ(loaded[i].id, samples[i].id);
            EXPECT_EQ(loaded[i].domain, samples[i].domain);
            EXPECT_EQ(loaded[i].label, samples[i].label);
            EXPECT_EQ(loaded[i].rgb, samples[i].rgb);  // bit-exact
            EXPECT_EQ(loaded[i].ir, samples[i].ir);
            EXPECT_EQ(loaded[i].d, samples[i].d);
        }
    }
}

TEST(DatasetIo, DimensionMismatchNamesLine) {
    DomainSpec spec = tiny_spec(60);
    RngStream rng(60);
    Dataset ds;
    ds.raw_dim = spec.raw_dim;
    ds.seed = 60;
    ds.domains = {spec.id};
    ds.splits["train"] = generate_domain(spec, 2, 2, rng);
    const auto dir = temp_dir("dim_mismatch");
    write_dataset(ds, dir);

    // truncate one value from the rgb array on line 3
    const auto file = dir / "train" / "samples.jsonl";
    std::ifstream in(file);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    in.close();
    auto pos = lines[2].find("\"rgb\":[");
    ASSERT_NE(pos, std::string::npos);
    auto comma = lines[2].find(',', pos + 7);
    lines[2].erase(pos + 7, comma - pos - 6);
    std::ofstream out(file);
    for (const auto& l : lines) out << l << "\n";
    out.close();

    try {
        read_dataset(dir);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(DatasetIo, BadLabelRejected) {
    DomainSpec spec = tiny_spec(61);
    RngStream rng(61);
    Dataset ds;
    ds.raw_dim = spec.raw_dim;
    ds.seed = 61;
    ds.domains = {spec.id};
    ds.splits["train"] = generate_domain(spec, 1, 1, rng);
    const auto dir = temp_dir("bad_label");
    write_dataset(ds, dir);

    const auto file = dir / "train" / "samples.jsonl";
    std::ifstream in(file);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    in.close();
    auto pos = lines[0].find("\"label\":1");
    ASSERT_NE(pos, std::string::npos);
    lines[0].replace(pos, 9, "\"label\":2");
    std::ofstream out(file);
    for (const auto& l : lines) out << l << "\n";
    out.close();

    EXPECT_THROW(read_dataset(dir), LoadError);
}

TEST(DatasetIo, NonFiniteValueRejected) {
    DomainSpec spec = tiny_spec(62);
    RngStream rng(62);
    Dataset ds;
    ds.raw_dim = spec.raw_dim;
    ds.seed = 62;
    ds.domains = {spec.id};
    ds.splits["train"] = generate_domain(spec, 1, 1, rng);
    const auto dir = temp_dir("nonfinite");
    write_dataset(ds, dir);

    const auto file = dir / "train" / "samples.jsonl";
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);
    std::string rest, l2;
    while (std::getline(in, l2)) rest += l2 + "\n";
    in.close();
    auto pos = line.find("\"rgb\":[");
    ASSERT_NE(pos, std::string::npos);
    auto comma = line.find(',', pos + 7);
    line.replace(pos + 7, comma - pos - 7, "NaN");
    std::ofstream out(file);
    out << line << "\n" << rest;
    out.close();

    EXPECT_THROW(read_dataset(dir), LoadError);
}

TEST(DatasetIo, MissingManifestRejected) {
    const auto dir = temp_dir("no_manifest");
    EXPECT_THROW(read_dataset(dir), LoadError);
}

TEST(Config, UnknownFieldNamed) {
    nlohmann::json j{{"adapt", {{"learning_rate", 1e-3}}}};
    try {
        experiment_config_from_json(j);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field_name, "adapt.learning_rate");
    }
}

TEST(Config, RangeValidation) {
    nlohmann::json j{{"adapt", {{"k", 0}}}};
    EXPECT_THROW(experiment_config_from_json(j), ConfigError);
    nlohmann::json j2{{"adapt", {{"strategy", "sometimes"}}}};
    EXPECT_THROW(experiment_config_from_json(j2), ConfigError);
    nlohmann::json j3{{"threshold_mode", "fixed:1.5"}};
    EXPECT_THROW(experiment_config_from_json(j3), ConfigError);
}

TEST(Config, OverridesAndDefaults) {
    ExperimentConfig defaults;
    EXPECT_EQ(defaults.adapt.k, 10u);
    EXPECT_EQ(defaults.adapt.batch_size, 32u);
    EXPECT_DOUBLE_EQ(defaults.adapt.lr, 1e-6);
    EXPECT_DOUBLE_EQ(defaults.adapt.beta, 500.0);
    EXPECT_DOUBLE_EQ(defaults.adapt.pseudo_threshold, 0.5);
    EXPECT_DOUBLE_EQ(defaults.train.lr, 1e-4);
    EXPECT_EQ(defaults.train.epochs, 10u);

    nlohmann::json doc = experiment_config_to_json(defaults);
    apply_override(doc, "adapt.lr=0.001");
    apply_override(doc, "missing=di");
    ExperimentConfig c = experiment_config_from_json(doc);
    EXPECT_DOUBLE_EQ(c.adapt.lr, 0.001);
    EXPECT_EQ(c.missing, "di");
}

TEST(Domains, BuildIsDeterministic) {
    DataConfig cfg;
    auto a = build_domains(cfg, 123);
    auto b = build_domains(cfg, 123);
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(a.size(), cfg.n_source_domains + 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(a[i].spoof_direction, b[i].spoof_direction);
        for (std::size_t m = 0; m < 3; ++m)
            EXPECT_EQ(a[i].mix[m].mixing, b[i].mix[m].mixing);
    }
    EXPECT_EQ(a.back().id, "t0");
}
