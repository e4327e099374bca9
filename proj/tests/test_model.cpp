#include "mfas/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mfas/config.hpp"
#include "mfas/metrics.hpp"
#include "mfas/rng.hpp"
#include "testutil.hpp"

using namespace mfas;
namespace fs = std::filesystem;

namespace {

FasModel small_model(std::uint64_t seed = 5, std::size_t raw_dim = 8) {
    ModelDims dims;
    dims.raw_dim = raw_dim;
    dims.feat_dim = 6;
    dims.extractor_hidden = {12, 10, 8};
    dims.adapter_hidden = 8;
    RngStream rng(seed);
    return FasModel(dims, 2, rng);
}

std::vector<MultiModalSample> small_batch(const DomainSpec& spec, std::size_t n_live,
                                          std::size_t n_spoof, std::uint64_t seed) {
    RngStream rng(seed);
    return generate_domain(spec, n_live, n_spoof, rng);
}

DomainSpec small_domain(std::uint64_t seed) {
    DataConfig cfg;
    cfg.raw_dim = 8;
    cfg.latent_dim = 4;
    return build_domains(cfg, seed).front();
}

void pin_classifiers(FasModel& model, double weight, double bias) {
    for (Modality m : kModalities) {
        auto& c = model.classifier(m);
        std::fill(c.weight.value().begin(), c.weight.value().end(), weight);
        c.bias.value()[0] = bias;
    }
}

}  // namespace

TEST(ExtractFeatures, MissingModalitiesStayAbsent) {
    FasModel model = small_model();
    auto batch = small_batch(small_domain(1), 1, 1, 2);
    apply_missing(batch, MissingPattern::MissingDI);
    FeatureSet fs = model.extract_features(batch[0]);
    EXPECT_TRUE(fs.rgb.has_value());
    EXPECT_FALSE(fs.ir.has_value());
    EXPECT_FALSE(fs.d.has_value());
    EXPECT_EQ(fs.rgb->size(), model.dims().feat_dim);
}

TEST(ExtractFeatures, FullSampleYieldsThreeFeatures) {
    FasModel model = small_model();
    auto batch = small_batch(small_domain(2), 1, 1, 3);
    FeatureSet fs = model.extract_features(batch[0]);
    for (Modality m : kModalities) {
        ASSERT_TRUE(fs.of(m).has_value());
        EXPECT_EQ(fs.of(m)->size(), model.dims().feat_dim);
    }
}

TEST(ExtractFeatures, DeterministicAndRestrictionConsistent) {
    FasModel model = small_model();
    auto batch = small_batch(small_domain(3), 1, 1, 4);
    FeatureSet a = model.extract_features(batch[0]);
    FeatureSet b = model.extract_features(batch[0]);
    EXPECT_EQ(a.rgb->value(), b.rgb->value());
    EXPECT_EQ(a.ir->value(), b.ir->value());

    // removing a modality does not perturb the others (independent extractors)
    auto stripped = batch;
    apply_missing(stripped, MissingPattern::MissingD);
    FeatureSet c = model.extract_features(stripped[0]);
    EXPECT_EQ(c.rgb->value(), a.rgb->value());
    EXPECT_EQ(c.ir->value(), a.ir->value());
    EXPECT_FALSE(c.d.has_value());
}

TEST(ExtractFeatures, RawDimMismatchThrows) {
    FasModel model = small_model();
    MultiModalSample s;
    s.id = "bad";
    s.rgb.assign(7, 0.0);  // model expects 8
    EXPECT_THROW(model.extract_features(s), ShapeError);
}

TEST(ExtractFeatures, ClassifierOutputsInOpenUnitInterval) {
    FasModel model = small_model();
    auto batch = small_batch(small_domain(4), 4, 4, 5);
    for (const auto& s : batch) {
        FeatureSet fs = model.extract_features(s);
        for (Modality m : kModalities) {
            const double p = model.classify(m, *fs.of(m)).item();
            EXPECT_GT(p, 0.0);
            EXPECT_LT(p, 1.0);
        }
    }
}

TEST(SourceLoss, NearZeroWhenConfidentAndCorrect) {
    FasModel model = small_model();
    pin_classifiers(model, 0.0, 25.0);  // sigmoid(25) ~ 1 - 1e-11
    auto batch = small_batch(small_domain(5), 2, 1, 6);
    for (auto& s : batch) s.label = 1;
    EXPECT_NEAR(source_loss(model, batch).item(), 0.0, 1e-6);
}

TEST(SourceLoss, ThreeLnTwoAtChanceOutputs) {
    FasModel model = small_model();
    pin_classifiers(model, 0.0, 0.0);  // sigmoid(0) = 0.5 for every modality
    auto batch = small_batch(small_domain(6), 1, 1, 7);
    batch.resize(1);
    batch[0].label = 1;
    EXPECT_NEAR(source_loss(model, batch).item(), 3.0 * std::log(2.0), 1e-12);
}

TEST(SourceLoss, MissingLabelOrModalityRejected) {
    FasModel model = small_model();
    auto batch = small_batch(small_domain(7), 1, 1, 8);
    auto unlabeled = batch;
    unlabeled[0].label.reset();
    EXPECT_THROW(source_loss(model, unlabeled), ContractError);
    auto partial = batch;
    apply_missing(partial, MissingPattern::MissingD);
    EXPECT_THROW(source_loss(model, partial), ContractError);
}

TEST(SourceLoss, GradientMatchesFiniteDifferences) {
    FasModel model = small_model(11);
    auto batch = small_batch(small_domain(11), 2, 2, 12);
    auto params = model.params_source();
    for (auto& p : params) p.tensor.zero_grad();
    source_loss(model, batch).backward();
    auto loss_value = [&]() { return source_loss(model, batch).item(); };
    RngStream pick(13);
    for (int check = 0; check < 12; ++check) {
        auto& p = params[pick.next_below(params.size())];
        const std::size_t idx = pick.next_below(p.tensor.size());
        const double analytic = p.tensor.has_grad() ? p.tensor.grad()[idx] : 0.0;
        const double numeric = testutil::central_diff(loss_value, &p.tensor.value()[idx]);
        EXPECT_LE(testutil::rel_err(analytic, numeric), 1e-4) << p.name << "[" << idx << "]";
    }
}

TEST(SourceLoss, OverfitsFixedBatch) {
    FasModel model = small_model(21);
    auto batch = small_batch(small_domain(21), 4, 4, 22);
    AdamState& opt = model.optimizer("source", 1e-3);
    auto params = model.params_source();
    for (int step = 0; step < 200; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        Tensor loss = source_loss(model, batch);
        loss.backward();
        opt.step(params);
    }
    EXPECT_LT(source_loss(model, batch).item(), 0.05);
}

TEST(TrainSource, ZeroEpochsLeavesModelUnchanged) {
    FasModel model = small_model(31);
    const auto before = model_to_json(model);
    auto pool = small_batch(small_domain(31), 8, 8, 32);
    RngStream rng(33);
    auto curve = train_source(model, pool, 0, 1e-4, 4, rng);
    EXPECT_EQ(curve.size(), 1u);
    EXPECT_EQ(model_to_json(model), before);
}

TEST(TrainSource, DeterministicAndCurveShape) {
    auto run = [&]() {
        FasModel model = small_model(41);
        auto pool = small_batch(small_domain(41), 20, 20, 42);
        RngStream rng(43);
        auto curve = train_source(model, pool, 3, 1e-3, 8, rng);
        return std::pair{model_to_json(model).dump(), curve};
    };
    auto [m1, c1] = run();
    auto [m2, c2] = run();
    EXPECT_EQ(m1, m2);
    EXPECT_EQ(c1, c2);
    EXPECT_EQ(c1.size(), 4u);  // init + 3 epochs
}

TEST(TrainSource, LearnsSeparableSourceDomains) {
    // reduced-size version of the default protocol: training AUC >= 0.99 and
    // a non-increasing tail on the loss curve
    DataConfig dcfg;
    dcfg.raw_dim = 16;
    dcfg.latent_dim = 6;
    auto domains = build_domains(dcfg, 51);
    std::vector<MultiModalSample> pool;
    for (std::size_t k = 0; k + 1 < domains.size(); ++k) {
        RngStream rng(100 + k);
        auto part = generate_domain(domains[k], 30, 30, rng);
        pool.insert(pool.end(), part.begin(), part.end());
    }
    ModelDims dims;
    dims.raw_dim = 16;
    dims.feat_dim = 8;
    dims.extractor_hidden = {24, 16, 12};
    dims.adapter_hidden = 12;
    RngStream init(52);
    FasModel model(dims, 2, init);
    RngStream rng(53);
    auto curve = train_source(model, pool, 10, 1e-3, 32, rng);

    ASSERT_EQ(curve.size(), 11u);
    EXPECT_LE(curve[10], curve[8] + 1e-9);
    EXPECT_LE(curve[9], curve[7] + 1e-9);

    std::vector<ScoredSample> scored;
    {
        NoGradGuard guard;
        for (const auto& s : pool) {
            FeatureSet fs = model.extract_features(s);
            double mean_p = 0.0;
            for (Modality m : kModalities) mean_p += model.classify(m, *fs.of(m)).item() / 3.0;
            scored.push_back({mean_p, *s.label});
        }
    }
    EXPECT_GE(auc(scored), 0.99);
}

TEST(ModelIo, RoundTripIsBitExact) {
    FasModel model = small_model(61);
    // give it optimizer state and gradients worth of history
    auto batch = small_batch(small_domain(61), 3, 3, 62);
    AdamState& opt = model.optimizer("source", 1e-3);
    auto params = model.params_source();
    for (int step = 0; step < 3; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        source_loss(model, batch).backward();
        opt.step(params);
    }

    const fs::path path = fs::temp_directory_path() / "mfas_tests" / "model_roundtrip.json";
    fs::create_directories(path.parent_path());
    save_model(model, path);
    FasModel loaded = load_model(path);

    auto orig = model.params_all();
    auto back = loaded.params_all();
    ASSERT_EQ(orig.size(), back.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        EXPECT_EQ(orig[i].name, back[i].name);
        EXPECT_EQ(orig[i].tensor.value(), back[i].tensor.value()) << orig[i].name;
    }
    EXPECT_EQ(loaded.frozen_prefix(), model.frozen_prefix());
    const auto& o1 = model.optimizers().at("source");
    const auto& o2 = loaded.optimizers().at("source");
    EXPECT_EQ(o1.step_count(), o2.step_count());
    EXPECT_EQ(o1.moments().size(), o2.moments().size());
    for (const auto& [name, mv] : o1.moments()) {
        EXPECT_EQ(mv.m, o2.moments().at(name).m);
        EXPECT_EQ(mv.v, o2.moments().at(name).v);
    }

    // predictions identical before and after the round trip
    FeatureSet fs1 = model.extract_features(batch[0]);
    FeatureSet fs2 = loaded.extract_features(batch[0]);
    for (Modality m : kModalities)
        EXPECT_EQ(model.classify(m, *fs1.of(m)).item(), loaded.classify(m, *fs2.of(m)).item());
}

TEST(ModelIo, TruncatedFileRejected) {
    FasModel model = small_model(71);
    const fs::path path = fs::temp_directory_path() / "mfas_tests" / "model_truncated.json";
    fs::create_directories(path.parent_path());
    save_model(model, path);
    // chop the file in half
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path);
    out << content.substr(0, content.size() / 2);
    out.close();
    EXPECT_THROW(load_model(path), LoadError);
}

TEST(ModelIo, SchemaVersionMismatchRejected) {
    FasModel model = small_model(81);
    nlohmann::json j = model_to_json(model);
    j["schema_version"] = 99;
    EXPECT_THROW(model_from_json(j), LoadError);
}

TEST(ModelClone, IndependentDeepCopy) {
    FasModel model = small_model(91);
    FasModel copy = model.clone();
    copy.classifier(Modality::Rgb).bias.value()[0] += 1.0;
    EXPECT_NE(copy.classifier(Modality::Rgb).bias.value()[0],
              model.classifier(Modality::Rgb).bias.value()[0]);
    EXPECT_EQ(copy.extractor(Modality::Ir).layers()[0].weight.value(),
              model.extractor(Modality::Ir).layers()[0].weight.value());
}

TEST(ParamGroups, AdaptGroupRespectsFrozenPrefix) {
    FasModel model = small_model(95);
    auto adapt = model.params_adapt();
    for (const auto& p : adapt) {
        EXPECT_EQ(p.name.find(".l0."), std::string::npos) << p.name;
        EXPECT_EQ(p.name.find(".l1."), std::string::npos) << p.name;
        EXPECT_EQ(p.name.find("adapter"), std::string::npos) << p.name;
    }
    // 3 modalities x (2 unfrozen layers x 2 tensors + classifier w/b)
    EXPECT_EQ(adapt.size(), 3u * (2 * 2 + 2));
}
