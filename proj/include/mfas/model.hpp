#pragma once
// The trainable system: three per-modality feature extractors (4-layer MLPs),
// three single-affine sigmoid classifiers, and three feature adapters that
// map between modality feature spaces. Adapters are owned here and serialized
// with the model; their training lives in crossmodal.hpp.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfas/adam.hpp"
#include "mfas/errors.hpp"
#include "mfas/rng.hpp"
#include "mfas/synthdata.hpp"
#include "mfas/tensor.hpp"

#include <json.hpp>

namespace mfas {

struct ModelDims {
    std::size_t raw_dim = 32;
    std::size_t feat_dim = 16;
    std::vector<std::size_t> extractor_hidden{64, 64, 32};
    std::size_t adapter_hidden = 32;

    bool operator==(const ModelDims&) const = default;
};

namespace detail {

inline Tensor init_weight(std::size_t in_dim, std::size_t out_dim, RngStream& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(in_dim));
    std::vector<double> data(in_dim * out_dim);
    for (double& v : data) v = limit * (2.0 * rng.next_double() - 1.0);
    Tensor t = Tensor::from({in_dim, out_dim}, std::move(data));
    t.set_requires_grad(true);
    return t;
}

inline Tensor init_bias(std::size_t out_dim) {
    Tensor t = Tensor::zeros({out_dim});
    t.set_requires_grad(true);
    return t;
}

}  // namespace detail

struct AffineParams {
    Tensor weight;  // in x out
    Tensor bias;    // out

    AffineParams clone() const { return {weight.clone(), bias.clone()}; }
};

// Affine layers with ReLU between them and a linear last layer.
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<std::size_t>& dims, RngStream& rng) {
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            layers_.push_back({detail::init_weight(dims[i], dims[i + 1], rng),
                               detail::init_bias(dims[i + 1])});
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = affine(h, layers_[i].weight, layers_[i].bias);
            if (i + 1 < layers_.size()) h = relu(h);
        }
        return h;
    }

    std::size_t depth() const { return layers_.size(); }
    std::vector<AffineParams>& layers() { return layers_; }
    const std::vector<AffineParams>& layers() const { return layers_; }

    Mlp clone() const {
        Mlp m;
        for (const auto& l : layers_) m.layers_.push_back(l.clone());
        return m;
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out,
                 std::size_t first_layer = 0) const {
        for (std::size_t i = first_layer; i < layers_.size(); ++i) {
            out.push_back({prefix + ".l" + std::to_string(i) + ".weight", layers_[i].weight});
            out.push_back({prefix + ".l" + std::to_string(i) + ".bias", layers_[i].bias});
        }
    }

private:
    std::vector<AffineParams> layers_;
};

// Per-modality features; a feature is present iff the raw modality was.
struct FeatureSet {
    std::optional<Tensor> rgb;
    std::optional<Tensor> ir;
    std::optional<Tensor> d;

    const std::optional<Tensor>& of(Modality m) const {
        switch (m) {
            case Modality::Rgb: return rgb;
            case Modality::Ir: return ir;
            default: return d;
        }
    }
    std::optional<Tensor>& of(Modality m) {
        switch (m) {
            case Modality::Rgb: return rgb;
            case Modality::Ir: return ir;
            default: return d;
        }
    }
};

class FasModel {
public:
    FasModel() = default;

    FasModel(const ModelDims& dims, std::size_t frozen_prefix, RngStream& rng)
        : dims_(dims), frozen_prefix_(frozen_prefix) {
        std::vector<std::size_t> ext{dims.raw_dim};
        ext.insert(ext.end(), dims.extractor_hidden.begin(), dims.extractor_hidden.end());
        ext.push_back(dims.feat_dim);
        for (std::size_t m = 0; m < 3; ++m) extractors_[m] = Mlp(ext, rng);
        for (std::size_t m = 0; m < 3; ++m)
            classifiers_[m] = {detail::init_weight(dims.feat_dim, 1, rng), detail::init_bias(1)};
        const std::vector<std::size_t> ad{dims.feat_dim, dims.adapter_hidden, dims.feat_dim};
        for (std::size_t m = 0; m < 3; ++m) adapters_[m] = Mlp(ad, rng);
        if (frozen_prefix_ > extractors_[0].depth())
            throw ContractError("frozen prefix exceeds extractor depth");
    }

    const ModelDims& dims() const { return dims_; }
    std::size_t frozen_prefix() const { return frozen_prefix_; }
    void set_frozen_prefix(std::size_t n) {
        if (n > extractors_[0].depth()) throw ContractError("frozen prefix exceeds extractor depth");
        frozen_prefix_ = n;
    }

    const Mlp& extractor(Modality m) const { return extractors_[static_cast<std::size_t>(m)]; }
    Mlp& extractor(Modality m) { return extractors_[static_cast<std::size_t>(m)]; }
    const AffineParams& classifier(Modality m) const { return classifiers_[static_cast<std::size_t>(m)]; }
    AffineParams& classifier(Modality m) { return classifiers_[static_cast<std::size_t>(m)]; }

    // adapters by the feature space they produce
    const Mlp& adapter_to(Modality m) const { return adapters_[static_cast<std::size_t>(m)]; }
    Mlp& adapter_to(Modality m) { return adapters_[static_cast<std::size_t>(m)]; }

    // f_mod = F_mod(x_mod) for each present modality; absent stays absent.
    FeatureSet extract_features(const MultiModalSample& sample) const {
        if (sample.rgb.size() != dims_.raw_dim)
            throw ShapeError("sample '" + sample.id + "': rgb has " +
                             std::to_string(sample.rgb.size()) + " values, model expects " +
                             std::to_string(dims_.raw_dim));
        FeatureSet fs;
        for (Modality m : kModalities) {
            if (!sample.has(m)) continue;
            const auto& raw = sample.raw(m);
            if (raw.size() != dims_.raw_dim)
                throw ShapeError("sample '" + sample.id + "': " + modality_name(m) + " has " +
                                 std::to_string(raw.size()) + " values, model expects " +
                                 std::to_string(dims_.raw_dim));
            fs.of(m) = extractor(m).forward(Tensor::row_vector(raw));
        }
        return fs;
    }

    // p = sigmoid(affine(f)); output in (0,1)
    Tensor classify(Modality m, const Tensor& feature) const {
        const auto& c = classifier(m);
        return sigmoid(affine(feature, c.weight, c.bias));
    }

    std::vector<NamedParam> params_source() const {
        std::vector<NamedParam> out;
        for (Modality m : kModalities) {
            extractor(m).collect(std::string("extractor_") + modality_name(m), out);
            const auto& c = classifier(m);
            out.push_back({std::string("classifier_") + modality_name(m) + ".weight", c.weight});
            out.push_back({std::string("classifier_") + modality_name(m) + ".bias", c.bias});
        }
        return out;
    }

    std::vector<NamedParam> params_adapters() const {
        std::vector<NamedParam> out;
        for (Modality m : kModalities)
            adapter_to(m).collect(std::string("adapter_to_") + modality_name(m), out);
        return out;
    }

    // Adaptation updates classifiers and the unfrozen extractor suffix only.
    std::vector<NamedParam> params_adapt() const {
        std::vector<NamedParam> out;
        for (Modality m : kModalities) {
            extractor(m).collect(std::string("extractor_") + modality_name(m), out, frozen_prefix_);
            const auto& c = classifier(m);
            out.push_back({std::string("classifier_") + modality_name(m) + ".weight", c.weight});
            out.push_back({std::string("classifier_") + modality_name(m) + ".bias", c.bias});
        }
        return out;
    }

    std::vector<NamedParam> params_all() const {
        auto out = params_source();
        auto ad = params_adapters();
        out.insert(out.end(), ad.begin(), ad.end());
        return out;
    }

    void zero_all_grads() {
        for (auto& p : params_all()) p.tensor.zero_grad();
    }

    // Lazily created named optimizer; the learning rate is refreshed on
    // every acquisition so callers always pin it explicitly.
    AdamState& optimizer(const std::string& group, double lr) {
        auto [it, inserted] = optimizers_.try_emplace(group, AdamState(lr));
        it->second.set_lr(lr);
        return it->second;
    }
    const std::map<std::string, AdamState>& optimizers() const { return optimizers_; }
    std::map<std::string, AdamState>& optimizers() { return optimizers_; }

    FasModel clone() const {
        FasModel m;
        m.dims_ = dims_;
        m.frozen_prefix_ = frozen_prefix_;
        for (std::size_t i = 0; i < 3; ++i) {
            m.extractors_[i] = extractors_[i].clone();
            m.classifiers_[i] = classifiers_[i].clone();
            m.adapters_[i] = adapters_[i].clone();
        }
        m.optimizers_ = optimizers_;
        return m;
    }

private:
    ModelDims dims_;
    std::size_t frozen_prefix_ = 2;
    std::array<Mlp, 3> extractors_;
    std::array<AffineParams, 3> classifiers_;
    std::array<Mlp, 3> adapters_;  // produce rgb, ir, d features respectively
    std::map<std::string, AdamState> optimizers_;
};

// Supervised source objective: sum over modalities of the two-term
// cross-entropy of C_mod(F_mod(x_mod)) against the labels, averaged over
// the batch. Requires fully-modal, labeled samples.
inline Tensor source_loss(const FasModel& model, const std::vector<MultiModalSample>& batch) {
    if (batch.empty()) throw ContractError("source_loss: empty batch");
    const std::size_t raw_dim = model.dims().raw_dim;
    std::vector<double> labels;
    labels.reserve(batch.size());
    for (const auto& s : batch) {
        if (!s.label) throw ContractError("source_loss: sample '" + s.id + "' has no label");
        if (!s.ir || !s.d)
            throw ContractError("source_loss: sample '" + s.id + "' is not fully modal");
        labels.push_back(static_cast<double>(*s.label));
    }
    Tensor total;
    for (Modality m : kModalities) {
        std::vector<double> rows(batch.size() * raw_dim);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto& raw = batch[b].raw(m);
            if (raw.size() != raw_dim)
                throw ShapeError("source_loss: sample '" + batch[b].id + "' " + modality_name(m) +
                                 " dimension mismatch");
            std::copy(raw.begin(), raw.end(), rows.begin() + b * raw_dim);
        }
        Tensor x = Tensor::from({batch.size(), raw_dim}, std::move(rows));
        Tensor features = model.extractor(m).forward(x);
        Tensor p = model.classify(m, features);
        Tensor loss_m = sum(binary_cross_entropy(p, labels));
        total = total.defined() ? add(total, loss_m) : loss_m;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

// Epochs of shuffled minibatch Adam on the source objective. Returns the
// loss curve: entry 0 is the initial mean loss, then one epoch-mean entry
// per epoch.
inline std::vector<double> train_source(FasModel& model, std::vector<MultiModalSample> pool,
                                        std::size_t epochs, double lr, std::size_t batch_size,
                                        RngStream& rng) {
    if (pool.empty()) throw ContractError("train_source: empty source pool");
    std::vector<double> curve;
    {
        NoGradGuard guard;
        double init = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < pool.size(); start += batch_size, ++batches) {
            const std::size_t end = std::min(start + batch_size, pool.size());
            init += source_loss(model, {pool.begin() + start, pool.begin() + end}).item();
        }
        curve.push_back(init / static_cast<double>(batches));
    }
    if (epochs == 0) return curve;  // untouched model, init row only
    AdamState& opt = model.optimizer("source", lr);
    auto params = model.params_source();
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        shuffle(pool, rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < pool.size(); start += batch_size, ++batches) {
            const std::size_t end = std::min(start + batch_size, pool.size());
            for (auto& p : params) p.tensor.zero_grad();
            Tensor loss = source_loss(model, {pool.begin() + start, pool.begin() + end});
            loss.backward();
            opt.step(params);
            epoch_loss += loss.item();
        }
        curve.push_back(epoch_loss / static_cast<double>(batches));
    }
    return curve;
}

// --- model file -------------------------------------------------------------

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
    return nlohmann::json{{"shape", t.shape()}, {"data", t.value()}};
}

inline void tensor_from_json(Tensor& t, const nlohmann::json& j, const std::string& name) {
    const auto shape = j.at("shape").get<Shape>();
    if (shape != t.shape())
        throw LoadError("parameter '" + name + "': shape " + shape_str(shape) +
                        " does not match model dims " + shape_str(t.shape()));
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != t.size())
        throw LoadError("parameter '" + name + "': wrong data length");
    t.value() = std::move(data);
}

}  // namespace detail

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json model_to_json(const FasModel& model) {
    nlohmann::json j;
    j["schema_version"] = kModelSchemaVersion;
    j["dims"] = {{"raw_dim", model.dims().raw_dim},
                 {"feat_dim", model.dims().feat_dim},
                 {"extractor_hidden", model.dims().extractor_hidden},
                 {"adapter_hidden", model.dims().adapter_hidden}};
    j["frozen_prefix"] = model.frozen_prefix();
    nlohmann::json params = nlohmann::json::object();
    for (const auto& p : model.params_all()) params[p.name] = detail::tensor_to_json(p.tensor);
    j["params"] = params;
    nlohmann::json opts = nlohmann::json::object();
    for (const auto& [group, state] : model.optimizers()) {
        nlohmann::json moments = nlohmann::json::object();
        for (const auto& [name, mv] : state.moments())
            moments[name] = {{"m", mv.m}, {"v", mv.v}};
        opts[group] = {{"lr", state.lr()},       {"beta1", state.beta1()}, {"beta2", state.beta2()},
                       {"eps", state.eps()},     {"step", state.step_count()},
                       {"moments", moments}};
    }
    j["optimizers"] = opts;
    return j;
}

inline void save_model(const FasModel& model, const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path);
    if (!f) throw LoadError("cannot open " + path.string() + " for writing");
    f << model_to_json(model).dump(1) << "\n";
}

inline FasModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != kModelSchemaVersion)
            throw LoadError("model file: unsupported schema_version " +
                            j.at("schema_version").dump());
        ModelDims dims;
        dims.raw_dim = j.at("dims").at("raw_dim").get<std::size_t>();
        dims.feat_dim = j.at("dims").at("feat_dim").get<std::size_t>();
        dims.extractor_hidden = j.at("dims").at("extractor_hidden").get<std::vector<std::size_t>>();
        dims.adapter_hidden = j.at("dims").at("adapter_hidden").get<std::size_t>();
        RngStream scratch(0);
        FasModel model(dims, j.at("frozen_prefix").get<std::size_t>(), scratch);
        const auto& params = j.at("params");
        for (auto& p : model.params_all()) {
            if (!params.contains(p.name)) throw LoadError("model file: missing parameter '" + p.name + "'");
            detail::tensor_from_json(p.tensor, params.at(p.name), p.name);
        }
        for (const auto& [group, oj] : j.at("optimizers").items()) {
            AdamState state(oj.at("lr").get<double>(), oj.at("beta1").get<double>(),
                            oj.at("beta2").get<double>(), oj.at("eps").get<double>());
            state.set_step_count(oj.at("step").get<std::int64_t>());
            for (const auto& [name, mv] : oj.at("moments").items()) {
                AdamState::Moments mom;
                mom.m = mv.at("m").get<std::vector<double>>();
                mom.v = mv.at("v").get<std::vector<double>>();
                state.moments()[name] = std::move(mom);
            }
            model.optimizers()[group] = std::move(state);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("model file: ") + e.what());
    }
}

inline FasModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace mfas
