#pragma once
// Reliability-aware pseudo-labeling. Per sample: deterministic per-modality
// scores from fused features, K dropout-masked prediction passes per modality
// to estimate score variance, min-max certainty weights over the variance
// triple, softmax-normalized score fusion, and thresholding (live iff
// p_hat >= h, boundary inclusive). All forward passes run untaped.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mfas/crossmodal.hpp"
#include "mfas/errors.hpp"
#include "mfas/model.hpp"
#include "mfas/rng.hpp"
#include "mfas/tensor.hpp"

namespace mfas {

struct PseudoLabelRecord {
    std::string sample_id;
    std::array<double, 3> p{};    // deterministic scores, rgb/ir/d
    std::array<double, 3> mu{};   // dropout-pass means
    std::array<double, 3> v{};    // dropout-pass variances (1/K, population)
    std::array<double, 3> w{};    // min-max certainty weights
    std::array<double, 3> psi{};  // softmax of the weights
    double p_hat = 0.0;
    int y_hat = 0;
    int y_naive = 0;
};

inline std::array<double, 3> deterministic_scores(const FasModel& model,
                                                  const FusedFeatureSet& fused) {
    NoGradGuard guard;
    std::array<double, 3> p{};
    for (Modality m : kModalities)
        p[static_cast<std::size_t>(m)] = model.classify(m, fused.of(m)).item();
    return p;
}

struct McStats {
    std::array<double, 3> mu{};
    std::array<double, 3> v{};
};

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // population convention, 1/K
};

inline MeanVar population_stats(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("population_stats: empty score list");
    // a constant sequence has exactly zero variance; without this the mean's
    // summation rounding leaks in as ~1e-34 noise that min-max then amplifies
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (*lo == *hi) return {*lo, 0.0};
    MeanVar out;
    for (double s : scores) out.mean += s;
    out.mean /= static_cast<double>(scores.size());
    for (double s : scores) out.var += (s - out.mean) * (s - out.mean);
    out.var /= static_cast<double>(scores.size());
    return out;
}

// K classifier passes per modality, each on an independently dropout-masked
// copy of the fused feature; variance uses the 1/K population convention.
inline McStats mc_variance(const FasModel& model, const FusedFeatureSet& fused, std::size_t k,
                           double rate, RngStream& rng) {
    if (k < 1) throw ContractError("mc_variance: K must be at least 1 (use naive_label instead)");
    NoGradGuard guard;
    std::array<std::vector<double>, 3> scores;
    for (auto& s : scores) s.reserve(k);
    for (std::size_t pass = 0; pass < k; ++pass) {
        for (Modality m : kModalities) {
            const Tensor& f = fused.of(m);
            auto mask = dropout_mask(f.size(), rate, rng);
            scores[static_cast<std::size_t>(m)].push_back(
                model.classify(m, mask_mul(f, std::move(mask))).item());
        }
    }
    McStats out;
    for (std::size_t m = 0; m < 3; ++m) {
        const MeanVar stats = population_stats(scores[m]);
        out.mu[m] = stats.mean;
        out.v[m] = stats.var;
    }
    return out;
}

// w_mod = 1 - (v_mod - min) / (max - min) over the sample's variance triple.
// Equal variances carry no ranking information: all weights become 1.
inline std::array<double, 3> certainty_weights(const std::array<double, 3>& v) {
    const double lo = std::min({v[0], v[1], v[2]});
    const double hi = std::max({v[0], v[1], v[2]});
    if (hi == lo) return {1.0, 1.0, 1.0};
    std::array<double, 3> w{};
    for (std::size_t m = 0; m < 3; ++m) w[m] = 1.0 - (v[m] - lo) / (hi - lo);
    return w;
}

inline std::array<double, 3> softmax3(const std::array<double, 3>& x) {
    const double m = std::max({x[0], x[1], x[2]});
    std::array<double, 3> e{};
    double denom = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        e[i] = std::exp(x[i] - m);
        denom += e[i];
    }
    for (double& v : e) v /= denom;
    return e;
}

inline double refined_score(const std::array<double, 3>& p, const std::array<double, 3>& w) {
    const auto psi = softmax3(w);
    return psi[0] * p[0] + psi[1] * p[1] + psi[2] * p[2];
}

inline int assign_label(double p_hat, double h = 0.5) { return p_hat >= h ? 1 : 0; }

inline int naive_label(const std::array<double, 3>& p, double h = 0.5) {
    return assign_label((p[0] + p[1] + p[2]) / 3.0, h);
}

// Full record per sample: fuse -> deterministic scores -> dropout variance
// -> certainty weights -> refined score -> labels.
inline std::vector<PseudoLabelRecord> label_batch(const FasModel& model,
                                                  const std::vector<MultiModalSample>& batch,
                                                  std::size_t k, double rate, RngStream& rng,
                                                  double h = 0.5) {
    if (batch.empty()) throw ContractError("label_batch: empty batch");
    NoGradGuard guard;
    std::vector<PseudoLabelRecord> out;
    out.reserve(batch.size());
    for (const auto& sample : batch) {
        FeatureSet fs = model.extract_features(sample);
        FusedFeatureSet fused = fuse(fs, transform(model, fs));
        PseudoLabelRecord rec;
        rec.sample_id = sample.id;
        rec.p = deterministic_scores(model, fused);
        const McStats stats = mc_variance(model, fused, k, rate, rng);
        rec.mu = stats.mu;
        rec.v = stats.v;
        rec.w = certainty_weights(rec.v);
        rec.psi = softmax3(rec.w);
        rec.p_hat = refined_score(rec.p, rec.w);
        rec.y_hat = assign_label(rec.p_hat, h);
        rec.y_naive = naive_label(rec.p, h);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace mfas
