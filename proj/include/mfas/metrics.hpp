#pragma once
// Evaluation metrics for binary liveness scores: AUC (Mann-Whitney), HTER at
// a threshold, and Youden-index threshold selection. Label convention:
// 1 = live (positive), 0 = spoof. A sample is classified live iff its score
// is >= the threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfas/errors.hpp"

#include <json.hpp>

namespace mfas {

struct ScoredSample {
    double score;
    int label;  // 1 live, 0 spoof
};

namespace detail {

inline void check_two_classes(std::span<const ScoredSample> samples, const char* metric) {
    std::size_t live = 0, spoof = 0;
    for (const auto& s : samples) (s.label == 1 ? live : spoof)++;
    if (live == 0 || spoof == 0)
        throw UndefinedMetricError(std::string(metric) + " undefined: needs both classes, got " +
                                   std::to_string(live) + " live / " + std::to_string(spoof) +
                                   " spoof samples");
}

}  // namespace detail

// Probability that a random live sample outscores a random spoof sample,
// ties counted 1/2. Rank-based, equivalent to the pairwise statistic.
inline double auc(std::span<const ScoredSample> samples) {
    detail::check_two_classes(samples, "AUC");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return samples[a].score < samples[b].score;
    });
    double live_rank_sum = 0.0;
    std::size_t n_live = 0, n_spoof = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && samples[order[j]].score == samples[order[i]].score) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based tie rank
        for (std::size_t k = i; k < j; ++k) {
            if (samples[order[k]].label == 1) {
                live_rank_sum += avg_rank;
                ++n_live;
            } else {
                ++n_spoof;
            }
        }
        i = j;
    }
    const double nl = static_cast<double>(n_live);
    const double ns = static_cast<double>(n_spoof);
    return (live_rank_sum - nl * (nl + 1.0) / 2.0) / (nl * ns);
}

struct HterResult {
    double hter;
    double far;  // spoof accepted as live
    double frr;  // live rejected as spoof
};

inline HterResult hter(std::span<const ScoredSample> samples, double threshold) {
    detail::check_two_classes(samples, "HTER");
    std::size_t n_live = 0, n_spoof = 0, false_accept = 0, false_reject = 0;
    for (const auto& s : samples) {
        if (s.label == 1) {
            ++n_live;
            if (s.score < threshold) ++false_reject;
        } else {
            ++n_spoof;
            if (s.score >= threshold) ++false_accept;
        }
    }
    HterResult r;
    r.far = static_cast<double>(false_accept) / static_cast<double>(n_spoof);
    r.frr = static_cast<double>(false_reject) / static_cast<double>(n_live);
    r.hter = 0.5 * (r.far + r.frr);
    return r;
}

// Threshold maximizing J = TPR - FPR. Candidates are the midpoints between
// adjacent distinct sorted scores plus the {0, 1} boundary; ties on J go to
// the smallest candidate.
inline double youden_threshold(std::span<const ScoredSample> samples) {
    detail::check_two_classes(samples, "Youden threshold");
    std::vector<double> scores;
    scores.reserve(samples.size());
    for (const auto& s : samples) scores.push_back(s.score);
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

    std::vector<double> candidates;
    candidates.push_back(0.0);
    for (std::size_t i = 0; i + 1 < scores.size(); ++i)
        candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());

    std::size_t n_live = 0, n_spoof = 0;
    for (const auto& s : samples) (s.label == 1 ? n_live : n_spoof)++;

    double best_t = candidates.front();
    double best_j = -2.0;
    for (double t : candidates) {
        std::size_t tp = 0, fp = 0;
        for (const auto& s : samples) {
            if (s.score >= t) (s.label == 1 ? tp : fp)++;
        }
        const double j = static_cast<double>(tp) / static_cast<double>(n_live) -
                         static_cast<double>(fp) / static_cast<double>(n_spoof);
        if (j > best_j) {  // strict: earlier (smaller) candidate wins ties
            best_j = j;
            best_t = t;
        }
    }
    return best_t;
}

struct EvalReport {
    double auc = 0.0;
    double hter = 0.0;
    double far = 0.0;
    double frr = 0.0;
    double threshold = 0.5;
    std::string threshold_mode = "fixed:0.5";
    std::size_t n_live = 0;
    std::size_t n_spoof = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"auc", auc},
                              {"hter", hter},
                              {"far", far},
                              {"frr", frr},
                              {"threshold", threshold},
                              {"threshold_mode", threshold_mode},
                              {"n_live", n_live},
                              {"n_spoof", n_spoof}};
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.auc = j.at("auc").get<double>();
        r.hter = j.at("hter").get<double>();
        r.far = j.at("far").get<double>();
        r.frr = j.at("frr").get<double>();
        r.threshold = j.at("threshold").get<double>();
        r.threshold_mode = j.at("threshold_mode").get<std::string>();
        r.n_live = j.at("n_live").get<std::size_t>();
        r.n_spoof = j.at("n_spoof").get<std::size_t>();
        return r;
    }

    // Aligned text table, percentages with two decimals.
    std::string to_table() const {
        char out[256];
        std::snprintf(out, sizeof(out),
                      "%10s %10s %10s %10s %12s\n%10.2f %10.2f %10.2f %10.2f %12.4f\n",
                      "HTER(%)", "AUC(%)", "FAR(%)", "FRR(%)", "threshold", hter * 100.0,
                      auc * 100.0, far * 100.0, frr * 100.0, threshold);
        return out;
    }
};

inline EvalReport make_report(std::span<const ScoredSample> samples, double threshold,
                              const std::string& threshold_mode) {
    EvalReport r;
    r.auc = auc(samples);
    const HterResult h = hter(samples, threshold);
    r.hter = h.hter;
    r.far = h.far;
    r.frr = h.frr;
    r.threshold = threshold;
    r.threshold_mode = threshold_mode;
    for (const auto& s : samples) (s.label == 1 ? r.n_live : r.n_spoof)++;
    return r;
}

}  // namespace mfas
