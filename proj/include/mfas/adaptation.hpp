#pragma once
// Stability-weighted test-time adaptation. Per batch: pseudo-label the
// current and next batch with the current model, take a throwaway Adam step
// (cloned parameters and optimizer moments), compare the current and
// tentative models on the next batch, convert the loss delta into a weight
// alpha = softplus_beta(delta), and apply one real Adam step on the
// alpha-scaled loss starting from the current parameters. Adapters and the
// frozen extractor prefix never move here.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mfas/config.hpp"
#include "mfas/crossmodal.hpp"
#include "mfas/errors.hpp"
#include "mfas/model.hpp"
#include "mfas/pseudolabel.hpp"
#include "mfas/tensor.hpp"

namespace mfas {

// Mean over the batch of the summed per-modality cross-entropy of the fused
// predictions against the given labels.
inline Tensor adaptation_loss(const FasModel& model, const std::vector<MultiModalSample>& batch,
                              const std::vector<double>& labels) {
    if (batch.empty()) throw ContractError("adaptation_loss: empty batch");
    if (labels.size() != batch.size())
        throw ContractError("adaptation_loss: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(batch.size()) + " samples");
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        FeatureSet fs = model.extract_features(batch[i]);
        FusedFeatureSet fused = fuse(fs, transform(model, fs));
        for (Modality m : kModalities) {
            Tensor term = binary_cross_entropy(model.classify(m, fused.of(m)), {labels[i]});
            total = total.defined() ? add(total, term) : term;
        }
    }
    return scale(sum(total), 1.0 / static_cast<double>(batch.size()));
}

inline double adaptation_loss_value(const FasModel& model,
                                    const std::vector<MultiModalSample>& batch,
                                    const std::vector<double>& labels) {
    NoGradGuard guard;
    return adaptation_loss(model, batch, labels).item();
}

// alpha = (1/beta) ln(1 + exp(beta * (L_T_next - L_Tp_next))), stable-branch.
inline double stability_weight(double loss_t_next, double loss_tp_next, double beta) {
    if (!std::isfinite(loss_t_next) || !std::isfinite(loss_tp_next))
        throw ContractError("stability_weight: non-finite loss (L_T=" +
                            std::to_string(loss_t_next) + ", L_Tp=" +
                            std::to_string(loss_tp_next) + ")");
    return softplus_value(loss_t_next - loss_tp_next, beta);
}

namespace detail {

// One unscaled Adam step into a deep copy, reading the gradients already
// accumulated on `model`'s adaptable parameters. The copy's optimizer state
// is a clone, so the throwaway step never pollutes the original's moments.
inline FasModel tentative_step_from_grads(const FasModel& model, double lr) {
    FasModel copy = model.clone();
    auto params = copy.params_adapt();
    copy.optimizer("adapt", lr).step(params);
    return copy;
}

inline double l2_between(const std::vector<NamedParam>& a, const std::vector<double>& before) {
    double acc = 0.0;
    std::size_t k = 0;
    for (const auto& p : a)
        for (double v : p.tensor.value()) {
            const double d = v - before[k++];
            acc += d * d;
        }
    return std::sqrt(acc);
}

inline std::vector<double> flatten(const std::vector<NamedParam>& params) {
    std::vector<double> out;
    for (const auto& p : params)
        out.insert(out.end(), p.tensor.value().begin(), p.tensor.value().end());
    return out;
}

}  // namespace detail

// Temporary model advanced by exactly one unscaled Adam step on the
// adaptation loss; the input model is left bit-identical (its gradient
// buffers are zeroed on exit).
inline FasModel tentative_update(FasModel& model, const std::vector<MultiModalSample>& batch,
                                 const std::vector<double>& labels, double lr) {
    auto params = model.params_adapt();
    for (auto& p : params) p.tensor.zero_grad();
    adaptation_loss(model, batch, labels).backward();
    FasModel copy = detail::tentative_step_from_grads(model, lr);
    for (auto& p : params) p.tensor.zero_grad();
    return copy;
}

struct TraceRow {
    std::size_t batch_index = 0;
    std::optional<double> loss_t_next;
    std::optional<double> loss_tp_next;
    std::optional<double> delta;
    double alpha = 1.0;
    double update_norm = 0.0;
    std::size_t n_live_pseudo = 0;
    std::size_t n_spoof_pseudo = 0;
};

struct AdaptationTrace {
    std::vector<TraceRow> rows;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream f(path);
        if (!f) throw LoadError("cannot open " + path.string() + " for writing");
        f << "batch_index,loss_T_next,loss_Tp_next,delta,alpha,update_norm,"
             "n_live_pseudo,n_spoof_pseudo\n";
        auto fmt = [](const std::optional<double>& v) -> std::string {
            if (!v) return "";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", *v);
            return buf;
        };
        for (const auto& r : rows) {
            f << r.batch_index << "," << fmt(r.loss_t_next) << "," << fmt(r.loss_tp_next) << ","
              << fmt(r.delta) << "," << fmt(r.alpha) << "," << fmt(r.update_norm) << ","
              << r.n_live_pseudo << "," << r.n_spoof_pseudo << "\n";
        }
    }
};

namespace detail {

// Pseudo-labels for one batch under the configured mechanism, optionally
// corrupted (random flips) for the noisy-label ablations.
inline std::vector<double> pseudo_labels_for(const FasModel& model,
                                             const std::vector<MultiModalSample>& batch,
                                             const AdaptConfig& cfg, RngStream& rng,
                                             std::vector<PseudoLabelRecord>* dump) {
    const bool naive = cfg.pseudo == "naive";
    const auto records = label_batch(model, batch, naive ? 1 : cfg.k,
                                     naive ? 0.0 : cfg.dropout_rate, rng, cfg.pseudo_threshold);
    std::vector<double> labels;
    labels.reserve(records.size());
    for (const auto& rec : records)
        labels.push_back(static_cast<double>(naive ? rec.y_naive : rec.y_hat));
    if (cfg.label_corruption_rate > 0.0)
        for (double& y : labels)
            if (rng.next_double() < cfg.label_corruption_rate) y = 1.0 - y;
    if (dump) dump->insert(dump->end(), records.begin(), records.end());
    return labels;
}

}  // namespace detail

// One adaptation step on batch_i, with stability measured on batch_next.
// Both batches are pseudo-labeled by the current model; the tentative and
// current models are evaluated on batch_next under the same labels.
// `reuse_alpha`, when set, skips the tentative machinery (final batch of a
// stream reuses the previous weight).
inline TraceRow adapt_batch(FasModel& model, const std::vector<MultiModalSample>& batch_i,
                            const std::vector<MultiModalSample>* batch_next,
                            const AdaptConfig& cfg, RngStream& rng,
                            std::optional<double> reuse_alpha = std::nullopt,
                            std::vector<PseudoLabelRecord>* dump = nullptr) {
    if (batch_i.empty()) throw ContractError("adapt_batch: empty batch");
    if (cfg.strategy == "alpha" && !batch_next && !reuse_alpha)
        throw ContractError("adapt_batch: no next batch and no alpha to reuse");

    TraceRow row;
    const std::vector<double> labels_i = detail::pseudo_labels_for(model, batch_i, cfg, rng, dump);
    for (double y : labels_i) (y >= 0.5 ? row.n_live_pseudo : row.n_spoof_pseudo)++;

    auto params = model.params_adapt();
    for (auto& p : params) p.tensor.zero_grad();
    adaptation_loss(model, batch_i, labels_i).backward();

    double alpha = 1.0;
    if (cfg.strategy == "alpha") {
        if (reuse_alpha) {
            alpha = *reuse_alpha;
        } else {
            const std::vector<double> labels_next =
                detail::pseudo_labels_for(model, *batch_next, cfg, rng, nullptr);
            FasModel tentative = detail::tentative_step_from_grads(model, cfg.lr);
            const double l_t = adaptation_loss_value(model, *batch_next, labels_next);
            const double l_tp = adaptation_loss_value(tentative, *batch_next, labels_next);
            alpha = stability_weight(l_t, l_tp, cfg.beta);
            row.loss_t_next = l_t;
            row.loss_tp_next = l_tp;
            row.delta = l_t - l_tp;
        }
    }
    row.alpha = alpha;

    const std::vector<double> before = detail::flatten(params);
    model.optimizer("adapt", cfg.lr).step(params, alpha);
    row.update_norm = detail::l2_between(params, before);
    for (auto& p : params) p.tensor.zero_grad();
    return row;
}

// One or more passes over the target batches in shuffled-once order. Each
// batch gets an adapter refresh step (current target batch plus a source
// replay draw) before its adaptation step. The final batch of the stream has
// no successor and reuses the previous alpha.
inline AdaptationTrace adapt_stream(FasModel& model, std::vector<MultiModalSample> target,
                                    const std::vector<MultiModalSample>& source_pool,
                                    const AdaptConfig& cfg, RngStream& rng,
                                    std::vector<PseudoLabelRecord>* dump = nullptr) {
    for (auto& s : target) s.label.reset();  // unlabeled by contract
    shuffle(target, rng);
    std::vector<std::vector<MultiModalSample>> batches;
    for (std::size_t start = 0; start < target.size(); start += cfg.batch_size)
        batches.emplace_back(target.begin() + start,
                             target.begin() + std::min(start + cfg.batch_size, target.size()));
    if (batches.size() < 2)
        throw ContractError("adapt_stream: needs at least 2 target batches, got " +
                            std::to_string(batches.size()));
    if (source_pool.size() < cfg.replay_size)
        throw ContractError("adapt_stream: source replay pool smaller than replay_size");

    auto draw_replay = [&]() {
        std::vector<std::size_t> idx(source_pool.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::vector<MultiModalSample> out;
        out.reserve(cfg.replay_size);
        for (std::size_t j = 0; j < cfg.replay_size; ++j) {
            const std::size_t pick = j + static_cast<std::size_t>(rng.next_below(idx.size() - j));
            std::swap(idx[j], idx[pick]);
            out.push_back(source_pool[idx[j]]);
        }
        return out;
    };

    AdaptationTrace trace;
    std::optional<double> last_alpha;
    const std::size_t total = batches.size() * cfg.passes;
    for (std::size_t step = 0; step < total; ++step) {
        const std::size_t i = step % batches.size();
        const bool is_last = step + 1 == total;
        train_adapters_step(model, draw_replay(), batches[i], cfg.adapter_refresh_lr);
        const std::vector<MultiModalSample>* next =
            is_last ? nullptr : &batches[(step + 1) % batches.size()];
        TraceRow row = adapt_batch(model, batches[i], next, cfg, rng,
                                   is_last ? last_alpha : std::nullopt, dump);
        row.batch_index = step;
        if (cfg.strategy == "alpha") last_alpha = row.alpha;
        trace.rows.push_back(row);
    }
    return trace;
}

}  // namespace mfas
