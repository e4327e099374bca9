#pragma once
// Cross-modal feature transformation: adapters synthesize each modality's
// features from the others' (IR->RGB, RGB->IR, and a shared depth adapter
// applied to both RGB and IR), alignment losses train them with cosine terms
// gated by modality presence, and indicator-gated fusion averages original
// and transformed features so every modality slot is always populated.

#include <optional>
#include <string>
#include <vector>

#include "mfas/errors.hpp"
#include "mfas/model.hpp"
#include "mfas/tensor.hpp"

namespace mfas {

// Transformed features available from a sample's present modalities.
// to_rgb and d_from_ir exist only when IR does; RGB is always present, so
// to_ir and d_from_rgb always exist.
struct TransformedSet {
    std::optional<Tensor> to_rgb;     // from IR features
    Tensor to_ir;                     // from RGB features
    Tensor d_from_rgb;
    std::optional<Tensor> d_from_ir;
};

inline TransformedSet transform(const FasModel& model, const FeatureSet& features) {
    if (!features.rgb)
        throw ContractError("transform: RGB features are required");
    TransformedSet t;
    t.to_ir = model.adapter_to(Modality::Ir).forward(*features.rgb);
    t.d_from_rgb = model.adapter_to(Modality::D).forward(*features.rgb);
    if (features.ir) {
        t.to_rgb = model.adapter_to(Modality::Rgb).forward(*features.ir);
        t.d_from_ir = model.adapter_to(Modality::D).forward(*features.ir);
    }
    return t;
}

// Always holds all three modality slots.
struct FusedFeatureSet {
    Tensor rgb;
    Tensor ir;
    Tensor d;

    const Tensor& of(Modality m) const {
        switch (m) {
            case Modality::Rgb: return rgb;
            case Modality::Ir: return ir;
            default: return d;
        }
    }
};

// Indicator-gated fusion; each fused vector is the unweighted mean of its
// contributors, with the denominator equal to the number of summed terms:
//   rgb: (f_RGB + I_ir * to_rgb) / (1 + I_ir)
//   ir:  (I_ir * f_IR + to_ir) / (1 + I_ir)
//   d:   (I_d * f_D + d_from_rgb + I_ir * d_from_ir) / (1 + I_d + I_ir)
inline FusedFeatureSet fuse(const FeatureSet& features, const TransformedSet& t) {
    if (!features.rgb)
        throw ContractError("fuse: RGB features are required");
    const bool has_ir = features.ir.has_value();
    const bool has_d = features.d.has_value();

    FusedFeatureSet out;
    out.rgb = has_ir ? scale(add(*features.rgb, *t.to_rgb), 0.5) : *features.rgb;
    out.ir = has_ir ? scale(add(*features.ir, t.to_ir), 0.5) : t.to_ir;

    Tensor d_num = t.d_from_rgb;
    double d_den = 1.0;
    if (has_d) {
        d_num = add(d_num, *features.d);
        d_den += 1.0;
    }
    if (has_ir) {
        d_num = add(d_num, *t.d_from_ir);
        d_den += 1.0;
    }
    out.d = d_den == 1.0 ? d_num : scale(d_num, 1.0 / d_den);
    return out;
}

// One alignment loss plus bookkeeping: how many cosine terms contributed and
// whether the indicator gates left the term set empty (loss defined as 0).
struct AdapterLoss {
    Tensor loss;
    std::size_t term_count = 0;
    bool degenerate = false;
};

struct AdapterLosses {
    AdapterLoss rgb;
    AdapterLoss ir;
    AdapterLoss d;

    Tensor total() const { return add(add(rgb.loss, ir.loss), d.loss); }
};

namespace detail {

inline Tensor alignment_term(const Tensor& target_feature, const Tensor& transformed) {
    // |1 - cos(f, f_hat)|; the target side is already detached by the caller
    return abs(sub(Tensor::scalar(1.0), cosine_similarity(target_feature, transformed)));
}

inline AdapterLoss finish_loss(Tensor acc, std::size_t count) {
    AdapterLoss out;
    out.term_count = count;
    if (count == 0) {
        out.loss = Tensor::scalar(0.0);
        out.degenerate = true;
    } else {
        out.loss = scale(acc, 1.0 / static_cast<double>(count));
    }
    return out;
}

}  // namespace detail

// Alignment losses for the three adapters over a fully-modal source batch
// and a (possibly missing-modality) target batch. Target terms are gated by
// the presence indicators; source terms are ungated. Extractor outputs are
// detached, so gradients reach only adapter parameters. Each loss is
// normalized by its contributing-term count.
inline AdapterLosses adapter_regularization_loss(const FasModel& model,
                                                 const std::vector<MultiModalSample>& source_batch,
                                                 const std::vector<MultiModalSample>& target_batch) {
    for (const auto& s : source_batch)
        if (!s.ir || !s.d)
            throw ContractError("adapter_regularization_loss: source sample '" + s.id +
                                "' is not fully modal");

    Tensor acc_rgb = Tensor::scalar(0.0);
    Tensor acc_ir = Tensor::scalar(0.0);
    Tensor acc_d = Tensor::scalar(0.0);
    std::size_t n_rgb = 0, n_ir = 0, n_d = 0;

    // Presence indicators gate every term; source samples are fully modal by
    // contract, so their indicators are all 1 and every term contributes.
    auto accumulate = [&](const MultiModalSample& sample) {
        FeatureSet raw = model.extract_features(sample);
        FeatureSet f;  // detached: "keep other modules fixed" at the gradient level
        for (Modality m : kModalities)
            if (raw.of(m)) f.of(m) = raw.of(m)->detach();

        const bool has_ir = f.ir.has_value();
        const bool has_d = f.d.has_value();

        if (has_ir) {
            // A_RGB aligns f_RGB with A_RGB(f_IR)
            Tensor to_rgb = model.adapter_to(Modality::Rgb).forward(*f.ir);
            acc_rgb = add(acc_rgb, detail::alignment_term(*f.rgb, to_rgb));
            ++n_rgb;
            // A_IR aligns f_IR with A_IR(f_RGB)
            Tensor to_ir = model.adapter_to(Modality::Ir).forward(*f.rgb);
            acc_ir = add(acc_ir, detail::alignment_term(*f.ir, to_ir));
            ++n_ir;
        }
        // A_D aligns f_D with A_D(f_RGB) and, when IR exists, with A_D(f_IR)
        if (has_d) {
            Tensor from_rgb = model.adapter_to(Modality::D).forward(*f.rgb);
            acc_d = add(acc_d, detail::alignment_term(*f.d, from_rgb));
            ++n_d;
            if (has_ir) {
                Tensor from_ir = model.adapter_to(Modality::D).forward(*f.ir);
                acc_d = add(acc_d, detail::alignment_term(*f.d, from_ir));
                ++n_d;
            }
        }
    };

    for (const auto& s : target_batch) accumulate(s);
    for (const auto& s : source_batch) accumulate(s);

    AdapterLosses out;
    out.rgb = detail::finish_loss(acc_rgb, n_rgb);
    out.ir = detail::finish_loss(acc_ir, n_ir);
    out.d = detail::finish_loss(acc_d, n_d);
    return out;
}

// One Adam step on the summed adapter losses, touching adapter parameters
// only; extractors and classifiers stay bit-identical.
inline AdapterLosses train_adapters_step(FasModel& model,
                                         const std::vector<MultiModalSample>& source_batch,
                                         const std::vector<MultiModalSample>& target_batch,
                                         double lr) {
    AdapterLosses losses = adapter_regularization_loss(model, source_batch, target_batch);
    auto params = model.params_adapters();
    for (auto& p : params) p.tensor.zero_grad();
    Tensor total = losses.total();
    if (total.requires_grad()) {
        total.backward();
        model.optimizer("adapters", lr).step(params);
    }
    return losses;
}

}  // namespace mfas
