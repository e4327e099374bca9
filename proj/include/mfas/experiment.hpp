#pragma once
// End-to-end experiment driver shared by the CLI and the test harnesses:
// dataset generation, source training (plus adapter pretraining), adaptation,
// evaluation with threshold selection, report tables, and the K sweep.
// Every stage derives its randomness from the run seed, so a full pipeline
// is bit-reproducible.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfas/adaptation.hpp"
#include "mfas/config.hpp"
#include "mfas/crossmodal.hpp"
#include "mfas/metrics.hpp"
#include "mfas/model.hpp"
#include "mfas/pseudolabel.hpp"
#include "mfas/synthdata.hpp"

namespace mfas {

inline constexpr const char* kSplitSourceTrain = "source_train";
inline constexpr const char* kSplitSourceVal = "source_val";
inline constexpr const char* kSplitTargetAdapt = "target_adapt";
inline constexpr const char* kSplitTargetEval = "target_eval";

// --- data generation ---------------------------------------------------------

inline Dataset generate_dataset(const ExperimentConfig& cfg) {
    const auto domains = build_domains(cfg.data, cfg.seed);
    const MissingPattern pattern = parse_missing_pattern(cfg.missing);
    RngStream root(cfg.seed);

    Dataset ds;
    ds.raw_dim = cfg.data.raw_dim;
    ds.latent_dim = cfg.data.latent_dim;
    ds.seed = cfg.seed;
    ds.missing = pattern;
    for (const auto& d : domains) ds.domains.push_back(d.id);

    auto gen_split = [&](const DomainSpec& spec, std::size_t count, const std::string& split) {
        RngStream rng = root.derive("gen:" + spec.id + ":" + split);
        const std::size_t live = count / 2;
        return generate_domain(spec, live, count - live, rng);
    };

    std::vector<MultiModalSample> train, val;
    for (std::size_t k = 0; k + 1 < domains.size(); ++k) {
        auto t = gen_split(domains[k], cfg.data.source_train_per_domain, kSplitSourceTrain);
        auto v = gen_split(domains[k], cfg.data.source_val_per_domain, kSplitSourceVal);
        train.insert(train.end(), t.begin(), t.end());
        val.insert(val.end(), v.begin(), v.end());
    }
    ds.splits[kSplitSourceTrain] = std::move(train);
    ds.splits[kSplitSourceVal] = std::move(val);

    auto adapt_split = gen_split(domains.back(), cfg.data.target_adapt, kSplitTargetAdapt);
    auto eval_split = gen_split(domains.back(), cfg.data.target_eval, kSplitTargetEval);
    // ground-truth labels stay on disk for evaluation and audits; the
    // adaptation loop itself strips them on entry
    apply_missing(adapt_split, pattern);
    apply_missing(eval_split, pattern);
    ds.splits[kSplitTargetAdapt] = std::move(adapt_split);
    ds.splits[kSplitTargetEval] = std::move(eval_split);
    return ds;
}

inline void cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& data_dir) {
    write_dataset(generate_dataset(cfg), data_dir);
}

// --- source training ---------------------------------------------------------

inline void write_loss_curve(const std::vector<double>& curve, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot open " + path.string() + " for writing");
    f << "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", curve[i]);
        f << i << "," << buf << "\n";
    }
}

// Source training per the supervised objective, then adapter pretraining on
// source-only alignment terms.
inline FasModel run_train_source(const ExperimentConfig& cfg, const Dataset& ds,
                                 std::vector<double>* curve_out = nullptr) {
    ModelDims dims;
    dims.raw_dim = cfg.data.raw_dim;
    dims.feat_dim = cfg.model.feat_dim;
    dims.extractor_hidden = cfg.model.extractor_hidden;
    dims.adapter_hidden = cfg.model.adapter_hidden;
    RngStream init = RngStream(cfg.seed).derive("init");
    FasModel model(dims, cfg.model.frozen_prefix, init);

    const auto& pool = ds.splits.at(kSplitSourceTrain);
    RngStream train_rng = RngStream(cfg.seed).derive("train");
    auto curve = train_source(model, pool, cfg.train.epochs, cfg.train.lr, cfg.train.batch_size,
                              train_rng);
    if (curve_out) *curve_out = curve;

    RngStream pre_rng = RngStream(cfg.seed).derive("adapter-pretrain");
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t step = 0; step < cfg.train.adapter_pretrain_steps; ++step) {
        std::vector<MultiModalSample> batch;
        const std::size_t n = std::min<std::size_t>(cfg.train.batch_size, pool.size());
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t pick = j + static_cast<std::size_t>(pre_rng.next_below(idx.size() - j));
            std::swap(idx[j], idx[pick]);
            batch.push_back(pool[idx[j]]);
        }
        train_adapters_step(model, batch, {}, cfg.train.adapter_lr);
    }
    return model;
}

inline FasModel cmd_train_source(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& model_path,
                                 const std::filesystem::path& curve_path) {
    const Dataset ds = read_dataset(data_dir);
    std::vector<double> curve;
    FasModel model = run_train_source(cfg, ds, &curve);
    save_model(model, model_path);
    write_loss_curve(curve, curve_path);
    return model;
}

// --- adaptation --------------------------------------------------------------

inline AdaptationTrace run_adapt(const ExperimentConfig& cfg, FasModel& model, const Dataset& ds,
                                 std::vector<PseudoLabelRecord>* dump = nullptr) {
    auto target = ds.splits.at(kSplitTargetAdapt);
    apply_missing(target, parse_missing_pattern(cfg.missing));
    const auto& replay_pool = ds.splits.at(kSplitSourceTrain);
    RngStream rng = RngStream(cfg.seed).derive("adapt");
    return adapt_stream(model, target, replay_pool, cfg.adapt, rng, dump);
}

inline void write_pseudo_dump(const std::vector<PseudoLabelRecord>& records,
                              const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot open " + path.string() + " for writing");
    for (const auto& r : records) {
        nlohmann::json j{{"id", r.sample_id}, {"p", r.p},       {"mu", r.mu},
                         {"v", r.v},          {"w", r.w},       {"psi", r.psi},
                         {"p_hat", r.p_hat},  {"y_hat", r.y_hat}, {"y_naive", r.y_naive}};
        f << j.dump() << "\n";
    }
}

inline AdaptationTrace cmd_adapt(const ExperimentConfig& cfg,
                                 const std::filesystem::path& model_path,
                                 const std::filesystem::path& data_dir,
                                 const std::filesystem::path& out_model,
                                 const std::filesystem::path& trace_path,
                                 const std::optional<std::filesystem::path>& dump_path) {
    FasModel model = load_model(model_path);
    const Dataset ds = read_dataset(data_dir);
    std::vector<PseudoLabelRecord> dump;
    AdaptationTrace trace = run_adapt(cfg, model, ds, dump_path ? &dump : nullptr);
    save_model(model, out_model);
    trace.write_csv(trace_path);
    if (dump_path) write_pseudo_dump(dump, *dump_path);
    return trace;
}

// --- evaluation --------------------------------------------------------------

// Inference scores: the refined (reliability-weighted) score per sample.
inline std::vector<ScoredSample> score_samples(const FasModel& model,
                                               const std::vector<MultiModalSample>& samples,
                                               std::size_t k, double rate, RngStream& rng) {
    const auto records = label_batch(model, samples, k, rate, rng);
    std::vector<ScoredSample> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!samples[i].label)
            throw ContractError("score_samples: sample '" + samples[i].id + "' has no label");
        out.push_back({records[i].p_hat, *samples[i].label});
    }
    return out;
}

inline EvalReport run_evaluate(const ExperimentConfig& cfg, const FasModel& model,
                               const Dataset& ds) {
    auto eval_split = ds.splits.at(kSplitTargetEval);
    apply_missing(eval_split, parse_missing_pattern(cfg.missing));
    RngStream rng = RngStream(cfg.seed).derive("eval");
    const auto target_scores =
        score_samples(model, eval_split, cfg.adapt.k, cfg.adapt.dropout_rate, rng);

    double threshold = 0.5;
    if (cfg.threshold_mode == "youden-source") {
        // selection on held-out labeled source validation data
        RngStream vrng = RngStream(cfg.seed).derive("eval-val");
        const auto val_scores = score_samples(model, ds.splits.at(kSplitSourceVal), cfg.adapt.k,
                                              cfg.adapt.dropout_rate, vrng);
        threshold = youden_threshold(val_scores);
    } else if (cfg.threshold_mode == "oracle-target") {
        threshold = youden_threshold(target_scores);
    } else {
        threshold = std::stod(cfg.threshold_mode.substr(6));  // "fixed:X"
    }
    return make_report(target_scores, threshold, cfg.threshold_mode);
}

inline EvalReport cmd_evaluate(const ExperimentConfig& cfg,
                               const std::filesystem::path& model_path,
                               const std::filesystem::path& data_dir,
                               const std::filesystem::path& report_json,
                               const std::filesystem::path& report_txt) {
    const FasModel model = load_model(model_path);
    const Dataset ds = read_dataset(data_dir);
    const EvalReport report = run_evaluate(cfg, model, ds);
    {
        std::ofstream f(report_json);
        if (!f) throw LoadError("cannot open " + report_json.string() + " for writing");
        f << report.to_json().dump(1) << "\n";
    }
    {
        std::ofstream f(report_txt);
        f << report.to_table();
    }
    return report;
}

// --- report tables -----------------------------------------------------------

// One row per run directory (reads <dir>/report.json), plus an Average row
// over the runs that exist. Missing runs render as an em dash in markdown
// and an empty cell in CSV; the numbers present are identical in both.
inline void cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                       const std::filesystem::path& out_md,
                       const std::filesystem::path& out_csv) {
    struct Row {
        std::string name;
        std::optional<EvalReport> report;
    };
    std::vector<Row> rows;
    for (const auto& dir : run_dirs) {
        Row row;
        row.name = dir.filename().empty() ? dir.parent_path().filename().string()
                                          : dir.filename().string();
        const auto path = dir / "report.json";
        if (std::filesystem::exists(path)) {
            std::ifstream f(path);
            nlohmann::json j;
            try {
                f >> j;
                row.report = EvalReport::from_json(j);
            } catch (const nlohmann::json::exception&) {
                row.report.reset();
            }
        }
        rows.push_back(std::move(row));
    }

    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
        return std::string(buf);
    };

    double hter_sum = 0.0, auc_sum = 0.0;
    std::size_t present = 0;
    for (const auto& r : rows)
        if (r.report) {
            hter_sum += r.report->hter;
            auc_sum += r.report->auc;
            ++present;
        }

    std::ofstream md(out_md);
    std::ofstream csv(out_csv);
    md << "| run | HTER(%) | AUC(%) |\n|---|---|---|\n";
    csv << "run,hter_pct,auc_pct\n";
    for (const auto& r : rows) {
        if (r.report) {
            md << "| " << r.name << " | " << pct(r.report->hter) << " | " << pct(r.report->auc)
               << " |\n";
            csv << r.name << "," << pct(r.report->hter) << "," << pct(r.report->auc) << "\n";
        } else {
            md << "| " << r.name << " | — | — |\n";
            csv << r.name << ",,\n";
        }
    }
    if (present > 0) {
        const double n = static_cast<double>(present);
        md << "| Average | " << pct(hter_sum / n) << " | " << pct(auc_sum / n) << " |\n";
        csv << "Average," << pct(hter_sum / n) << "," << pct(auc_sum / n) << "\n";
    }
}

// --- K sweep -------------------------------------------------------------------

struct SweepPoint {
    std::size_t k;
    EvalReport report;
};

// Re-adapts a fresh copy of the source model for each K and evaluates with
// the same K at inference.
inline std::vector<SweepPoint> run_sweep_k(const ExperimentConfig& base, const FasModel& source,
                                           const Dataset& ds, const std::vector<std::size_t>& ks) {
    std::vector<SweepPoint> out;
    for (std::size_t k : ks) {
        ExperimentConfig cfg = base;
        cfg.adapt.k = k;
        FasModel model = source.clone();
        run_adapt(cfg, model, ds);
        out.push_back({k, run_evaluate(cfg, model, ds)});
    }
    return out;
}

inline void write_sweep_csv(const std::vector<SweepPoint>& points,
                            const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot open " + path.string() + " for writing");
    f << "k,hter,auc,far,frr,threshold\n";
    for (const auto& p : points) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", p.k, p.report.hter,
                      p.report.auc, p.report.far, p.report.frr, p.report.threshold);
        f << buf << "\n";
    }
}

}  // namespace mfas
