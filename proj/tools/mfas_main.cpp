// Experiment driver: data generation, source training, test-time adaptation,
// evaluation, report tables, and the K sweep. Every run is a pure function
// of its config and seed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfas/experiment.hpp"

namespace fs = std::filesystem;
using namespace mfas;

namespace {

struct CliArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string missing;
    std::string pseudo;
    std::string strategy;
    std::optional<std::size_t> k;
    std::string threshold_mode;
    std::string out_dir;
    std::string data_dir;
    std::string model_path;
    bool dump_pseudo = false;
};

ExperimentConfig resolve_config(const CliArgs& args) {
    nlohmann::json doc = nlohmann::json::object();
    if (!args.config_path.empty()) {
        std::ifstream f(args.config_path);
        if (!f) throw LoadError("cannot open config file " + args.config_path);
        try {
            f >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(args.config_path + ": " + e.what());
        }
    }
    for (const auto& assignment : args.overrides) apply_override(doc, assignment);
    if (args.seed) {
        doc["seed"] = *args.seed;
    } else if (!doc.contains("seed")) {
        if (const char* env = std::getenv("MFAS_SEED")) doc["seed"] = std::stoull(env);
    }
    if (!args.missing.empty()) doc["missing"] = args.missing;
    if (!args.pseudo.empty()) doc["adapt"]["pseudo"] = args.pseudo;
    if (!args.strategy.empty()) doc["adapt"]["strategy"] = args.strategy;
    if (args.k) doc["adapt"]["k"] = *args.k;
    if (!args.threshold_mode.empty()) doc["threshold_mode"] = args.threshold_mode;
    if (!args.out_dir.empty()) doc["out_dir"] = args.out_dir;
    return experiment_config_from_json(doc);
}

fs::path data_dir_for(const CliArgs& args, const ExperimentConfig& cfg) {
    return args.data_dir.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(args.data_dir);
}

std::vector<std::size_t> parse_k_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    }
    if (out.empty()) throw ContractError("sweep-k: empty K list");
    return out;
}

void add_common(CLI::App* cmd, CliArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "override a config field, key.path=value")
        ->take_all();
    cmd->add_option("--seed", args.seed, "run seed (fallback: MFAS_SEED env var)");
    cmd->add_option("--out", args.out_dir, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-modal liveness domain-adaptation experiments"};
    app.require_subcommand(1);
    CliArgs args;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, args);
    gen->add_option("--missing", args.missing, "missing-modality pattern: none|d|i|di");

    auto* train = app.add_subcommand("train-source", "train the source model");
    add_common(train, args);
    train->add_option("--data", args.data_dir, "dataset directory");

    auto* adapt = app.add_subcommand("adapt", "adapt the model to the target split");
    add_common(adapt, args);
    adapt->add_option("--data", args.data_dir, "dataset directory");
    adapt->add_option("--model", args.model_path, "source model file");
    adapt->add_option("--missing", args.missing, "missing-modality pattern: none|d|i|di");
    adapt->add_option("--pseudo", args.pseudo, "pseudo-labeling: naive|reliability");
    adapt->add_option("--strategy", args.strategy, "update strategy: plain|alpha");
    adapt->add_option("--k", args.k, "dropout prediction count K");
    adapt->add_flag("--dump-pseudo", args.dump_pseudo, "dump pseudo-label records");

    auto* eval = app.add_subcommand("evaluate", "evaluate a model on the target eval split");
    add_common(eval, args);
    eval->add_option("--data", args.data_dir, "dataset directory");
    eval->add_option("--model", args.model_path, "model file");
    eval->add_option("--missing", args.missing, "missing-modality pattern: none|d|i|di");
    eval->add_option("--k", args.k, "dropout prediction count K");
    eval->add_option("--threshold-mode", args.threshold_mode,
                     "youden-source | fixed:X | oracle-target");

    std::vector<std::string> report_dirs;
    auto* report = app.add_subcommand("report", "tabulate reports from run directories");
    add_common(report, args);
    report->add_option("dirs", report_dirs, "run directories containing report.json")->required();

    std::string k_list = "1,2,5,10,20";
    auto* sweep = app.add_subcommand("sweep-k", "adapt and evaluate across K values");
    add_common(sweep, args);
    sweep->add_option("--data", args.data_dir, "dataset directory");
    sweep->add_option("--model", args.model_path, "source model file");
    sweep->add_option("--missing", args.missing, "missing-modality pattern: none|d|i|di");
    sweep->add_option("--ks", k_list, "comma-separated K values");

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve_config(args);
        const fs::path out(cfg.out_dir);
        fs::create_directories(out);

        if (gen->parsed()) {
            const fs::path dir = data_dir_for(args, cfg);
            cmd_gen_data(cfg, dir);
            std::cout << "dataset written to " << dir.string() << "\n";
        } else if (train->parsed()) {
            cmd_train_source(cfg, data_dir_for(args, cfg), out / "source_model.json",
                             out / "loss_curve.csv");
            std::cout << "model written to " << (out / "source_model.json").string() << "\n";
        } else if (adapt->parsed()) {
            const fs::path model = args.model_path.empty() ? out / "source_model.json"
                                                           : fs::path(args.model_path);
            std::optional<fs::path> dump;
            if (args.dump_pseudo) dump = out / "pseudo_labels.jsonl";
            cmd_adapt(cfg, model, data_dir_for(args, cfg), out / "adapted_model.json",
                      out / "trace.csv", dump);
            std::cout << "adapted model written to " << (out / "adapted_model.json").string()
                      << "\n";
        } else if (eval->parsed()) {
            const fs::path model = args.model_path.empty() ? out / "adapted_model.json"
                                                           : fs::path(args.model_path);
            const EvalReport r = cmd_evaluate(cfg, model, data_dir_for(args, cfg),
                                              out / "report.json", out / "report.txt");
            std::cout << r.to_table();
        } else if (report->parsed()) {
            std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
            cmd_report(dirs, out / "report.md", out / "report.csv");
            std::cout << "report written to " << (out / "report.md").string() << "\n";
        } else if (sweep->parsed()) {
            const fs::path model = args.model_path.empty() ? out / "source_model.json"
                                                           : fs::path(args.model_path);
            const FasModel source = load_model(model);
            const Dataset ds = read_dataset(data_dir_for(args, cfg));
            const auto points = run_sweep_k(cfg, source, ds, parse_k_list(k_list));
            write_sweep_csv(points, out / "sweep_k.csv");
            for (const auto& p : points)
                std::cout << "K=" << p.k << "  HTER " << p.report.hter * 100.0 << "%  AUC "
                          << p.report.auc * 100.0 << "%\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UndefinedMetricError& e) {
        std::cerr << "metric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
