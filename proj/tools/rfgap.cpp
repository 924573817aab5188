// Command-line front end: train forests, verify the proximity reconstruction,
// produce instance-based explanation reports, and evaluate confidence against
// realized errors. Every run writes a manifest describing its inputs/outputs.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "rfgap/csv.hpp"
#include "rfgap/eval.hpp"
#include "rfgap/explain.hpp"
#include "rfgap/manifest.hpp"
#include "rfgap/model_io.hpp"
#include "rfgap/proximity.hpp"
#include "rfgap/synthetic.hpp"
#include "rfgap/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rfgap;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void write_manifest(RunManifest manifest, const Timer& timer, fs::path dir) {
    manifest.duration_seconds = timer.seconds();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    const auto path = dir / ("manifest_" + manifest.command + ".json");
    manifest.write(path.string());
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write: " + path.string());
    out << content;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::string config_file;
    SyntheticConfig cfg;
    std::vector<std::pair<std::string, std::string>> overrides;
};

int run_synth(const SynthArgs& args) {
    Timer timer;
    SyntheticConfig cfg = args.cfg;
    if (!args.config_file.empty()) cfg = load_synthetic_config(args.config_file);
    for (const auto& [key, value] : args.overrides) apply_synthetic_kv(cfg, key, value);

    const Dataset ds = generate_synthetic(cfg);
    write_dataset_csv(args.out, ds);
    std::cout << "wrote " << ds.n_rows() << " rows x " << ds.n_features() << " features to "
              << args.out << "\n";

    RunManifest manifest;
    manifest.command = "synth";
    manifest.seed = cfg.seed;
    manifest.config = {{"n_rows", cfg.n_rows},
                       {"n_numeric", cfg.n_numeric},
                       {"n_categorical", cfg.n_categorical},
                       {"noise", cfg.noise == NoiseProfile::homoscedastic ? "homoscedastic"
                                                                          : "heteroscedastic"},
                       {"sigma", cfg.sigma},
                       {"sigma_low", cfg.sigma_low},
                       {"sigma_high", cfg.sigma_high},
                       {"seed", cfg.seed}};
    if (!args.config_file.empty())
        manifest.input_digests[args.config_file] = fnv1a64_file(args.config_file);
    manifest.output_paths = {args.out};
    write_manifest(std::move(manifest), timer, fs::path(args.out).parent_path());
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string synthetic_config;
    std::string target = "target";
    std::string timestamp;
    std::string model_out;
    std::string search_config;
    std::string task = "regression";
    double train_fraction = 0.0; // 0 = no split
    Hyperparams hp;
};

int run_train(const TrainArgs& args) {
    Timer timer;
    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = args.hp.seed;

    Dataset full;
    if (!args.synthetic_config.empty()) {
        full = generate_synthetic(load_synthetic_config(args.synthetic_config));
        manifest.input_digests[args.synthetic_config] = fnv1a64_file(args.synthetic_config);
    } else if (!args.data.empty()) {
        full = load_csv(args.data, args.target, args.timestamp);
        manifest.input_digests[args.data] = fnv1a64_file(args.data);
        if (full.dropped_rows > 0)
            std::cerr << "note: dropped " << full.dropped_rows
                      << " rows with missing or invalid cells\n";
    } else {
        throw std::runtime_error("train needs --data or --synthetic-config");
    }

    Dataset train = std::move(full);
    std::optional<Dataset> test;
    if (args.train_fraction > 0.0) {
        auto [tr, te] = time_split(train, args.train_fraction);
        train = std::move(tr);
        test = std::move(te);
    }

    const Task task = args.task == "classification" ? Task::classification : Task::regression;
    Hyperparams hp = args.hp;
    json search_json;
    std::optional<SearchResult> search_result;
    if (!args.search_config.empty()) {
        const SearchConfig sc = load_search_config(args.search_config);
        manifest.input_digests[args.search_config] = fnv1a64_file(args.search_config);
        search_result =
            randomized_search(train, sc.grid, sc.n_samples, sc.n_folds, args.hp.seed, task);
        hp = search_result->best;
        hp.seed = args.hp.seed;
        search_json = to_json(*search_result);
        std::cout << "search: best of " << search_result->table.size() << " candidates -> trees="
                  << hp.n_estimators << " max_depth=" << hp.max_depth
                  << " max_features=" << hp.max_features.to_string()
                  << " min_samples_leaf=" << hp.min_samples_leaf << "\n";
    }

    const Forest forest = Forest::fit(train, hp, task);
    save_model(args.model_out, {forest, train.schema});
    manifest.output_paths.push_back(args.model_out);

    if (task == Task::regression) {
        const Metrics train_metrics =
            compute_metrics(forest.predict_many(train.features), train.target);
        std::cout << "train rmse=" << train_metrics.rmse << " mae=" << train_metrics.mae << "\n";
        if (test) {
            const Metrics test_metrics =
                compute_metrics(forest.predict_many(test->features), test->target);
            std::cout << "test  rmse=" << test_metrics.rmse << " mae=" << test_metrics.mae
                      << "\n";
        }
    }

    const fs::path out_dir = fs::path(args.model_out).parent_path();
    if (!search_json.is_null()) {
        const auto search_path = out_dir / "search.json";
        write_text(search_path, search_json.dump(2) + "\n");
        manifest.output_paths.push_back(search_path.string());
    }
    if (search_result) {
        std::ofstream csv(out_dir / "search.csv");
        write_search_table_csv(csv, *search_result);
        manifest.output_paths.push_back((out_dir / "search.csv").string());
    }

    manifest.config = {{"data", args.data},
                       {"synthetic_config", args.synthetic_config},
                       {"target", args.target},
                       {"timestamp", args.timestamp},
                       {"model", args.model_out},
                       {"task", args.task},
                       {"train_fraction", args.train_fraction},
                       {"search_config", args.search_config},
                       {"hyperparams", to_json(hp)}};
    write_manifest(std::move(manifest), timer, out_dir);
    return 0;
}

// ---- shared query loading ---------------------------------------------------

Dataset load_queries(const Model& model, const std::string& path) {
    const RawTable raw = read_csv_file(path);
    Dataset queries = encode_with(model.schema, raw);
    if (queries.dropped_rows > 0)
        std::cerr << "note: dropped " << queries.dropped_rows
                  << " query rows with missing or invalid cells\n";
    return queries;
}

// ---- explain ----------------------------------------------------------------

struct ExplainArgs {
    std::string model;
    std::string data;
    std::string out;
    double threshold = 0.95;
    int bins = 0;
    bool dump_proximity = false;
};

int run_explain(const ExplainArgs& args) {
    Timer timer;
    const Model model = load_model(args.model);
    const Dataset queries = load_queries(model, args.data);
    const ProximityEngine engine(model.forest);
    const TrainErrorTable errors = compute_train_errors(model.forest);
    if (errors.never_oob > 0)
        std::cerr << "note: " << errors.never_oob
                  << " training rows are never out-of-bag and are excluded from error"
                     " aggregates\n";

    fs::create_directories(args.out);
    RunManifest manifest;
    manifest.command = "explain";
    manifest.input_digests[args.model] = fnv1a64_file(args.model);
    manifest.input_digests[args.data] = fnv1a64_file(args.data);
    manifest.seed = model.forest.hyperparams().seed;

    const fs::path out_dir(args.out);
    for (std::size_t i = 0; i < queries.n_rows(); ++i) {
        std::optional<double> realized;
        if (queries.has_target()) realized = queries.target[i];
        const ExplanationReport report =
            explain(engine, errors, queries.features.row(i), realized, args.threshold,
                    args.bins, static_cast<std::int64_t>(i));

        const auto report_path = out_dir / ("report_" + std::to_string(i) + ".json");
        write_text(report_path, to_json(report).dump(2) + "\n");
        manifest.output_paths.push_back(report_path.string());

        std::ofstream curve(out_dir / ("curve_" + std::to_string(i) + ".csv"));
        write_curve_csv(curve, report.curve);
        std::ofstream hist(out_dir / ("neighbor_hist_" + std::to_string(i) + ".csv"));
        write_histogram_csv(hist, report.neighbor_label_hist);
        if (i == 0) {
            std::ofstream train_hist(out_dir / "train_hist.csv");
            write_histogram_csv(train_hist, report.train_label_hist);
        }
    }

    if (args.dump_proximity) {
        std::vector<ProximityRow> rows;
        rows.reserve(queries.n_rows());
        for (std::size_t i = 0; i < queries.n_rows(); ++i)
            rows.push_back(engine.gap_row(queries.features.row(i), static_cast<std::int64_t>(i)));
        std::ofstream prox(out_dir / "proximity.csv");
        write_proximity_csv(prox, rows);
        write_text(out_dir / "proximity_summary.json",
                   to_json(summarize_rows(rows)).dump(2) + "\n");
        manifest.output_paths.push_back((out_dir / "proximity.csv").string());
    }

    const NeighborsNeededTable aggregate = neighbors_needed(engine, queries.features);
    std::ofstream needed(out_dir / "neighbors_needed.csv");
    write_neighbors_needed_csv(needed, aggregate);
    std::cout << "explained " << queries.n_rows() << " queries -> " << args.out << "\n";
    for (std::size_t k = 0; k < aggregate.thresholds.size(); ++k)
        std::cout << "  threshold " << aggregate.thresholds[k] << ": mean "
                  << aggregate.mean_count[k] << " neighbors, median "
                  << aggregate.median_count[k] << "\n";

    manifest.config = {{"model", args.model},
                       {"data", args.data},
                       {"threshold", args.threshold},
                       {"bins", args.bins},
                       {"out", args.out}};
    write_manifest(std::move(manifest), timer, out_dir);
    return 0;
}

// ---- verify -----------------------------------------------------------------

struct VerifyArgs {
    std::string model;
    std::string data;
    std::string out;
    double tolerance = 1e-9;
};

int run_verify(const VerifyArgs& args) {
    Timer timer;
    const Model model = load_model(args.model);
    const Dataset queries = load_queries(model, args.data);
    const ProximityEngine engine(model.forest);
    const ReconstructionReport report =
        verify_reconstruction(engine, queries.features, args.tolerance);

    std::cout << "max_abs_gap_error=" << report.max_abs_gap_error
              << " max_abs_breiman_error=" << report.max_abs_breiman_error
              << " tolerance=" << args.tolerance << "\n";
    std::cout << (report.gap_exact() ? "GAP reconstruction OK" : "GAP reconstruction FAILED")
              << "\n";

    fs::path out_dir =
        args.out.empty() ? fs::path(args.model).parent_path() : fs::path(args.out);
    if (out_dir.empty()) out_dir = ".";
    fs::create_directories(out_dir);
    const json j{{"max_abs_gap_error", report.max_abs_gap_error},
                 {"max_abs_breiman_error", report.max_abs_breiman_error},
                 {"tolerance", report.tolerance},
                 {"gap_exact", report.gap_exact()},
                 {"gap_errors", report.gap_errors},
                 {"breiman_errors", report.breiman_errors}};
    const auto report_path = out_dir / "verify.json";
    write_text(report_path, j.dump(2) + "\n");

    RunManifest manifest;
    manifest.command = "verify";
    manifest.seed = model.forest.hyperparams().seed;
    manifest.input_digests[args.model] = fnv1a64_file(args.model);
    manifest.input_digests[args.data] = fnv1a64_file(args.data);
    manifest.output_paths = {report_path.string()};
    manifest.config = {{"model", args.model}, {"data", args.data}, {"tolerance", args.tolerance}};
    write_manifest(std::move(manifest), timer, out_dir);
    return report.gap_exact() ? 0 : 1;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
    std::string model;
    std::string data;
    std::string out;
    std::string baseline;
    int deciles = 10;
};

int run_eval(const EvalArgs& args) {
    Timer timer;
    const Model model = load_model(args.model);
    const Dataset test = load_queries(model, args.data);
    if (!test.has_target())
        throw std::runtime_error("eval needs labeled data: column '" +
                                 model.schema.target.name + "' not found in " + args.data);

    const std::vector<double> predictions = model.forest.predict_many(test.features);
    std::optional<std::vector<double>> baseline;
    if (!args.baseline.empty()) {
        std::optional<std::size_t> idx;
        for (std::size_t j = 0; j < model.schema.columns.size(); ++j)
            if (model.schema.columns[j].name == args.baseline) idx = j;
        if (!idx || model.schema.columns[*idx].is_categorical())
            throw std::runtime_error("baseline column must be a numeric feature: " +
                                     args.baseline);
        std::vector<double> vals(test.n_rows());
        for (std::size_t i = 0; i < test.n_rows(); ++i) vals[i] = test.features(i, *idx);
        baseline = std::move(vals);
    }
    const EvalSummary summary =
        evaluate(predictions, test.target, baseline ? &*baseline : nullptr);

    const ProximityEngine engine(model.forest);
    const TrainErrorTable errors = compute_train_errors(model.forest);
    const ConfidenceVsErrorTable table =
        confidence_vs_error(engine, errors, test.features, test.target, args.deciles);

    std::cout << "model rmse=" << summary.model.rmse << " mae=" << summary.model.mae << "\n";
    if (summary.baseline)
        std::cout << "baseline rmse=" << summary.baseline->rmse
                  << " mae=" << summary.baseline->mae
                  << " improvement_pct=" << *summary.improvement_pct << "\n";
    std::cout << "confidence correlation per-point=";
    if (table.pearson_per_point)
        std::cout << *table.pearson_per_point;
    else
        std::cout << "undefined";
    std::cout << " decile-means=";
    if (table.pearson_decile_means)
        std::cout << *table.pearson_decile_means;
    else
        std::cout << "undefined";
    std::cout << "\n";

    const fs::path out_dir(args.out);
    fs::create_directories(out_dir);
    json j = to_json(summary);
    j["confidence_vs_error"] = to_json(table);
    const auto eval_path = out_dir / "eval.json";
    write_text(eval_path, j.dump(2) + "\n");
    std::ofstream decile_csv(out_dir / "decile_table.csv");
    write_decile_table_csv(decile_csv, table);
    std::ofstream summary_csv(out_dir / "eval_summary.csv");
    write_eval_summary_csv(summary_csv, summary);

    RunManifest manifest;
    manifest.command = "eval";
    manifest.seed = model.forest.hyperparams().seed;
    manifest.input_digests[args.model] = fnv1a64_file(args.model);
    manifest.input_digests[args.data] = fnv1a64_file(args.data);
    manifest.output_paths = {eval_path.string(), (out_dir / "decile_table.csv").string(),
                             (out_dir / "eval_summary.csv").string()};
    manifest.config = {{"model", args.model},
                       {"data", args.data},
                       {"baseline", args.baseline},
                       {"deciles", args.deciles},
                       {"out", args.out}};
    write_manifest(std::move(manifest), timer, out_dir);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"random-forest training, GAP-proximity verification, and instance-based "
                 "explanation reports"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset CSV");
    synth_cmd->add_option("--out", synth.out, "output CSV path")->required();
    synth_cmd->add_option("--synthetic-config", synth.config_file, "key=value config file");
    auto add_override = [&](const std::string& flag, const std::string& key) {
        synth_cmd
            ->add_option_function<std::string>(
                flag,
                [&synth, key](const std::string& value) { synth.overrides.push_back({key, value}); })
            ->type_name("TEXT");
    };
    add_override("--rows", "n_rows");
    add_override("--numeric", "n_numeric");
    add_override("--categorical", "n_categorical");
    add_override("--noise", "noise");
    add_override("--sigma", "sigma");
    add_override("--sigma-low", "sigma_low");
    add_override("--sigma-high", "sigma_high");
    add_override("--seed", "seed");

    TrainArgs train;
    std::string max_features_text = "all";
    auto* train_cmd = app.add_subcommand("train", "fit a forest and persist the model");
    train_cmd->add_option("--data", train.data, "training CSV");
    train_cmd->add_option("--synthetic-config", train.synthetic_config,
                          "generate training data from a synthetic config instead");
    train_cmd->add_option("--target", train.target, "target column name");
    train_cmd->add_option("--timestamp", train.timestamp, "timestamp column (row-order key)");
    train_cmd->add_option("--model", train.model_out, "model output path")->required();
    train_cmd->add_option("--seed", train.hp.seed, "RNG seed");
    train_cmd->add_option("--trees", train.hp.n_estimators, "number of trees");
    train_cmd->add_option("--max-depth", train.hp.max_depth, "max depth (-1 = unlimited)");
    train_cmd->add_option("--max-features", max_features_text, "all | sqrt | fraction");
    train_cmd->add_option("--min-samples-leaf", train.hp.min_samples_leaf,
                          "minimum bagged rows per leaf");
    train_cmd->add_option("--search-config", train.search_config,
                          "randomized-search config file");
    train_cmd->add_option("--train-fraction", train.train_fraction,
                          "chronological train fraction; the rest reports test metrics");
    train_cmd->add_option("--task", train.task, "regression | classification")
        ->check(CLI::IsMember({"regression", "classification"}));

    ExplainArgs expl;
    auto* explain_cmd =
        app.add_subcommand("explain", "write per-query explanation reports and figure CSVs");
    explain_cmd->add_option("--model", expl.model, "model path")->required();
    explain_cmd->add_option("--data", expl.data, "query CSV (labels optional)")->required();
    explain_cmd->add_option("--out", expl.out, "output directory")->required();
    explain_cmd->add_option("--threshold", expl.threshold, "cumulative weight threshold");
    explain_cmd->add_option("--bins", expl.bins, "histogram bins (0 = automatic)");
    explain_cmd->add_flag("--dump-proximity", expl.dump_proximity,
                          "also write raw GAP rows (proximity.csv + summary JSON)");

    VerifyArgs verify;
    auto* verify_cmd = app.add_subcommand(
        "verify", "check that GAP rows reproduce the forest predictions exactly");
    verify_cmd->add_option("--model", verify.model, "model path")->required();
    verify_cmd->add_option("--data", verify.data, "query CSV")->required();
    verify_cmd->add_option("--tolerance", verify.tolerance, "max allowed |error|");
    verify_cmd->add_option("--out", verify.out, "output directory (default: model directory)");

    EvalArgs eval;
    auto* eval_cmd =
        app.add_subcommand("eval", "metrics, baseline comparison, and confidence deciles");
    eval_cmd->add_option("--model", eval.model, "model path")->required();
    eval_cmd->add_option("--data", eval.data, "labeled test CSV")->required();
    eval_cmd->add_option("--out", eval.out, "output directory")->required();
    eval_cmd->add_option("--baseline", eval.baseline,
                         "numeric feature column holding baseline predictions");
    eval_cmd->add_option("--deciles", eval.deciles, "number of confidence bins");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth);
        if (train_cmd->parsed()) {
            train.hp.max_features = MaxFeatures::parse(max_features_text);
            return run_train(train);
        }
        if (explain_cmd->parsed()) return run_explain(expl);
        if (verify_cmd->parsed()) return run_verify(verify);
        if (eval_cmd->parsed()) return run_eval(eval);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
