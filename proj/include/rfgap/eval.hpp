#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rfgap/dataset.hpp"
#include "rfgap/forest.hpp"
#include "rfgap/rng.hpp"

namespace rfgap {

struct Metrics {
    double rmse = 0.0;
    double mae = 0.0;
};

inline Metrics compute_metrics(const std::vector<double>& predictions,
                               const std::vector<double>& labels) {
    if (predictions.empty()) throw std::invalid_argument("metrics need at least one value");
    if (predictions.size() != labels.size())
        throw std::invalid_argument("predictions and labels differ in length");
    double sq = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double e = predictions[i] - labels[i];
        sq += e * e;
        ab += std::abs(e);
    }
    const auto n = static_cast<double>(predictions.size());
    return {std::sqrt(sq / n), ab / n};
}

inline double improvement_pct(double baseline_rmse, double model_rmse) {
    if (baseline_rmse <= 0.0) throw std::invalid_argument("baseline RMSE must be positive");
    return 100.0 * (baseline_rmse - model_rmse) / baseline_rmse;
}

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0; // half-open
    std::size_t size() const { return end - begin; }
};

struct CVFold {
    IndexRange train;      // always starts at row 0 (expanding window)
    IndexRange validation; // the block immediately after the train range
};

struct CVPlan {
    std::vector<CVFold> folds;
};

/// Walk-forward, expanding-window plan over time-ordered rows: n_folds+1
/// contiguous blocks of equal size (all remainder rows go to the earliest
/// block); fold k trains on blocks 0..k and validates on block k+1, so
/// validation data never precedes its training data.
inline CVPlan walk_forward_splits(std::size_t n_rows, int n_folds) {
    if (n_folds < 1) throw std::invalid_argument("n_folds must be positive");
    const auto blocks = static_cast<std::size_t>(n_folds) + 1;
    if (n_rows < blocks) throw std::invalid_argument("too few rows for the requested folds");
    const std::size_t base = n_rows / blocks;
    const std::size_t first_block = base + (n_rows % blocks);

    std::vector<std::size_t> boundaries{0, first_block};
    for (std::size_t b = 1; b < blocks; ++b) boundaries.push_back(boundaries.back() + base);

    CVPlan plan;
    for (int k = 0; k < n_folds; ++k) {
        const auto ki = static_cast<std::size_t>(k);
        plan.folds.push_back({{0, boundaries[ki + 1]}, {boundaries[ki + 1], boundaries[ki + 2]}});
    }
    return plan;
}

/// Candidate value lists for the randomized search.
struct ParamGrid {
    std::vector<int> n_estimators{100};
    std::vector<int> max_depth{-1};
    std::vector<MaxFeatures> max_features{MaxFeatures::all()};
    std::vector<int> min_samples_leaf{1};

    void validate() const {
        if (n_estimators.empty() || max_depth.empty() || max_features.empty() ||
            min_samples_leaf.empty())
            throw std::invalid_argument("every hyperparameter list must be nonempty");
    }
};

struct SearchCandidate {
    Hyperparams hp;
    std::vector<double> fold_rmse;
    double mean_rmse = 0.0;
};

struct SearchResult {
    Hyperparams best;
    std::size_t best_index = 0;
    std::vector<SearchCandidate> table;
};

namespace detail {

inline Dataset slice_rows(const Dataset& ds, IndexRange range) {
    Dataset out;
    out.schema = ds.schema;
    out.features = Matrix(range.size(), ds.n_features());
    for (std::size_t i = range.begin; i < range.end; ++i)
        std::copy(ds.features.row(i), ds.features.row(i) + ds.n_features(),
                  out.features.row(i - range.begin));
    if (ds.has_target())
        out.target.assign(ds.target.begin() + static_cast<std::ptrdiff_t>(range.begin),
                          ds.target.begin() + static_cast<std::ptrdiff_t>(range.end));
    return out;
}

} // namespace detail

/// Uniformly sample n_samples hyperparameter combinations, score each by mean
/// validation RMSE over the walk-forward plan, and return the argmin (ties to
/// the earlier sample). Candidates never see rows outside their fold ranges.
inline SearchResult randomized_search(const Dataset& ds, const ParamGrid& grid, int n_samples,
                                      int n_folds, std::uint64_t seed,
                                      Task task = Task::regression) {
    grid.validate();
    if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");
    const CVPlan plan = walk_forward_splits(ds.n_rows(), n_folds);

    Rng rng(seed, 0x53524348u); // search stream
    SearchResult result;
    for (int s = 0; s < n_samples; ++s) {
        Hyperparams hp;
        hp.n_estimators = grid.n_estimators[rng.next_below(grid.n_estimators.size())];
        hp.max_depth = grid.max_depth[rng.next_below(grid.max_depth.size())];
        hp.max_features = grid.max_features[rng.next_below(grid.max_features.size())];
        hp.min_samples_leaf = grid.min_samples_leaf[rng.next_below(grid.min_samples_leaf.size())];
        hp.seed = seed;

        SearchCandidate candidate;
        candidate.hp = hp;
        for (const CVFold& fold : plan.folds) {
            const Dataset train = detail::slice_rows(ds, fold.train);
            const Dataset val = detail::slice_rows(ds, fold.validation);
            const Forest forest = Forest::fit(train, hp, task);
            candidate.fold_rmse.push_back(
                compute_metrics(forest.predict_many(val.features), val.target).rmse);
        }
        for (const double r : candidate.fold_rmse) candidate.mean_rmse += r;
        candidate.mean_rmse /= static_cast<double>(candidate.fold_rmse.size());
        result.table.push_back(std::move(candidate));
    }

    result.best_index = 0;
    for (std::size_t i = 1; i < result.table.size(); ++i)
        if (result.table[i].mean_rmse < result.table[result.best_index].mean_rmse)
            result.best_index = i;
    result.best = result.table[result.best_index].hp;
    return result;
}

struct EvalSummary {
    Metrics model;
    std::optional<Metrics> baseline;
    std::optional<double> improvement_pct; // RMSE improvement over the baseline
};

inline EvalSummary evaluate(const std::vector<double>& predictions,
                            const std::vector<double>& labels,
                            const std::vector<double>* baseline_predictions = nullptr) {
    EvalSummary summary;
    summary.model = compute_metrics(predictions, labels);
    if (baseline_predictions) {
        summary.baseline = compute_metrics(*baseline_predictions, labels);
        summary.improvement_pct =
            rfgap::improvement_pct(summary.baseline->rmse, summary.model.rmse);
    }
    return summary;
}

/// key=value search config; list values are comma-separated. Keys: n_samples,
/// n_folds, trees, max_depth, max_features, min_samples_leaf.
struct SearchConfig {
    ParamGrid grid;
    int n_samples = 10;
    int n_folds = 5;
};

inline SearchConfig parse_search_config(std::istream& in) {
    SearchConfig cfg;
    std::string line;
    auto split_list = [](const std::string& text) {
        std::vector<std::string> out;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ','))
            out.emplace_back(rfgap::detail::trim(item));
        return out;
    };
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto text = rfgap::detail::trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("expected key=value, got: " + std::string(text));
        const std::string key{rfgap::detail::trim(text.substr(0, eq))};
        const std::string value{rfgap::detail::trim(text.substr(eq + 1))};
        if (key == "n_samples") cfg.n_samples = std::stoi(value);
        else if (key == "n_folds") cfg.n_folds = std::stoi(value);
        else if (key == "trees") {
            cfg.grid.n_estimators.clear();
            for (const auto& v : split_list(value)) cfg.grid.n_estimators.push_back(std::stoi(v));
        } else if (key == "max_depth") {
            cfg.grid.max_depth.clear();
            for (const auto& v : split_list(value)) cfg.grid.max_depth.push_back(std::stoi(v));
        } else if (key == "max_features") {
            cfg.grid.max_features.clear();
            for (const auto& v : split_list(value))
                cfg.grid.max_features.push_back(MaxFeatures::parse(v));
        } else if (key == "min_samples_leaf") {
            cfg.grid.min_samples_leaf.clear();
            for (const auto& v : split_list(value))
                cfg.grid.min_samples_leaf.push_back(std::stoi(v));
        } else {
            throw std::invalid_argument("unknown search config key: " + key);
        }
    }
    return cfg;
}

inline SearchConfig load_search_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open search config: " + path);
    return parse_search_config(in);
}

// ---- serialization -------------------------------------------------------

inline nlohmann::json to_json(const Metrics& m) { return {{"rmse", m.rmse}, {"mae", m.mae}}; }

inline void write_eval_summary_csv(std::ostream& out, const EvalSummary& s) {
    out << "series,rmse,mae\n";
    out << "model," << s.model.rmse << ',' << s.model.mae << '\n';
    if (s.baseline) out << "baseline," << s.baseline->rmse << ',' << s.baseline->mae << '\n';
    if (s.improvement_pct) out << "improvement_pct," << *s.improvement_pct << ",\n";
}

inline void write_search_table_csv(std::ostream& out, const SearchResult& r) {
    std::size_t n_folds = 0;
    for (const auto& c : r.table) n_folds = std::max(n_folds, c.fold_rmse.size());
    out << "candidate,trees,max_depth,max_features,min_samples_leaf,mean_rmse";
    for (std::size_t k = 0; k < n_folds; ++k) out << ",fold" << (k + 1) << "_rmse";
    out << ",best\n";
    for (std::size_t i = 0; i < r.table.size(); ++i) {
        const auto& c = r.table[i];
        out << i << ',' << c.hp.n_estimators << ',' << c.hp.max_depth << ','
            << c.hp.max_features.to_string() << ',' << c.hp.min_samples_leaf << ','
            << c.mean_rmse;
        for (const double f : c.fold_rmse) out << ',' << f;
        out << ',' << (i == r.best_index ? 1 : 0) << '\n';
    }
}

inline nlohmann::json to_json(const EvalSummary& s) {
    nlohmann::json j{{"model", to_json(s.model)}};
    if (s.baseline) j["baseline"] = to_json(*s.baseline);
    if (s.improvement_pct) j["improvement_pct"] = *s.improvement_pct;
    return j;
}

inline nlohmann::json to_json(const Hyperparams& hp) {
    return {{"trees", hp.n_estimators},
            {"max_depth", hp.max_depth},
            {"max_features", hp.max_features.to_string()},
            {"min_samples_leaf", hp.min_samples_leaf},
            {"seed", hp.seed},
            {"bootstrap", hp.bootstrap}};
}

inline nlohmann::json to_json(const SearchResult& r) {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& c : r.table)
        table.push_back({{"hyperparams", to_json(c.hp)},
                         {"fold_rmse", c.fold_rmse},
                         {"mean_rmse", c.mean_rmse}});
    return {{"best", to_json(r.best)}, {"best_index", r.best_index}, {"candidates", table}};
}

} // namespace rfgap
