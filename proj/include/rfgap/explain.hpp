#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rfgap/proximity.hpp"

namespace rfgap {

/// Honest per-training-row errors come from OOB predictions; the in-bag
/// variant (full-forest fitted values) exists for comparison.
enum class TrainErrorSource { oob, in_bag };

struct TrainErrorTable {
    std::vector<double> abs_error;    // |y_j - yhat_j|, valid entries only
    std::vector<std::uint8_t> valid;  // 0 for never-OOB rows under the OOB source
    std::size_t never_oob = 0;
    double trainset_mae = 0.0; // mean absolute error over valid rows
    TrainErrorSource source = TrainErrorSource::oob;
};

/// Regression only: the downstream confidence statistics are absolute-error
/// based. Never-OOB rows are flagged rather than fatal; aggregates skip them.
inline TrainErrorTable compute_train_errors(const Forest& forest,
                                            TrainErrorSource source = TrainErrorSource::oob) {
    if (forest.task() != Task::regression)
        throw std::invalid_argument("train-error table requires a regression forest");
    const std::size_t n = forest.n_train();
    TrainErrorTable table;
    table.source = source;
    table.abs_error.assign(n, 0.0);
    table.valid.assign(n, 1);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double prediction;
        if (source == TrainErrorSource::in_bag) {
            prediction = forest.predict(forest.train_features().row(i));
        } else if (forest.oob_trees(i).empty()) {
            table.valid[i] = 0;
            ++table.never_oob;
            continue;
        } else {
            prediction = forest.predict_oob(i);
        }
        table.abs_error[i] = std::abs(forest.train_targets()[i] - prediction);
        sum += table.abs_error[i];
        ++used;
    }
    if (used == 0) throw std::runtime_error("no training row has an out-of-bag prediction");
    table.trainset_mae = sum / static_cast<double>(used);
    return table;
}

struct NeighborAttribution {
    std::int32_t train_index;
    double weight;
    double label;
    double contribution;     // weight * label
    double train_abs_error;  // |y_j - yhat_j^OOB|
    bool error_valid;        // false for never-OOB neighbors
};

/// Weights sorted descending with their running sum; the prefix length needed
/// to reach a cumulative threshold is the "how many neighbors matter" curve.
struct CumulativeWeightCurve {
    std::vector<double> weights;    // descending
    std::vector<double> cumulative; // nondecreasing, ends at the row sum

    /// Smallest prefix whose cumulative weight reaches `threshold`.
    /// A threshold of 1 (or more) means every nonzero entry, exactly.
    std::size_t count_for(double threshold) const {
        if (threshold >= 1.0) return weights.size();
        for (std::size_t k = 0; k < cumulative.size(); ++k)
            if (cumulative[k] >= threshold) return k + 1;
        return weights.size();
    }
};

struct LabelHistogram {
    std::vector<double> edges;       // bins+1 ascending
    std::vector<std::size_t> counts; // unweighted
    std::vector<double> weighted;    // sum of row weights per bin (empty if n/a)
};

struct ConfidenceScore {
    double weighted_mae = 0.0; // proximity-weighted neighbor training error
    bool weighted_mae_valid = false; // false when every neighbor is never-OOB
    double trainset_mae = 0.0;
    double ratio = 0.0; // weighted_mae / trainset_mae
    bool ratio_valid = false;
    std::size_t excluded_neighbors = 0; // never-OOB, skipped with renormalization
    double excluded_weight = 0.0;
};

struct ExplanationReport {
    std::int64_t query_id = 0;
    double prediction = 0.0;
    std::optional<double> realized_label;
    double cumulative_threshold = 0.95;
    std::vector<NeighborAttribution> neighbors; // truncated at the threshold
    std::size_t total_nonzero = 0;
    double contribution_sum = 0.0; // untruncated; reproduces the prediction
    CumulativeWeightCurve curve;
    LabelHistogram neighbor_label_hist; // over the truncated neighbor set
    LabelHistogram train_label_hist;    // over the full training set, same bins
    double neighbor_label_q025 = 0.0;   // central 95% mass of the weighted
    double neighbor_label_q975 = 0.0;   // neighbor label distribution
    ConfidenceScore confidence;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

/// Freedman-Diaconis edges over the training labels, shared by both
/// histograms so they are directly comparable. `bins` > 0 overrides.
inline std::vector<double> histogram_edges(std::vector<double> values, int bins) {
    std::sort(values.begin(), values.end());
    const double lo = values.front(), hi = values.back();
    std::size_t n_bins;
    if (bins > 0) {
        n_bins = static_cast<std::size_t>(bins);
    } else {
        const double iqr = quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25);
        const double width =
            2.0 * iqr / std::cbrt(static_cast<double>(values.size()));
        if (!(width > 0.0) || !(hi > lo))
            n_bins = 1;
        else
            n_bins = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::ceil((hi - lo) / width)), 1, 512);
    }
    std::vector<double> edges(n_bins + 1);
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t k = 0; k <= n_bins; ++k)
        edges[k] = lo + span * static_cast<double>(k) / static_cast<double>(n_bins);
    return edges;
}

inline std::size_t bin_of(const std::vector<double>& edges, double v) {
    const std::size_t n_bins = edges.size() - 1;
    if (v <= edges.front()) return 0;
    if (v >= edges.back()) return n_bins - 1;
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    return std::min(static_cast<std::size_t>(std::distance(edges.begin(), it)) - 1, n_bins - 1);
}

/// Smallest label l such that the weight mass at labels <= l reaches q.
inline double weighted_quantile(std::vector<std::pair<double, double>> label_weight, double q) {
    std::sort(label_weight.begin(), label_weight.end());
    double total = 0.0;
    for (const auto& [label, w] : label_weight) total += w;
    double cum = 0.0;
    for (const auto& [label, w] : label_weight) {
        cum += w;
        if (cum >= q * total) return label;
    }
    return label_weight.back().first;
}

} // namespace detail

/// Instance-based explanation of one prediction: which training points carry
/// the weight, how their labels are distributed, and how trustworthy the
/// region looks based on the neighbors' own training errors.
inline ExplanationReport explain(const ProximityEngine& engine, const TrainErrorTable& errors,
                                 const double* query,
                                 std::optional<double> realized_label = std::nullopt,
                                 double cumulative_threshold = 0.95, int histogram_bins = 0,
                                 std::int64_t query_id = 0) {
    if (!(cumulative_threshold > 0.0 && cumulative_threshold <= 1.0))
        throw std::invalid_argument("cumulative threshold must lie in (0, 1]");
    const Forest& forest = engine.forest();
    if (forest.task() != Task::regression)
        throw std::invalid_argument("explanations require a regression forest");
    if (errors.abs_error.size() != forest.n_train())
        throw std::invalid_argument("train-error table does not match the forest");

    ExplanationReport report;
    report.query_id = query_id;
    report.realized_label = realized_label;
    report.cumulative_threshold = cumulative_threshold;
    report.prediction = forest.predict(query);

    const ProximityRow row = engine.gap_row(query, query_id);
    report.total_nonzero = row.entries.size();

    const auto& y = forest.train_targets();
    std::vector<NeighborAttribution> all;
    all.reserve(row.entries.size());
    for (const auto& e : row.entries) {
        const auto j = static_cast<std::size_t>(e.train_index);
        all.push_back({e.train_index, e.weight, y[j], e.weight * y[j],
                       errors.valid[j] ? errors.abs_error[j] : 0.0,
                       errors.valid[j] != 0});
        report.contribution_sum += e.weight * y[j];
    }
    std::sort(all.begin(), all.end(), [](const NeighborAttribution& a,
                                         const NeighborAttribution& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.train_index < b.train_index;
    });

    report.curve.weights.reserve(all.size());
    report.curve.cumulative.reserve(all.size());
    double running = 0.0;
    for (const auto& nb : all) {
        running += nb.weight;
        report.curve.weights.push_back(nb.weight);
        report.curve.cumulative.push_back(running);
    }
    const std::size_t kept = report.curve.count_for(cumulative_threshold);
    report.neighbors.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kept));

    // Confidence: weighted neighbor training error over the full row, with
    // never-OOB neighbors excluded and the remaining error weights
    // renormalized.
    double weighted_error = 0.0, valid_weight = 0.0;
    for (const auto& nb : all) {
        if (!nb.error_valid) {
            ++report.confidence.excluded_neighbors;
            report.confidence.excluded_weight += nb.weight;
            continue;
        }
        weighted_error += nb.weight * nb.train_abs_error;
        valid_weight += nb.weight;
    }
    report.confidence.trainset_mae = errors.trainset_mae;
    if (valid_weight > 0.0) {
        report.confidence.weighted_mae = weighted_error / valid_weight;
        report.confidence.weighted_mae_valid = true;
        if (errors.trainset_mae > 0.0) {
            report.confidence.ratio = report.confidence.weighted_mae / errors.trainset_mae;
            report.confidence.ratio_valid = true;
        }
    }

    // Label distributions: shared train-label bins; the neighbor histogram is
    // over the truncated set, weighted and unweighted.
    const auto edges = detail::histogram_edges(y, histogram_bins);
    report.train_label_hist.edges = edges;
    report.train_label_hist.counts.assign(edges.size() - 1, 0);
    for (const double label : y) ++report.train_label_hist.counts[detail::bin_of(edges, label)];
    report.neighbor_label_hist.edges = edges;
    report.neighbor_label_hist.counts.assign(edges.size() - 1, 0);
    report.neighbor_label_hist.weighted.assign(edges.size() - 1, 0.0);
    for (const auto& nb : report.neighbors) {
        const auto b = detail::bin_of(edges, nb.label);
        ++report.neighbor_label_hist.counts[b];
        report.neighbor_label_hist.weighted[b] += nb.weight;
    }

    std::vector<std::pair<double, double>> label_weight;
    label_weight.reserve(all.size());
    for (const auto& nb : all) label_weight.push_back({nb.label, nb.weight});
    report.neighbor_label_q025 = detail::weighted_quantile(label_weight, 0.025);
    report.neighbor_label_q975 = detail::weighted_quantile(label_weight, 0.975);
    return report;
}

struct NeighborsNeededTable {
    std::vector<double> thresholds;
    std::vector<std::vector<std::size_t>> counts; // [query][threshold]
    std::vector<double> mean_count;               // per threshold
    std::vector<double> median_count;             // per threshold
    std::vector<CumulativeWeightCurve> curves;    // per query
};

/// How many sorted-by-weight neighbors each query needs to reach the given
/// cumulative weight levels.
inline NeighborsNeededTable neighbors_needed(
    const ProximityEngine& engine, const Matrix& queries,
    std::vector<double> thresholds = {0.8, 0.9, 0.95, 0.99, 1.0}) {
    if (queries.rows() == 0) throw std::invalid_argument("neighbors_needed requires >= 1 query");
    NeighborsNeededTable table;
    table.thresholds = std::move(thresholds);
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const ProximityRow row = engine.gap_row(queries.row(i), static_cast<std::int64_t>(i));
        std::vector<double> weights;
        weights.reserve(row.entries.size());
        for (const auto& e : row.entries) weights.push_back(e.weight);
        std::sort(weights.begin(), weights.end(), std::greater<>());
        CumulativeWeightCurve curve;
        curve.weights = std::move(weights);
        double running = 0.0;
        for (const double w : curve.weights) {
            running += w;
            curve.cumulative.push_back(running);
        }
        std::vector<std::size_t> row_counts;
        row_counts.reserve(table.thresholds.size());
        for (const double tau : table.thresholds) row_counts.push_back(curve.count_for(tau));
        table.counts.push_back(std::move(row_counts));
        table.curves.push_back(std::move(curve));
    }
    const std::size_t q = table.counts.size();
    for (std::size_t k = 0; k < table.thresholds.size(); ++k) {
        std::vector<double> column(q);
        double sum = 0.0;
        for (std::size_t i = 0; i < q; ++i) {
            column[i] = static_cast<double>(table.counts[i][k]);
            sum += column[i];
        }
        std::sort(column.begin(), column.end());
        table.mean_count.push_back(sum / static_cast<double>(q));
        table.median_count.push_back(q % 2 == 1 ? column[q / 2]
                                                : 0.5 * (column[q / 2 - 1] + column[q / 2]));
    }
    return table;
}

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt; // undefined, not zero
    return sxy / std::sqrt(sxx * syy);
}

struct ConfidenceVsErrorTable {
    std::vector<double> weighted_mae;   // per test point
    std::vector<double> abs_test_error; // per test point
    std::vector<std::size_t> decile_of; // per test point
    std::vector<double> decile_mean_weighted_mae;
    std::vector<double> decile_mean_abs_error;
    std::vector<std::size_t> decile_size;
    std::optional<double> pearson_per_point;
    std::optional<double> pearson_decile_means;
};

/// Ex-ante confidence against realized error: per-point pairs of
/// (weighted neighbor training error, absolute test error), plus equal-count
/// deciles ranked by the former (remainder spread over the leading bins).
inline ConfidenceVsErrorTable confidence_vs_error(const ProximityEngine& engine,
                                                  const TrainErrorTable& errors,
                                                  const Matrix& test_rows,
                                                  const std::vector<double>& test_labels,
                                                  int n_deciles = 10) {
    const Forest& forest = engine.forest();
    if (forest.task() != Task::regression)
        throw std::invalid_argument("confidence_vs_error requires a regression forest");
    if (n_deciles < 1) throw std::invalid_argument("n_deciles must be positive");
    const std::size_t n = test_rows.rows();
    if (n < static_cast<std::size_t>(n_deciles))
        throw std::invalid_argument("need at least n_deciles test rows");
    if (test_labels.size() != n)
        throw std::invalid_argument("test labels do not match test rows");
    if (errors.abs_error.size() != forest.n_train())
        throw std::invalid_argument("train-error table does not match the forest");

    ConfidenceVsErrorTable table;
    table.weighted_mae.resize(n);
    table.abs_test_error.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = test_rows.row(i);
        table.abs_test_error[i] = std::abs(test_labels[i] - forest.predict(row));
        const ProximityRow prox = engine.gap_row(row, static_cast<std::int64_t>(i));
        double weighted = 0.0, valid_weight = 0.0;
        for (const auto& e : prox.entries) {
            const auto j = static_cast<std::size_t>(e.train_index);
            if (!errors.valid[j]) continue;
            weighted += e.weight * errors.abs_error[j];
            valid_weight += e.weight;
        }
        if (valid_weight <= 0.0)
            throw std::runtime_error("every neighbor of test row " + std::to_string(i) +
                                     " is never-OOB");
        table.weighted_mae[i] = weighted / valid_weight;
    }

    // Equal-count deciles by weighted error, ties broken by query order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return table.weighted_mae[a] < table.weighted_mae[b];
    });
    const auto d = static_cast<std::size_t>(n_deciles);
    const std::size_t base = n / d, rem = n % d;
    table.decile_of.resize(n);
    table.decile_mean_weighted_mae.assign(d, 0.0);
    table.decile_mean_abs_error.assign(d, 0.0);
    table.decile_size.assign(d, 0);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < d; ++k) {
        const std::size_t size = base + (k < rem ? 1 : 0);
        for (std::size_t s = 0; s < size; ++s, ++cursor) {
            const std::size_t idx = order[cursor];
            table.decile_of[idx] = k;
            table.decile_mean_weighted_mae[k] += table.weighted_mae[idx];
            table.decile_mean_abs_error[k] += table.abs_test_error[idx];
        }
        table.decile_size[k] = size;
        if (size > 0) {
            table.decile_mean_weighted_mae[k] /= static_cast<double>(size);
            table.decile_mean_abs_error[k] /= static_cast<double>(size);
        }
    }
    table.pearson_per_point = pearson(table.weighted_mae, table.abs_test_error);
    table.pearson_decile_means =
        pearson(table.decile_mean_weighted_mae, table.decile_mean_abs_error);
    return table;
}

// ---- serialization -------------------------------------------------------

inline nlohmann::json to_json(const LabelHistogram& hist) {
    nlohmann::json j{{"edges", hist.edges}, {"counts", hist.counts}};
    if (!hist.weighted.empty()) j["weighted"] = hist.weighted;
    return j;
}

inline nlohmann::json to_json(const ExplanationReport& r) {
    nlohmann::json neighbors = nlohmann::json::array();
    for (const auto& nb : r.neighbors) {
        nlohmann::json item{{"train_index", nb.train_index},
                            {"weight", nb.weight},
                            {"label", nb.label},
                            {"contribution", nb.contribution}};
        if (nb.error_valid) item["train_abs_error"] = nb.train_abs_error;
        neighbors.push_back(std::move(item));
    }
    nlohmann::json n_for_threshold;
    for (const double tau : {0.8, 0.9, 0.95, 0.99, 1.0}) {
        char key[8];
        std::snprintf(key, sizeof(key), "%.2f", tau);
        n_for_threshold[key] = r.curve.count_for(tau);
    }
    nlohmann::json j{
        {"query_id", r.query_id},
        {"prediction", r.prediction},
        {"cumulative_threshold", r.cumulative_threshold},
        {"neighbors", std::move(neighbors)},
        {"total_nonzero", r.total_nonzero},
        {"contribution_sum", r.contribution_sum},
        {"curve",
         {{"weights", r.curve.weights},
          {"cumulative", r.curve.cumulative},
          {"n_for_threshold", std::move(n_for_threshold)}}},
        {"neighbor_label_hist", to_json(r.neighbor_label_hist)},
        {"train_label_hist", to_json(r.train_label_hist)},
        {"neighbor_label_q025", r.neighbor_label_q025},
        {"neighbor_label_q975", r.neighbor_label_q975},
        {"confidence",
         {{"weighted_mae", r.confidence.weighted_mae_valid
                               ? nlohmann::json(r.confidence.weighted_mae)
                               : nlohmann::json()},
          {"trainset_mae", r.confidence.trainset_mae},
          {"ratio", r.confidence.ratio_valid ? nlohmann::json(r.confidence.ratio)
                                             : nlohmann::json()},
          {"excluded_neighbors", r.confidence.excluded_neighbors},
          {"excluded_weight", r.confidence.excluded_weight}}}};
    if (r.realized_label) j["realized_label"] = *r.realized_label;
    return j;
}

inline void write_curve_csv(std::ostream& out, const CumulativeWeightCurve& curve) {
    out << "rank,weight,cumulative\n";
    for (std::size_t k = 0; k < curve.weights.size(); ++k)
        out << (k + 1) << ',' << curve.weights[k] << ',' << curve.cumulative[k] << '\n';
}

inline void write_histogram_csv(std::ostream& out, const LabelHistogram& hist) {
    out << "bin_lo,bin_hi,count";
    if (!hist.weighted.empty()) out << ",weighted";
    out << '\n';
    for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
        out << hist.edges[b] << ',' << hist.edges[b + 1] << ',' << hist.counts[b];
        if (!hist.weighted.empty()) out << ',' << hist.weighted[b];
        out << '\n';
    }
}

inline void write_neighbors_needed_csv(std::ostream& out, const NeighborsNeededTable& table) {
    out << "threshold,mean_count,median_count\n";
    for (std::size_t k = 0; k < table.thresholds.size(); ++k)
        out << table.thresholds[k] << ',' << table.mean_count[k] << ',' << table.median_count[k]
            << '\n';
}

inline void write_decile_table_csv(std::ostream& out, const ConfidenceVsErrorTable& table) {
    out << "decile,size,mean_weighted_mae,mean_abs_test_error\n";
    for (std::size_t k = 0; k < table.decile_size.size(); ++k)
        out << (k + 1) << ',' << table.decile_size[k] << ','
            << table.decile_mean_weighted_mae[k] << ',' << table.decile_mean_abs_error[k] << '\n';
}

inline nlohmann::json to_json(const ConfidenceVsErrorTable& table) {
    return {{"pearson_per_point", table.pearson_per_point
                                      ? nlohmann::json(*table.pearson_per_point)
                                      : nlohmann::json()},
            {"pearson_decile_means", table.pearson_decile_means
                                         ? nlohmann::json(*table.pearson_decile_means)
                                         : nlohmann::json()},
            {"decile_mean_weighted_mae", table.decile_mean_weighted_mae},
            {"decile_mean_abs_test_error", table.decile_mean_abs_error},
            {"decile_size", table.decile_size}};
}

} // namespace rfgap
