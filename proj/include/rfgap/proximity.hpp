#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rfgap/forest.hpp"

namespace rfgap {

enum class ProximityKind { gap_test, gap_train_oob, breiman };

inline const char* to_string(ProximityKind kind) {
    switch (kind) {
        case ProximityKind::gap_test: return "GAP-test";
        case ProximityKind::gap_train_oob: return "GAP-train-OOB";
        default: return "Breiman";
    }
}

struct ProximityEntry {
    std::int32_t train_index;
    double weight;
};

/// Sparse weight row over the training set for one query point. Entries are
/// ascending by train index and strictly positive. GAP rows sum to 1.
struct ProximityRow {
    std::int64_t query_id = -1;
    ProximityKind kind = ProximityKind::gap_test;
    std::vector<ProximityEntry> entries;

    double weight_sum() const {
        double s = 0.0;
        for (const auto& e : entries) s += e.weight;
        return s;
    }
    double weight_for(std::int32_t train_index) const {
        for (const auto& e : entries)
            if (e.train_index == train_index) return e.weight;
        return 0.0;
    }
};

/// Per-tree, per-leaf training membership, built once by routing every
/// training row through the finished trees and read-only afterwards.
///
/// For a leaf this records three things:
///  - the distinct in-bag members with their bag multiplicities c_j(t)
///    (the multiset M and set J of the GAP definition),
///  - the multiset size |M| = sum of those multiplicities,
///  - how many distinct training rows route there regardless of bag status,
///    which is the leaf size N^T used by the Breiman weights (an out-of-bag
///    row sharing the leaf enlarges the denominator but gets no weight).
class LeafMembership {
public:
    struct Member {
        std::int32_t train_index;
        std::uint32_t count;
    };

    explicit LeafMembership(const Forest& forest) {
        const Matrix& rows = forest.train_features();
        if (rows.rows() != forest.n_train())
            throw std::invalid_argument("forest carries no training features");
        const std::size_t n_trees = forest.n_trees();
        members_.resize(n_trees);
        bag_total_.resize(n_trees);
        routed_distinct_.resize(n_trees);
        for (std::size_t t = 0; t < n_trees; ++t) {
            const Tree& tree = forest.tree(t);
            const BagCounts& counts = forest.bag_counts(t);
            members_[t].resize(static_cast<std::size_t>(tree.n_leaves));
            bag_total_[t].assign(static_cast<std::size_t>(tree.n_leaves), 0);
            routed_distinct_[t].assign(static_cast<std::size_t>(tree.n_leaves), 0);
            for (std::size_t j = 0; j < rows.rows(); ++j) {
                const auto leaf = static_cast<std::size_t>(tree.route(rows.row(j)));
                ++routed_distinct_[t][leaf];
                if (counts[j] > 0) {
                    members_[t][leaf].push_back({static_cast<std::int32_t>(j), counts[j]});
                    bag_total_[t][leaf] += counts[j];
                }
            }
        }
    }

    const std::vector<Member>& members(std::size_t t, std::int32_t leaf) const {
        return members_[t][static_cast<std::size_t>(leaf)];
    }
    std::uint64_t bag_total(std::size_t t, std::int32_t leaf) const {
        return bag_total_[t][static_cast<std::size_t>(leaf)];
    }
    std::uint32_t routed_distinct(std::size_t t, std::int32_t leaf) const {
        return routed_distinct_[t][static_cast<std::size_t>(leaf)];
    }

private:
    std::vector<std::vector<std::vector<Member>>> members_;
    std::vector<std::vector<std::uint64_t>> bag_total_;
    std::vector<std::vector<std::uint32_t>> routed_distinct_;
};

/// Bundles a forest with its leaf-membership cache. Queries are independent
/// and read-only, so distinct rows may be computed concurrently.
class ProximityEngine {
public:
    explicit ProximityEngine(const Forest& forest) : forest_(&forest), members_(forest) {}

    const Forest& forest() const { return *forest_; }
    const LeafMembership& membership() const { return members_; }

    /// GAP row for an external query: a test point is out of bag for every
    /// tree, so the average runs over all M trees. Per tree, each distinct
    /// in-bag leaf member j contributes c_j(t) / |M(t)|.
    ProximityRow gap_row(const double* query, std::int64_t query_id = -1) const {
        std::vector<std::size_t> all(forest_->n_trees());
        std::iota(all.begin(), all.end(), 0);
        ProximityRow row = accumulate_gap(query, all);
        row.query_id = query_id;
        row.kind = ProximityKind::gap_test;
        return row;
    }

    /// GAP row for a training row, averaged over the trees where it is out of
    /// bag. Its own index never appears: it is in no bag of any tree in S_i.
    ProximityRow gap_train_row(std::size_t train_index) const {
        const auto trees = forest_->oob_trees(train_index);
        if (trees.empty())
            throw std::runtime_error("training row " + std::to_string(train_index) +
                                     " is in-bag for every tree (never out-of-bag)");
        ProximityRow row =
            accumulate_gap(forest_->train_features().row(train_index), trees);
        row.query_id = static_cast<std::int64_t>(train_index);
        row.kind = ProximityKind::gap_train_oob;
        return row;
    }

    /// Breiman-style row over all M trees: uniform weight 1/N^T for each
    /// distinct in-bag member of the query's leaf, where N^T counts the
    /// distinct training rows routed to that leaf (bagged or not). Ignoring
    /// bag multiplicities is what keeps this row from reproducing the forest
    /// prediction.
    ProximityRow breiman_row(const double* query, std::int64_t query_id = -1) const {
        std::vector<double> acc(forest_->n_train(), 0.0);
        for (std::size_t t = 0; t < forest_->n_trees(); ++t) {
            const auto leaf = forest_->tree(t).route(query);
            const double denom = static_cast<double>(members_.routed_distinct(t, leaf));
            for (const auto& m : members_.members(t, leaf))
                acc[static_cast<std::size_t>(m.train_index)] += 1.0 / denom;
        }
        ProximityRow row = gather(acc, forest_->n_trees());
        row.query_id = query_id;
        row.kind = ProximityKind::breiman;
        return row;
    }

    /// Weighted label average per the weights in `row`: the scalar prediction
    /// for regression, the class probability vector for classification.
    std::vector<double> reconstruct(const ProximityRow& row) const {
        const auto& y = forest_->train_targets();
        std::vector<double> out(forest_->value_width(), 0.0);
        for (const auto& e : row.entries) {
            if (e.train_index < 0 || static_cast<std::size_t>(e.train_index) >= y.size())
                throw std::out_of_range("proximity entry indexes outside the training set");
            if (forest_->task() == Task::regression)
                out[0] += e.weight * y[static_cast<std::size_t>(e.train_index)];
            else
                out[static_cast<std::size_t>(y[static_cast<std::size_t>(e.train_index)])] +=
                    e.weight;
        }
        return out;
    }

    double reconstruct_value(const ProximityRow& row) const { return reconstruct(row)[0]; }

private:
    ProximityRow accumulate_gap(const double* query, const std::vector<std::size_t>& trees) const {
        std::vector<double> acc(forest_->n_train(), 0.0);
        for (const std::size_t t : trees) {
            const auto leaf = forest_->tree(t).route(query);
            const double denom = static_cast<double>(members_.bag_total(t, leaf));
            for (const auto& m : members_.members(t, leaf))
                acc[static_cast<std::size_t>(m.train_index)] +=
                    static_cast<double>(m.count) / denom;
        }
        return gather(acc, trees.size());
    }

    static ProximityRow gather(std::vector<double>& acc, std::size_t divisor) {
        ProximityRow row;
        const double inv = 1.0 / static_cast<double>(divisor);
        for (std::size_t j = 0; j < acc.size(); ++j)
            if (acc[j] != 0.0)
                row.entries.push_back({static_cast<std::int32_t>(j), acc[j] * inv});
        return row;
    }

    const Forest* forest_;
    LeafMembership members_;
};

/// Eq.-style reconstruction without an engine: weights dotted with labels
/// (one-hot encoded for classification).
inline std::vector<double> reconstruct_from(const ProximityRow& row,
                                            const std::vector<double>& train_targets,
                                            Task task = Task::regression, int n_classes = 0) {
    std::vector<double> out(task == Task::regression ? 1 : static_cast<std::size_t>(n_classes),
                            0.0);
    for (const auto& e : row.entries) {
        if (e.train_index < 0 || static_cast<std::size_t>(e.train_index) >= train_targets.size())
            throw std::out_of_range("proximity entry indexes outside the training set");
        const double y = train_targets[static_cast<std::size_t>(e.train_index)];
        if (task == Task::regression)
            out[0] += e.weight * y;
        else
            out[static_cast<std::size_t>(y)] += e.weight;
    }
    return out;
}

struct ReconstructionReport {
    double max_abs_gap_error = 0.0;
    double max_abs_breiman_error = 0.0;
    std::vector<double> gap_errors;     // per query, max over classes
    std::vector<double> breiman_errors; // per query, max over classes
    double tolerance = 0.0;

    bool gap_exact() const { return max_abs_gap_error <= tolerance; }
};

/// Compare reconstructed predictions against the forest's own, per query:
/// GAP rows must match (to the tolerance); Breiman rows generally do not.
inline ReconstructionReport verify_reconstruction(const ProximityEngine& engine,
                                                  const Matrix& queries,
                                                  double tolerance = 1e-9) {
    ReconstructionReport report;
    report.tolerance = tolerance;
    const Forest& forest = engine.forest();
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const double* row = queries.row(i);
        const auto truth = forest.predict_vector(row);
        auto delta = [&](const std::vector<double>& got) {
            double worst = 0.0;
            for (std::size_t k = 0; k < truth.size(); ++k)
                worst = std::max(worst, std::abs(got[k] - truth[k]));
            return worst;
        };
        report.gap_errors.push_back(
            delta(engine.reconstruct(engine.gap_row(row, static_cast<std::int64_t>(i)))));
        report.breiman_errors.push_back(
            delta(engine.reconstruct(engine.breiman_row(row, static_cast<std::int64_t>(i)))));
    }
    for (const double e : report.gap_errors)
        report.max_abs_gap_error = std::max(report.max_abs_gap_error, e);
    for (const double e : report.breiman_errors)
        report.max_abs_breiman_error = std::max(report.max_abs_breiman_error, e);
    return report;
}

struct ProximityMatrixSummary {
    std::size_t n_queries = 0;
    double mean_nnz = 0.0;
    std::size_t max_nnz = 0;
    double max_row_sum_deviation = 0.0; // max |sum - 1|
};

inline ProximityMatrixSummary summarize_rows(const std::vector<ProximityRow>& rows) {
    ProximityMatrixSummary s;
    s.n_queries = rows.size();
    for (const auto& row : rows) {
        s.mean_nnz += static_cast<double>(row.entries.size());
        s.max_nnz = std::max(s.max_nnz, row.entries.size());
        s.max_row_sum_deviation =
            std::max(s.max_row_sum_deviation, std::abs(row.weight_sum() - 1.0));
    }
    if (!rows.empty()) s.mean_nnz /= static_cast<double>(rows.size());
    return s;
}

/// Dense Q x N weight matrix. Guarded: dense output is refused beyond
/// 20,000 training rows (the sparse row path has no such limit).
inline Matrix dense_gap_matrix(const ProximityEngine& engine, const Matrix& queries) {
    const std::size_t n = engine.forest().n_train();
    if (n > 20000)
        throw std::runtime_error("dense proximity matrix refused for more than 20000 "
                                 "training rows; use sparse rows instead");
    Matrix out(queries.rows(), n);
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const auto row = engine.gap_row(queries.row(i), static_cast<std::int64_t>(i));
        for (const auto& e : row.entries)
            out(i, static_cast<std::size_t>(e.train_index)) = e.weight;
    }
    return out;
}

inline void write_proximity_csv(std::ostream& out, const std::vector<ProximityRow>& rows) {
    out << "query_id,train_index,weight\n";
    char buf[32];
    for (const auto& row : rows)
        for (const auto& e : row.entries) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), e.weight);
            out << row.query_id << ',' << e.train_index << ',' << std::string_view(buf, ptr)
                << '\n';
        }
}

inline nlohmann::json to_json(const ProximityRow& row) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : row.entries) entries.push_back({e.train_index, e.weight});
    return {{"query_id", row.query_id}, {"kind", to_string(row.kind)}, {"entries", entries}};
}

inline nlohmann::json to_json(const ProximityMatrixSummary& s) {
    return {{"n_queries", s.n_queries},
            {"mean_nnz", s.mean_nnz},
            {"max_nnz", s.max_nnz},
            {"max_row_sum_deviation", s.max_row_sum_deviation}};
}

} // namespace rfgap
