#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfgap/dataset.hpp"
#include "rfgap/rng.hpp"

namespace rfgap {

enum class Task { regression, classification };

/// Number of features scanned per split: all of them, round(sqrt(P)), or
/// ceil(p * P) for a fraction p in (0, 1].
struct MaxFeatures {
    enum class Kind { all, sqrt_of_p, fraction };
    Kind kind = Kind::all;
    double fraction = 1.0;

    static MaxFeatures all() { return {}; }
    static MaxFeatures sqrt_of_p() { return {Kind::sqrt_of_p, 1.0}; }
    static MaxFeatures frac(double p) {
        if (!(p > 0.0 && p <= 1.0))
            throw std::invalid_argument("max_features fraction must lie in (0, 1]");
        return {Kind::fraction, p};
    }
    static MaxFeatures parse(const std::string& text) {
        if (text == "all") return all();
        if (text == "sqrt") return sqrt_of_p();
        try {
            std::size_t pos = 0;
            const double p = std::stod(text, &pos);
            if (pos == text.size()) return frac(p);
        } catch (const std::exception&) {
        }
        throw std::invalid_argument("max_features must be 'all', 'sqrt', or a fraction: " + text);
    }
    std::string to_string() const {
        switch (kind) {
            case Kind::all: return "all";
            case Kind::sqrt_of_p: return "sqrt";
            default: {
                char buf[32];
                auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), fraction);
                return std::string(buf, ptr);
            }
        }
    }
    int resolve(int n_features) const {
        switch (kind) {
            case Kind::all: return n_features;
            case Kind::sqrt_of_p:
                return std::max(1, static_cast<int>(std::llround(std::sqrt(n_features))));
            default:
                return std::clamp(static_cast<int>(std::ceil(fraction * n_features)), 1,
                                  n_features);
        }
    }
    bool operator==(const MaxFeatures&) const = default;
};

struct Hyperparams {
    int n_estimators = 100;
    int max_depth = -1; // -1 = unlimited; 0 = single-leaf trees
    MaxFeatures max_features = MaxFeatures::all();
    int min_samples_leaf = 1;
    std::uint64_t seed = 0;
    bool bootstrap = true; // false = debug mode, every bag multiplicity is 1

    bool operator==(const Hyperparams&) const = default;
};

struct TreeNode {
    std::int32_t feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t leaf_id = -1;

    bool is_leaf() const { return leaf_id >= 0; }
};

/// One CART tree in preorder layout. Leaf ids are dense 0..n_leaves-1 in
/// creation order. Routing sends feature values <= threshold left.
struct Tree {
    std::vector<TreeNode> nodes;
    std::vector<double> leaf_values; // n_leaves * value_width, row-major per leaf
    std::int32_t n_leaves = 0;

    std::int32_t route(const double* row) const {
        std::int32_t idx = 0;
        while (!nodes[idx].is_leaf()) {
            const TreeNode& n = nodes[idx];
            idx = row[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[idx].leaf_id;
    }
    const double* leaf_value(std::int32_t leaf_id, std::size_t width) const {
        return leaf_values.data() + static_cast<std::size_t>(leaf_id) * width;
    }
};

using BagCounts = std::vector<std::uint32_t>;
using LeafAssignment = std::vector<std::int32_t>; // one leaf id per tree

/// Bagged CART ensemble. Immutable after fit(); all query paths are
/// read-only, so a Forest may be shared freely across threads.
///
/// Leaf values are the mean (regression) or class-frequency vector
/// (classification) of the bagged rows routed to the leaf, counted with
/// multiplicity and accumulated in ascending train-index order, which pins
/// them to an exactly reproducible number.
class Forest {
public:
    static Forest fit(const Dataset& ds, const Hyperparams& hp, Task task = Task::regression);

    /// Assemble a forest from explicit parts (hand-built fixtures, model IO).
    static Forest from_parts(Task task, int n_classes, Hyperparams hp, std::vector<Tree> trees,
                             std::vector<BagCounts> bags, std::vector<double> train_targets,
                             std::size_t n_features) {
        Forest f;
        f.task_ = task;
        f.n_classes_ = n_classes;
        f.hp_ = std::move(hp);
        f.trees_ = std::move(trees);
        f.bags_ = std::move(bags);
        f.train_targets_ = std::move(train_targets);
        f.n_features_ = n_features;
        if (f.trees_.size() != f.bags_.size())
            throw std::invalid_argument("trees and bag counts must pair up");
        if (f.trees_.empty()) throw std::invalid_argument("forest needs at least one tree");
        for (const auto& bag : f.bags_)
            if (bag.size() != f.train_targets_.size())
                throw std::invalid_argument("bag counts must cover every training row");
        return f;
    }

    Task task() const { return task_; }
    int n_classes() const { return n_classes_; }
    std::size_t value_width() const {
        return task_ == Task::regression ? 1 : static_cast<std::size_t>(n_classes_);
    }
    std::size_t n_trees() const { return trees_.size(); }
    std::size_t n_train() const { return train_targets_.size(); }
    std::size_t n_features() const { return n_features_; }
    const Hyperparams& hyperparams() const { return hp_; }
    const Tree& tree(std::size_t t) const { return trees_[t]; }
    const BagCounts& bag_counts(std::size_t t) const { return bags_[t]; }
    const std::vector<double>& train_targets() const { return train_targets_; }

    bool is_oob(std::size_t row, std::size_t t) const { return bags_[t][row] == 0; }

    /// S_i: trees for which training row i is out of bag.
    std::vector<std::size_t> oob_trees(std::size_t row) const {
        std::vector<std::size_t> out;
        for (std::size_t t = 0; t < trees_.size(); ++t)
            if (is_oob(row, t)) out.push_back(t);
        return out;
    }

    /// Training rows that are in-bag for every tree (OOB paths reject them).
    std::vector<std::size_t> never_oob_rows() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < n_train(); ++i)
            if (oob_trees(i).empty()) out.push_back(i);
        return out;
    }

    LeafAssignment apply_row(const double* row) const {
        LeafAssignment leaves(trees_.size());
        for (std::size_t t = 0; t < trees_.size(); ++t) leaves[t] = trees_[t].route(row);
        return leaves;
    }

    std::vector<LeafAssignment> apply(const Matrix& rows) const {
        check_width(rows.cols());
        std::vector<LeafAssignment> out;
        out.reserve(rows.rows());
        for (std::size_t i = 0; i < rows.rows(); ++i) out.push_back(apply_row(rows.row(i)));
        return out;
    }

    /// Mean of leaf values over all trees: the prediction (regression) or the
    /// soft-vote class probability vector (classification).
    std::vector<double> predict_vector(const double* row) const {
        const std::size_t width = value_width();
        std::vector<double> acc(width, 0.0);
        for (const auto& tree : trees_) {
            const double* value = tree.leaf_value(tree.route(row), width);
            for (std::size_t k = 0; k < width; ++k) acc[k] += value[k];
        }
        const double inv = 1.0 / static_cast<double>(trees_.size());
        for (auto& v : acc) v *= inv;
        return acc;
    }

    /// Regression: the predicted value. Classification: the argmax class id,
    /// ties broken toward the smaller id.
    double predict(const double* row) const {
        const auto vec = predict_vector(row);
        if (task_ == Task::regression) return vec[0];
        return static_cast<double>(argmax(vec));
    }

    std::vector<double> predict_many(const Matrix& rows) const {
        check_width(rows.cols());
        std::vector<double> out(rows.rows());
        for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = predict(rows.row(i));
        return out;
    }

    /// OOB prediction vector for a training row: mean of leaf values over
    /// exactly the trees in S_i.
    std::vector<double> predict_vector_oob(std::size_t row) const {
        if (row >= n_train()) throw std::out_of_range("training row out of range");
        const std::size_t width = value_width();
        std::vector<double> acc(width, 0.0);
        std::size_t used = 0;
        const double* x = nullptr;
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            if (!is_oob(row, t)) continue;
            if (!x) x = train_features_row(row);
            const double* value = trees_[t].leaf_value(trees_[t].route(x), width);
            for (std::size_t k = 0; k < width; ++k) acc[k] += value[k];
            ++used;
        }
        if (used == 0)
            throw std::runtime_error("training row " + std::to_string(row) +
                                     " is in-bag for every tree (never out-of-bag)");
        for (auto& v : acc) v /= static_cast<double>(used);
        return acc;
    }

    double predict_oob(std::size_t row) const {
        const auto vec = predict_vector_oob(row);
        if (task_ == Task::regression) return vec[0];
        return static_cast<double>(argmax(vec));
    }

    /// Training feature rows are retained so OOB paths can re-route them.
    const Matrix& train_features() const { return train_features_; }

    static std::size_t argmax(const std::vector<double>& v) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < v.size(); ++k)
            if (v[k] > v[best]) best = k;
        return best;
    }

private:
    friend Forest assemble_with_features(Forest, Matrix); // model IO hook

    const double* train_features_row(std::size_t i) const {
        if (train_features_.rows() != n_train())
            throw std::logic_error("forest lacks training features for OOB routing");
        return train_features_.row(i);
    }

    void check_width(std::size_t cols) const {
        if (cols != n_features_)
            throw std::invalid_argument("feature count mismatch: got " + std::to_string(cols) +
                                        ", forest was trained on " + std::to_string(n_features_));
    }

    Task task_ = Task::regression;
    int n_classes_ = 0;
    Hyperparams hp_;
    std::vector<Tree> trees_;
    std::vector<BagCounts> bags_;
    std::vector<double> train_targets_;
    Matrix train_features_;
    std::size_t n_features_ = 0;
};

/// from_parts does not carry feature rows; model IO re-attaches them.
inline Forest assemble_with_features(Forest f, Matrix train_features) {
    f.train_features_ = std::move(train_features);
    return f;
}

namespace detail {

/// Grows one CART tree on a bag. Split search scans candidate thresholds at
/// midpoints of adjacent distinct sorted values, exhaustively per feature;
/// ties between equally good splits resolve to the lowest feature index, then
/// the lowest threshold (features ascending, thresholds ascending, strictly
/// better score wins).
class TreeGrower {
public:
    TreeGrower(const Matrix& features, const std::vector<double>& targets, Task task,
               int n_classes, const Hyperparams& hp)
        : features_(features), targets_(targets), task_(task), n_classes_(n_classes), hp_(hp) {}

    Tree grow(const BagCounts& counts, Rng& rng) {
        samples_.clear();
        for (std::size_t j = 0; j < counts.size(); ++j)
            for (std::uint32_t c = 0; c < counts[j]; ++c)
                samples_.push_back(static_cast<std::int32_t>(j));

        Tree tree;
        struct Pending {
            std::int32_t parent; // -1 for root
            bool is_left;
            std::size_t begin, end;
            int depth;
        };
        std::vector<Pending> stack;
        stack.push_back({-1, false, 0, samples_.size(), 0});
        while (!stack.empty()) {
            const Pending job = stack.back();
            stack.pop_back();
            const auto node_index = static_cast<std::int32_t>(tree.nodes.size());
            tree.nodes.emplace_back();
            if (job.parent >= 0) {
                auto& parent = tree.nodes[static_cast<std::size_t>(job.parent)];
                (job.is_left ? parent.left : parent.right) = node_index;
            }

            Split split;
            if (!should_stop(job.begin, job.end, job.depth))
                split = best_split(job.begin, job.end, rng);
            if (!split.valid) {
                tree.nodes[static_cast<std::size_t>(node_index)].leaf_id = tree.n_leaves++;
                continue;
            }
            auto& node = tree.nodes[static_cast<std::size_t>(node_index)];
            node.feature = split.feature;
            node.threshold = split.threshold;
            const auto mid = std::stable_partition(
                samples_.begin() + static_cast<std::ptrdiff_t>(job.begin),
                samples_.begin() + static_cast<std::ptrdiff_t>(job.end),
                [&](std::int32_t s) {
                    return features_(static_cast<std::size_t>(s),
                                     static_cast<std::size_t>(split.feature)) <= split.threshold;
                });
            const auto split_at =
                static_cast<std::size_t>(std::distance(samples_.begin(), mid));
            // LIFO: push right first so the left subtree is laid out first.
            stack.push_back({node_index, false, split_at, job.end, job.depth + 1});
            stack.push_back({node_index, true, job.begin, split_at, job.depth + 1});
        }

        fill_leaf_values(tree, counts);
        return tree;
    }

private:
    struct Split {
        bool valid = false;
        std::int32_t feature = -1;
        double threshold = 0.0;
        double score = std::numeric_limits<double>::infinity(); // lower is better
    };

    bool should_stop(std::size_t begin, std::size_t end, int depth) const {
        const std::size_t n = end - begin;
        if (hp_.max_depth >= 0 && depth >= hp_.max_depth) return true;
        if (n < 2 * static_cast<std::size_t>(hp_.min_samples_leaf)) return true;
        const double first = targets_[static_cast<std::size_t>(samples_[begin])];
        for (std::size_t s = begin + 1; s < end; ++s)
            if (targets_[static_cast<std::size_t>(samples_[s])] != first) return false;
        return true; // pure node
    }

    Split best_split(std::size_t begin, std::size_t end, Rng& rng) {
        const auto P = static_cast<int>(features_.cols());
        const int mtry = hp_.max_features.resolve(P);
        feature_choice_.resize(static_cast<std::size_t>(P));
        std::iota(feature_choice_.begin(), feature_choice_.end(), 0);
        if (mtry < P) {
            for (int k = 0; k < mtry; ++k) {
                const auto pick =
                    k + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(P - k)));
                std::swap(feature_choice_[static_cast<std::size_t>(k)],
                          feature_choice_[static_cast<std::size_t>(pick)]);
            }
            feature_choice_.resize(static_cast<std::size_t>(mtry));
            std::sort(feature_choice_.begin(), feature_choice_.end());
        }

        Split best;
        for (const int f : feature_choice_) scan_feature(f, begin, end, best);
        return best;
    }

    void scan_feature(int f, std::size_t begin, std::size_t end, Split& best) {
        const std::size_t n = end - begin;
        sorted_.clear();
        sorted_.reserve(n);
        for (std::size_t s = begin; s < end; ++s) {
            const auto row = static_cast<std::size_t>(samples_[s]);
            sorted_.push_back({features_(row, static_cast<std::size_t>(f)), samples_[s]});
        }
        std::sort(sorted_.begin(), sorted_.end(),
                  [](const ValueRow& a, const ValueRow& b) { return a.value < b.value; });
        if (sorted_.front().value == sorted_.back().value) return; // constant feature

        const auto msl = static_cast<std::size_t>(hp_.min_samples_leaf);
        if (task_ == Task::regression) {
            double total_sum = 0.0, total_sq = 0.0;
            for (const auto& vr : sorted_) {
                const double y = targets_[static_cast<std::size_t>(vr.row)];
                total_sum += y;
                total_sq += y * y;
            }
            double left_sum = 0.0, left_sq = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                const double y = targets_[static_cast<std::size_t>(sorted_[k].row)];
                left_sum += y;
                left_sq += y * y;
                if (sorted_[k].value == sorted_[k + 1].value) continue;
                const std::size_t n_left = k + 1, n_right = n - n_left;
                if (n_left < msl || n_right < msl) continue;
                const double right_sum = total_sum - left_sum;
                const double right_sq = total_sq - left_sq;
                const double score =
                    (left_sq - left_sum * left_sum / static_cast<double>(n_left)) +
                    (right_sq - right_sum * right_sum / static_cast<double>(n_right));
                consider(f, sorted_[k].value, sorted_[k + 1].value, score, best);
            }
        } else {
            class_total_.assign(static_cast<std::size_t>(n_classes_), 0.0);
            for (const auto& vr : sorted_)
                class_total_[class_of(vr.row)] += 1.0;
            class_left_.assign(static_cast<std::size_t>(n_classes_), 0.0);
            for (std::size_t k = 0; k + 1 < n; ++k) {
                class_left_[class_of(sorted_[k].row)] += 1.0;
                if (sorted_[k].value == sorted_[k + 1].value) continue;
                const std::size_t n_left = k + 1, n_right = n - n_left;
                if (n_left < msl || n_right < msl) continue;
                double left_sq = 0.0, right_sq = 0.0;
                for (std::size_t c = 0; c < class_total_.size(); ++c) {
                    left_sq += class_left_[c] * class_left_[c];
                    const double r = class_total_[c] - class_left_[c];
                    right_sq += r * r;
                }
                // Weighted Gini, dropping the constant term: lower is better.
                const double score = -(left_sq / static_cast<double>(n_left) +
                                       right_sq / static_cast<double>(n_right));
                consider(f, sorted_[k].value, sorted_[k + 1].value, score, best);
            }
        }
    }

    void consider(int f, double lo, double hi, double score, Split& best) const {
        if (score >= best.score) return;
        double threshold = lo + (hi - lo) / 2.0;
        if (!(threshold < hi)) threshold = lo; // midpoint rounded up to hi
        best = {true, f, threshold, score};
    }

    std::size_t class_of(std::int32_t row) const {
        return static_cast<std::size_t>(targets_[static_cast<std::size_t>(row)]);
    }

    /// Canonical leaf values: route every bagged row through the finished
    /// tree and average with multiplicity, ascending train index.
    void fill_leaf_values(Tree& tree, const BagCounts& counts) const {
        const std::size_t width =
            task_ == Task::regression ? 1 : static_cast<std::size_t>(n_classes_);
        tree.leaf_values.assign(static_cast<std::size_t>(tree.n_leaves) * width, 0.0);
        std::vector<double> leaf_total(static_cast<std::size_t>(tree.n_leaves), 0.0);
        for (std::size_t j = 0; j < counts.size(); ++j) {
            if (counts[j] == 0) continue;
            const auto leaf = static_cast<std::size_t>(tree.route(features_.row(j)));
            const auto c = static_cast<double>(counts[j]);
            if (task_ == Task::regression)
                tree.leaf_values[leaf] += c * targets_[j];
            else
                tree.leaf_values[leaf * width + static_cast<std::size_t>(targets_[j])] += c;
            leaf_total[leaf] += c;
        }
        for (std::size_t l = 0; l < leaf_total.size(); ++l) {
            if (leaf_total[l] <= 0.0)
                throw std::logic_error("tree leaf received no bagged rows");
            for (std::size_t k = 0; k < width; ++k) tree.leaf_values[l * width + k] /= leaf_total[l];
        }
    }

    struct ValueRow {
        double value;
        std::int32_t row;
    };

    const Matrix& features_;
    const std::vector<double>& targets_;
    Task task_;
    int n_classes_;
    const Hyperparams& hp_;
    std::vector<std::int32_t> samples_;
    std::vector<int> feature_choice_;
    std::vector<ValueRow> sorted_;
    std::vector<double> class_total_, class_left_;
};

} // namespace detail

inline Forest Forest::fit(const Dataset& ds, const Hyperparams& hp, Task task) {
    const std::size_t n = ds.n_rows();
    if (n < 2) throw std::invalid_argument("training needs at least 2 rows");
    if (!ds.has_target()) throw std::invalid_argument("training data has no target");
    if (hp.n_estimators < 1) throw std::invalid_argument("n_estimators must be positive");
    if (hp.min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be positive");
    if (static_cast<std::size_t>(hp.min_samples_leaf) >= n)
        throw std::invalid_argument("min_samples_leaf must be smaller than the training size");
    for (const double v : ds.features.data())
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");

    int n_classes = 0;
    if (task == Task::classification) {
        double max_class = 0.0;
        for (const double y : ds.target) {
            if (!(y >= 0.0) || y != std::floor(y))
                throw std::invalid_argument("classification targets must be class ids 0..K-1");
            max_class = std::max(max_class, y);
        }
        n_classes = static_cast<int>(max_class) + 1;
        if (n_classes < 2) throw std::invalid_argument("classification needs at least 2 classes");
    } else {
        for (const double y : ds.target)
            if (!std::isfinite(y)) throw std::invalid_argument("non-finite target value");
    }

    Forest f;
    f.task_ = task;
    f.n_classes_ = n_classes;
    f.hp_ = hp;
    f.train_targets_ = ds.target;
    f.train_features_ = ds.features;
    f.n_features_ = ds.n_features();
    f.trees_.reserve(static_cast<std::size_t>(hp.n_estimators));
    f.bags_.reserve(static_cast<std::size_t>(hp.n_estimators));

    detail::TreeGrower grower(ds.features, ds.target, task, n_classes, hp);
    for (int t = 0; t < hp.n_estimators; ++t) {
        // Per-tree RNG stream: trees are independent given (seed, tree index).
        Rng rng(hp.seed, 0x10000u + static_cast<std::uint64_t>(t));
        BagCounts counts(n, hp.bootstrap ? 0u : 1u);
        if (hp.bootstrap)
            for (std::size_t d = 0; d < n; ++d) ++counts[rng.next_below(n)];
        f.trees_.push_back(grower.grow(counts, rng));
        f.bags_.push_back(std::move(counts));
    }
    return f;
}

} // namespace rfgap
