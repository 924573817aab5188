#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rfgap {

enum class ColumnKind { numeric, categorical };

/// Per-column metadata. Categorical columns carry their training vocabulary;
/// the integer code of a category is its position in `categories`.
struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::vector<std::string> categories; // empty for numeric columns

    bool is_categorical() const { return kind == ColumnKind::categorical; }

    /// Code for a category label, or nullopt when unseen in training.
    std::optional<int> code_for(std::string_view label) const {
        for (std::size_t c = 0; c < categories.size(); ++c)
            if (categories[c] == label) return static_cast<int>(c);
        return std::nullopt;
    }
};

/// Column layout of a loaded table: feature columns in order, the target
/// column, and the (optional) timestamp column consumed as the row-order key.
struct TableSchema {
    std::vector<ColumnSpec> columns; // features only, length P
    ColumnSpec target;
    std::string timestamp_column;    // empty when absent

    std::size_t n_features() const { return columns.size(); }
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }
    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

/// Immutable once built; safe to share across threads.
struct Dataset {
    Matrix features;                    // N x P, categoricals as integer codes
    std::vector<double> target;         // empty for unlabeled query tables
    TableSchema schema;
    std::vector<double> row_order_key;  // empty when no timestamp column
    std::size_t dropped_rows = 0;       // rows rejected for missing/non-finite cells

    std::size_t n_rows() const { return features.rows(); }
    std::size_t n_features() const { return features.cols(); }
    bool has_target() const { return !target.empty(); }
};

/// Header + text cells, straight from a CSV parse.
struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

/// Strict full-string numeric parse. Accepts an optional leading '+'.
inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

inline std::optional<std::size_t> find_column(const std::vector<std::string>& header,
                                              std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    return std::nullopt;
}

} // namespace detail

/// Derive a training schema from raw rows: a column is categorical iff any
/// kept cell fails a numeric parse; categorical codes are assigned by first
/// appearance. Rows with missing (empty) cells do not contribute.
inline TableSchema infer_schema(const RawTable& raw, const std::string& target_column,
                                const std::string& timestamp_column = "") {
    if (!detail::find_column(raw.header, target_column))
        throw std::runtime_error("target column not found: " + target_column);
    if (!timestamp_column.empty() && !detail::find_column(raw.header, timestamp_column))
        throw std::runtime_error("timestamp column not found: " + timestamp_column);
    if (timestamp_column == target_column)
        throw std::runtime_error("timestamp column must differ from target column");

    const std::size_t n_cols = raw.header.size();
    std::vector<bool> numeric(n_cols, true);
    std::vector<bool> row_kept(raw.rows.size(), true);
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        if (raw.rows[r].size() != n_cols)
            throw std::runtime_error("row " + std::to_string(r) + " has " +
                                     std::to_string(raw.rows[r].size()) + " cells, expected " +
                                     std::to_string(n_cols));
        for (const auto& cell : raw.rows[r])
            if (detail::trim(cell).empty()) { row_kept[r] = false; break; }
    }
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        if (!row_kept[r]) continue;
        for (std::size_t c = 0; c < n_cols; ++c) {
            double v;
            if (numeric[c] && !detail::parse_double(raw.rows[r][c], v)) numeric[c] = false;
        }
    }

    TableSchema schema;
    schema.timestamp_column = timestamp_column;
    for (std::size_t c = 0; c < n_cols; ++c) {
        ColumnSpec spec;
        spec.name = raw.header[c];
        spec.kind = numeric[c] ? ColumnKind::numeric : ColumnKind::categorical;
        if (spec.name == target_column) { schema.target = std::move(spec); continue; }
        if (spec.name == timestamp_column) {
            if (!numeric[c])
                throw std::runtime_error("timestamp column must be numeric: " + timestamp_column);
            continue;
        }
        schema.columns.push_back(std::move(spec));
    }
    return schema;
}

/// Encode raw rows under an existing schema (the training one, per the
/// train-only-vocabulary rule). Vocabulary grows only when `build_vocabulary`
/// is set (the initial load); otherwise unseen categories map to the -1
/// sentinel. Rows with missing cells, unparseable numerics, or non-finite
/// values are dropped and counted. The target column may be absent, producing
/// an unlabeled Dataset for query/score workflows.
inline Dataset encode_with(const TableSchema& train_schema, const RawTable& raw,
                           bool build_vocabulary = false) {
    TableSchema schema = train_schema;
    const std::size_t P = schema.n_features();
    if (P == 0) throw std::runtime_error("schema has no feature columns");

    std::vector<std::size_t> feature_col(P);
    for (std::size_t j = 0; j < P; ++j) {
        auto idx = detail::find_column(raw.header, schema.columns[j].name);
        if (!idx)
            throw std::runtime_error("column mismatch: missing column '" +
                                     schema.columns[j].name + "'");
        feature_col[j] = *idx;
    }
    const auto target_idx = detail::find_column(raw.header, schema.target.name);
    // Query tables may omit the target and timestamp columns.
    std::optional<std::size_t> ts_idx;
    if (!schema.timestamp_column.empty())
        ts_idx = detail::find_column(raw.header, schema.timestamp_column);

    auto encode_cell = [&](ColumnSpec& spec, const std::string& cell,
                           double& out) -> bool { // false => row dropped
        const auto text = detail::trim(cell);
        if (text.empty()) return false;
        if (!spec.is_categorical()) {
            double v;
            if (!detail::parse_double(text, v) || !std::isfinite(v)) return false;
            out = v;
            return true;
        }
        if (auto code = spec.code_for(text)) {
            out = static_cast<double>(*code);
            return true;
        }
        if (build_vocabulary) {
            spec.categories.emplace_back(text);
            out = static_cast<double>(spec.categories.size() - 1);
            return true;
        }
        out = -1.0; // unseen at test time
        return true;
    };

    std::vector<double> flat;
    flat.reserve(raw.rows.size() * P);
    std::vector<double> target, key;
    std::size_t dropped = 0;

    for (const auto& cells : raw.rows) {
        if (cells.size() != raw.header.size())
            throw std::runtime_error("column mismatch: ragged row");
        std::vector<double> encoded(P);
        double y = 0.0, k = 0.0;
        bool ok = true;
        for (std::size_t j = 0; j < P && ok; ++j)
            ok = encode_cell(schema.columns[j], cells[feature_col[j]], encoded[j]);
        if (ok && target_idx) ok = encode_cell(schema.target, cells[*target_idx], y);
        if (ok && ts_idx) {
            double v;
            ok = detail::parse_double(cells[*ts_idx], v) && std::isfinite(v);
            k = v;
        }
        if (!ok) { ++dropped; continue; }
        flat.insert(flat.end(), encoded.begin(), encoded.end());
        if (target_idx) target.push_back(y);
        if (ts_idx) key.push_back(k);
    }

    const std::size_t n = flat.size() / P;
    if (n == 0) throw std::runtime_error("zero usable rows after load");

    Dataset ds;
    ds.features = Matrix(n, P);
    std::copy(flat.begin(), flat.end(), ds.features.data().begin());
    ds.target = std::move(target);
    ds.schema = std::move(schema);
    ds.row_order_key = std::move(key);
    ds.dropped_rows = dropped;

    // Non-monotone keys are accepted but trigger an ascending stable sort.
    if (!ds.row_order_key.empty() &&
        !std::is_sorted(ds.row_order_key.begin(), ds.row_order_key.end())) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return ds.row_order_key[a] < ds.row_order_key[b];
        });
        Matrix sorted(n, P);
        std::vector<double> sorted_target(ds.target.size());
        std::vector<double> sorted_key(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(ds.features.row(order[i]), ds.features.row(order[i]) + P, sorted.row(i));
            if (!ds.target.empty()) sorted_target[i] = ds.target[order[i]];
            sorted_key[i] = ds.row_order_key[order[i]];
        }
        ds.features = std::move(sorted);
        ds.target = std::move(sorted_target);
        ds.row_order_key = std::move(sorted_key);
    }
    return ds;
}

/// Render a Dataset back to text cells (categorical codes become labels).
/// In-vocabulary codes only; the -1 sentinel renders as an empty cell.
inline RawTable decode_to_text(const Dataset& ds) {
    RawTable raw;
    for (const auto& col : ds.schema.columns) raw.header.push_back(col.name);
    if (ds.has_target()) raw.header.push_back(ds.schema.target.name);
    if (!ds.row_order_key.empty()) raw.header.push_back(ds.schema.timestamp_column);

    auto format = [](double v) {
        char buf[32];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, ptr);
    };
    auto render = [&](const ColumnSpec& spec, double v) -> std::string {
        if (!spec.is_categorical()) return format(v);
        const auto code = static_cast<long>(v);
        if (code < 0 || static_cast<std::size_t>(code) >= spec.categories.size()) return "";
        return spec.categories[static_cast<std::size_t>(code)];
    };

    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        std::vector<std::string> cells;
        cells.reserve(raw.header.size());
        for (std::size_t j = 0; j < ds.n_features(); ++j)
            cells.push_back(render(ds.schema.columns[j], ds.features(i, j)));
        if (ds.has_target()) cells.push_back(render(ds.schema.target, ds.target[i]));
        if (!ds.row_order_key.empty()) cells.push_back(format(ds.row_order_key[i]));
        raw.rows.push_back(std::move(cells));
    }
    return raw;
}

/// Chronological split: first floor(N * train_fraction) rows train, rest test.
/// Rows are taken in stored order (already sorted when a key is present).
inline std::pair<Dataset, Dataset> time_split(const Dataset& ds, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("train_fraction must lie in (0, 1)");
    const std::size_t n = ds.n_rows();
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * train_fraction));
    if (n_train == 0 || n_train == n)
        throw std::runtime_error("time_split would produce an empty split");

    auto slice = [&](std::size_t begin, std::size_t end) {
        Dataset out;
        out.schema = ds.schema;
        out.features = Matrix(end - begin, ds.n_features());
        for (std::size_t i = begin; i < end; ++i)
            std::copy(ds.features.row(i), ds.features.row(i) + ds.n_features(),
                      out.features.row(i - begin));
        if (ds.has_target())
            out.target.assign(ds.target.begin() + static_cast<std::ptrdiff_t>(begin),
                              ds.target.begin() + static_cast<std::ptrdiff_t>(end));
        if (!ds.row_order_key.empty())
            out.row_order_key.assign(
                ds.row_order_key.begin() + static_cast<std::ptrdiff_t>(begin),
                ds.row_order_key.begin() + static_cast<std::ptrdiff_t>(end));
        return out;
    };
    return {slice(0, n_train), slice(n_train, n)};
}

} // namespace rfgap
