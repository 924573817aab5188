#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "rfgap/dataset.hpp"
#include "rfgap/forest.hpp"
#include "rfgap/version.hpp"

namespace rfgap {

/// Everything a scoring or explanation run needs: the trained ensemble plus
/// the column schema used to encode raw query tables.
struct Model {
    Forest forest;
    TableSchema schema;
};

namespace detail {

// Explicit little-endian encoding: model bytes are identical on any host.
class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t len = u32();
        const char* p = take(len);
        return {p, p + len};
    }
    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    const char* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated model file");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

inline void write_spec(ByteWriter& w, const ColumnSpec& spec) {
    w.str(spec.name);
    w.u8(spec.kind == ColumnKind::categorical ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(spec.categories.size()));
    for (const auto& c : spec.categories) w.str(c);
}

inline ColumnSpec read_spec(ByteReader& r) {
    ColumnSpec spec;
    spec.name = r.str();
    spec.kind = r.u8() ? ColumnKind::categorical : ColumnKind::numeric;
    const std::uint32_t n = r.u32();
    spec.categories.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) spec.categories.push_back(r.str());
    return spec;
}

} // namespace detail

inline constexpr char kModelMagic[8] = {'R', 'F', 'G', 'A', 'P', 'M', 'D', 'L'};

inline std::string serialize_model(const Model& model) {
    const Forest& f = model.forest;
    detail::ByteWriter w;
    for (const char c : kModelMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kModelFormatVersion);
    w.u8(f.task() == Task::classification ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(f.n_classes()));

    const Hyperparams& hp = f.hyperparams();
    w.i32(hp.n_estimators);
    w.i32(hp.max_depth);
    w.u8(static_cast<std::uint8_t>(hp.max_features.kind));
    w.f64(hp.max_features.fraction);
    w.i32(hp.min_samples_leaf);
    w.u64(hp.seed);
    w.u8(hp.bootstrap ? 1 : 0);

    w.u64(f.n_train());
    w.u64(f.n_features());
    for (const double y : f.train_targets()) w.f64(y);
    for (const double x : f.train_features().data()) w.f64(x);

    detail::write_spec(w, model.schema.target);
    w.str(model.schema.timestamp_column);
    w.u32(static_cast<std::uint32_t>(model.schema.columns.size()));
    for (const auto& spec : model.schema.columns) detail::write_spec(w, spec);

    w.u32(static_cast<std::uint32_t>(f.n_trees()));
    for (std::size_t t = 0; t < f.n_trees(); ++t) {
        const Tree& tree = f.tree(t);
        w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
        for (const TreeNode& n : tree.nodes) {
            w.i32(n.feature);
            w.f64(n.threshold);
            w.i32(n.left);
            w.i32(n.right);
            w.i32(n.leaf_id);
        }
        w.u32(static_cast<std::uint32_t>(tree.n_leaves));
        for (const double v : tree.leaf_values) w.f64(v);
        for (const std::uint32_t c : f.bag_counts(t)) w.u32(c);
    }
    return w.bytes();
}

inline Model deserialize_model(std::string bytes) {
    detail::ByteReader r(std::move(bytes));
    for (const char c : kModelMagic)
        if (r.u8() != static_cast<std::uint8_t>(c))
            throw std::runtime_error("not a model file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        throw std::runtime_error("unsupported model format version " + std::to_string(version));

    const Task task = r.u8() ? Task::classification : Task::regression;
    const int n_classes = static_cast<int>(r.u32());

    Hyperparams hp;
    hp.n_estimators = r.i32();
    hp.max_depth = r.i32();
    hp.max_features.kind = static_cast<MaxFeatures::Kind>(r.u8());
    hp.max_features.fraction = r.f64();
    hp.min_samples_leaf = r.i32();
    hp.seed = r.u64();
    hp.bootstrap = r.u8() != 0;

    const std::uint64_t n_train = r.u64();
    const std::uint64_t n_features = r.u64();
    std::vector<double> targets(n_train);
    for (auto& y : targets) y = r.f64();
    Matrix features(n_train, n_features);
    for (auto& x : features.data()) x = r.f64();

    TableSchema schema;
    schema.target = detail::read_spec(r);
    schema.timestamp_column = r.str();
    const std::uint32_t n_cols = r.u32();
    for (std::uint32_t c = 0; c < n_cols; ++c) schema.columns.push_back(detail::read_spec(r));
    if (schema.columns.size() != n_features)
        throw std::runtime_error("corrupt model: schema width mismatch");

    const std::uint32_t n_trees = r.u32();
    std::vector<Tree> trees;
    std::vector<BagCounts> bags;
    trees.reserve(n_trees);
    bags.reserve(n_trees);
    const std::size_t width = task == Task::regression ? 1 : static_cast<std::size_t>(n_classes);
    for (std::uint32_t t = 0; t < n_trees; ++t) {
        Tree tree;
        const std::uint32_t n_nodes = r.u32();
        tree.nodes.resize(n_nodes);
        for (auto& n : tree.nodes) {
            n.feature = r.i32();
            n.threshold = r.f64();
            n.left = r.i32();
            n.right = r.i32();
            n.leaf_id = r.i32();
        }
        tree.n_leaves = static_cast<std::int32_t>(r.u32());
        tree.leaf_values.resize(static_cast<std::size_t>(tree.n_leaves) * width);
        for (auto& v : tree.leaf_values) v = r.f64();
        BagCounts counts(n_train);
        for (auto& c : counts) c = r.u32();
        trees.push_back(std::move(tree));
        bags.push_back(std::move(counts));
    }
    if (!r.exhausted()) throw std::runtime_error("corrupt model: trailing bytes");

    Model model;
    model.schema = std::move(schema);
    model.forest =
        assemble_with_features(Forest::from_parts(task, n_classes, hp, std::move(trees),
                                                  std::move(bags), std::move(targets), n_features),
                               std::move(features));
    return model;
}

inline void save_model(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing model file: " + path);
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(std::move(bytes));
}

} // namespace rfgap
