#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rfgap/csv.hpp"
#include "rfgap/dataset.hpp"

using namespace rfgap;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path.string();
}

} // namespace

TEST_CASE("load_csv parses an all-numeric file") {
    const auto path = write_temp("ds_numeric.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
    const Dataset ds = load_csv(path, "y");
    CHECK(ds.n_rows() == 3);
    CHECK(ds.n_features() == 2);
    CHECK(ds.schema.columns[0].kind == ColumnKind::numeric);
    CHECK(ds.schema.columns[1].kind == ColumnKind::numeric);
    CHECK(ds.features(0, 0) == 1.0);
    CHECK(ds.features(2, 1) == 8.0);
    CHECK(ds.target == std::vector<double>{3.0, 6.0, 9.0});
    CHECK(ds.dropped_rows == 0);
}

TEST_CASE("categorical codes follow first appearance in the file") {
    const auto path =
        write_temp("ds_sector.csv", "sector,y\nIG,1\nHY,2\nIG,3\nHY,4\n");
    const Dataset ds = load_csv(path, "y");
    const ColumnSpec& sector = ds.schema.columns[0];
    REQUIRE(sector.kind == ColumnKind::categorical);
    REQUIRE(sector.categories.size() == 2);
    CHECK(sector.categories[0] == "IG");
    CHECK(sector.categories[1] == "HY");
    // Re-read the file and confirm the code assignment order row by row.
    const RawTable raw = read_csv_file(path);
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const int expected = raw.rows[r][0] == "IG" ? 0 : 1;
        CHECK(ds.features(r, 0) == static_cast<double>(expected));
    }
}

TEST_CASE("rows with a missing cell are dropped and counted") {
    const auto path = write_temp("ds_missing.csv", "a,b,y\n1,2,3\n4,,6\n7,8,9\n");
    const Dataset ds = load_csv(path, "y");
    CHECK(ds.n_rows() == 2);
    CHECK(ds.dropped_rows == 1);
    CHECK(ds.target == std::vector<double>{3.0, 9.0});
}

TEST_CASE("non-finite numeric cells also reject the row") {
    const auto path = write_temp("ds_nan.csv", "a,y\nnan,1\n2,3\n");
    const Dataset ds = load_csv(path, "y");
    CHECK(ds.schema.columns[0].kind == ColumnKind::numeric); // "nan" parses
    CHECK(ds.n_rows() == 1);
    CHECK(ds.dropped_rows == 1);
}

TEST_CASE("load errors: missing file, missing target, zero usable rows") {
    CHECK_THROWS_WITH_AS(load_csv("/nonexistent/g.csv", "y"),
                         doctest::Contains("cannot open"), std::runtime_error);
    const auto path = write_temp("ds_no_target.csv", "a,b\n1,2\n");
    CHECK_THROWS_WITH_AS(load_csv(path, "y"), doctest::Contains("target column"),
                         std::runtime_error);
    const auto empty = write_temp("ds_empty.csv", "a,y\n,1\n2,\n");
    CHECK_THROWS_WITH_AS(load_csv(empty, "y"), doctest::Contains("zero usable rows"),
                         std::runtime_error);
}

TEST_CASE("a non-monotone timestamp column is accepted and triggers a sort") {
    const auto path =
        write_temp("ds_ts.csv", "a,t,y\n1,30,10\n2,10,20\n3,20,30\n");
    const Dataset ds = load_csv(path, "y", "t");
    CHECK(ds.row_order_key == std::vector<double>{10.0, 20.0, 30.0});
    CHECK(ds.features(0, 0) == 2.0);
    CHECK(ds.features(1, 0) == 3.0);
    CHECK(ds.features(2, 0) == 1.0);
    CHECK(ds.target == std::vector<double>{20.0, 30.0, 10.0});
    CHECK(ds.n_features() == 1); // timestamp is the order key, not a feature
}

TEST_CASE("encode_with maps categories through the training vocabulary") {
    const auto train_path =
        write_temp("ds_enc_train.csv", "sector,x,y\nIG,1,1\nHY,2,2\n");
    const Dataset train = load_csv(train_path, "y");

    RawTable raw;
    raw.header = {"sector", "x", "y"};
    raw.rows = {{"IG", "5", "9"}, {"EM", "6", "9"}, {"HY", "7", "9"}};
    const Dataset test = encode_with(train.schema, raw);
    CHECK(test.features(0, 0) == 0.0);  // IG -> 0
    CHECK(test.features(1, 0) == -1.0); // EM unseen -> sentinel
    CHECK(test.features(2, 0) == 1.0);  // HY -> 1
    CHECK(test.features(0, 1) == 5.0);  // numeric columns pass through
    CHECK(test.target == std::vector<double>{9.0, 9.0, 9.0});
}

TEST_CASE("encode_with rejects a table missing a schema column") {
    const auto train_path = write_temp("ds_enc_train2.csv", "a,b,y\n1,2,3\n4,5,6\n");
    const Dataset train = load_csv(train_path, "y");
    RawTable raw;
    raw.header = {"a", "y"};
    raw.rows = {{"1", "2"}};
    CHECK_THROWS_WITH_AS(encode_with(train.schema, raw), doctest::Contains("column mismatch"),
                         std::runtime_error);
}

TEST_CASE("encode_with allows unlabeled query tables") {
    const auto train_path = write_temp("ds_enc_train3.csv", "a,y\n1,2\n3,4\n");
    const Dataset train = load_csv(train_path, "y");
    RawTable raw;
    raw.header = {"a"};
    raw.rows = {{"10"}, {"11"}};
    const Dataset queries = encode_with(train.schema, raw);
    CHECK(queries.n_rows() == 2);
    CHECK_FALSE(queries.has_target());
}

TEST_CASE("round-trip: decode to text and re-encode reproduces the codes") {
    const auto path = write_temp("ds_roundtrip.csv",
                                 "sector,x,y\nIG,1.5,1\nHY,2.5,2\nIG,3.5,3\nEMG,4.5,4\n");
    const Dataset ds = load_csv(path, "y");
    const Dataset again = encode_with(ds.schema, decode_to_text(ds));
    CHECK(again.features == ds.features);
    CHECK(again.target == ds.target);
}

TEST_CASE("time_split floors the boundary and keeps order") {
    Dataset ds;
    ds.features = Matrix(10, 1);
    for (std::size_t i = 0; i < 10; ++i) ds.features(i, 0) = static_cast<double>(i);
    ds.target.resize(10);
    for (std::size_t i = 0; i < 10; ++i) ds.target[i] = static_cast<double>(i);
    ds.schema.columns.push_back({"a", ColumnKind::numeric, {}});
    ds.schema.target.name = "y";

    SUBCASE("fraction 0.75 gives 7 and 3 rows") {
        const auto [train, test] = time_split(ds, 0.75);
        CHECK(train.n_rows() == 7);
        CHECK(test.n_rows() == 3);
        CHECK(train.features(6, 0) == 6.0);
        CHECK(test.features(0, 0) == 7.0);
    }
    SUBCASE("fraction 0.999 gives 9 and 1") {
        const auto [train, test] = time_split(ds, 0.999);
        CHECK(train.n_rows() == 9);
        CHECK(test.n_rows() == 1);
    }
    SUBCASE("a fraction yielding an empty train errors") {
        CHECK_THROWS_AS(time_split(ds, 0.05), std::runtime_error);
    }
    SUBCASE("split partitions the rows exactly") {
        const auto [train, test] = time_split(ds, 0.4);
        REQUIRE(train.n_rows() + test.n_rows() == ds.n_rows());
        for (std::size_t i = 0; i < train.n_rows(); ++i)
            CHECK(train.features(i, 0) == ds.features(i, 0));
        for (std::size_t i = 0; i < test.n_rows(); ++i)
            CHECK(test.features(i, 0) == ds.features(train.n_rows() + i, 0));
    }
}
