// Dataset invariants, CSV ingestion, and the standardize/unstandardize pair.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "civet/dataset.hpp"
#include "civet/errors.hpp"

using namespace civet;

namespace {

Dataset small_dataset(int n = 8, int m = 2, int dx = 2, unsigned seed = 42) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    std::bernoulli_distribution bd(0.7);
    Dataset ds;
    ds.y.resize(n);
    ds.delta.resize(n);
    ds.a.resize(n);
    ds.z.resize(n, m);
    ds.x.resize(n, dx);
    for (int i = 0; i < n; ++i) {
        ds.y[i] = nd(gen);
        ds.delta[i] = bd(gen) ? 1.0 : 0.0;
        ds.a[i] = nd(gen);
        for (int j = 0; j < m; ++j) ds.z(i, j) = nd(gen);
        for (int j = 0; j < dx; ++j) ds.x(i, j) = nd(gen);
    }
    return ds;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("validate accepts a well-formed dataset") {
    Dataset ds = small_dataset();
    CHECK_NOTHROW(ds.validate());
    CHECK(ds.n() == 8);
    CHECK(ds.m() == 2);
    CHECK(ds.dx() == 2);
}

TEST_CASE("validate rejects invariant violations") {
    SUBCASE("mismatched row counts") {
        Dataset ds = small_dataset();
        ds.a.conservativeResize(ds.n() - 1);
        CHECK_THROWS_AS(ds.validate(), Error);
    }
    SUBCASE("delta outside {0,1}") {
        Dataset ds = small_dataset();
        ds.delta[3] = 0.5;
        CHECK_THROWS_AS(ds.validate(), Error);
    }
    SUBCASE("n too small") {
        Dataset ds = small_dataset(1);
        CHECK_THROWS_AS(ds.validate(), Error);
    }
    SUBCASE("non-finite entry") {
        Dataset ds = small_dataset();
        ds.z(2, 1) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(ds.validate(), Error);
    }
    SUBCASE("error kind is data") {
        Dataset ds = small_dataset();
        ds.delta[0] = 2.0;
        try {
            ds.validate();
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::data);
        }
    }
}

TEST_CASE("fully_observed reflects delta") {
    Dataset ds = small_dataset();
    ds.delta.setOnes();
    CHECK(ds.fully_observed());
    ds.delta[5] = 0.0;
    CHECK_FALSE(ds.fully_observed());
}

TEST_CASE("csv round trip is bit identical") {
    Dataset ds = small_dataset(23, 3, 2, 7);
    const std::string path = temp_path("civet_test_roundtrip.csv");
    write_csv(ds, path);

    CsvSchema schema;
    schema.y = "y";
    schema.delta = "delta";
    schema.a = "a";
    schema.z = {"z1", "z2", "z3"};
    schema.x = {"x1", "x2"};
    Dataset back = load_csv(path, schema);

    CHECK(back.n() == ds.n());
    CHECK((back.y.array() == ds.y.array()).all());
    CHECK((back.delta.array() == ds.delta.array()).all());
    CHECK((back.a.array() == ds.a.array()).all());
    CHECK((back.z.array() == ds.z.array()).all());
    CHECK((back.x.array() == ds.x.array()).all());

    // Two loads of the same file are bit-identical to each other.
    Dataset again = load_csv(path, schema);
    CHECK((again.y.array() == back.y.array()).all());
    CHECK((again.z.array() == back.z.array()).all());
    std::remove(path.c_str());
}

TEST_CASE("schema order overrides file order") {
    Dataset ds = small_dataset(12, 2, 1, 9);
    const std::string path = temp_path("civet_test_order.csv");
    write_csv(ds, path);

    CsvSchema swapped;
    swapped.y = "y";
    swapped.delta = "delta";
    swapped.a = "a";
    swapped.z = {"z2", "z1"};
    swapped.x = {"x1"};
    Dataset back = load_csv(path, swapped);
    CHECK((back.z.col(0).array() == ds.z.col(1).array()).all());
    CHECK((back.z.col(1).array() == ds.z.col(0).array()).all());
    std::remove(path.c_str());
}

TEST_CASE("csv errors name the offender") {
    const std::string path = temp_path("civet_test_bad.csv");
    {
        std::ofstream out(path);
        out << "y,delta,a,z1\n";
        out << "1.0,1,0.5,0.25\n";
        out << "2.0,0,oops,0.5\n";
        out << "3.0,1,0.75,1.0\n";
    }
    CsvSchema schema;
    schema.y = "y";
    schema.delta = "delta";
    schema.a = "a";
    schema.z = {"z1"};

    SUBCASE("malformed cell names row and column") {
        try {
            load_csv(path, schema);
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::data);
            const std::string msg = e.what();
            CHECK(msg.find("oops") != std::string::npos);
            CHECK(msg.find('a') != std::string::npos);
        }
    }
    SUBCASE("missing schema column is a usage error") {
        schema.z = {"z9"};
        try {
            load_csv(path, schema);
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::usage);
        }
    }
    SUBCASE("missing file is a usage error") {
        try {
            load_csv(temp_path("civet_does_not_exist.csv"), schema);
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::usage);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("standardize centers and scales with population spreads") {
    Dataset ds = small_dataset(200, 3, 2, 3);
    auto [std_ds, rec] = standardize(ds);

    CHECK(std_ds.a.mean() == doctest::Approx(0.0).epsilon(0).scale(1e-12));
    CHECK(std_ds.a.array().square().mean() == doctest::Approx(1.0).epsilon(1e-12));
    for (int j = 0; j < 3; ++j) {
        CHECK(std_ds.z.col(j).mean() == doctest::Approx(0.0).epsilon(0).scale(1e-12));
        CHECK(std_ds.z.col(j).array().square().mean() == doctest::Approx(1.0).epsilon(1e-12));
    }
    // y and delta are untouched.
    CHECK((std_ds.y.array() == ds.y.array()).all());
    CHECK((std_ds.delta.array() == ds.delta.array()).all());

    Dataset back = unstandardize(std_ds, rec);
    CHECK((back.a - ds.a).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.z - ds.z).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.x - ds.x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("standardize rejects constant columns by name") {
    Dataset ds = small_dataset();
    ds.z.col(1).setConstant(3.0);
    try {
        standardize(ds);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("z2") != std::string::npos);
    }
}
