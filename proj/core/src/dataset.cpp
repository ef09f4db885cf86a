#include "civet/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>

namespace civet {

void Dataset::validate() const {
    const Eigen::Index rows = y.size();
    if (rows < 2) throw data_error("n >= 2 required");
    if (delta.size() != rows || a.size() != rows || z.rows() != rows ||
        (x.cols() > 0 && x.rows() != rows)) {
        throw data_error(fmt::format(
            "row count mismatch: y={}, delta={}, a={}, z={}, x={}", rows,
            delta.size(), a.size(), z.rows(), x.rows()));
    }
    if (z.cols() < 1) throw data_error("at least one instrument column required");
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (delta[i] != 0.0 && delta[i] != 1.0) {
            throw data_error(fmt::format("delta must be 0 or 1, got {} in row {}", delta[i], i + 1));
        }
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!y.unaryExpr([&](double v) { return finite(v) ? 0.0 : 1.0; }).isZero() ||
        !a.unaryExpr([&](double v) { return finite(v) ? 0.0 : 1.0; }).isZero() ||
        !z.unaryExpr([&](double v) { return finite(v) ? 0.0 : 1.0; }).isZero() ||
        (x.size() > 0 && !x.unaryExpr([&](double v) { return finite(v) ? 0.0 : 1.0; }).isZero())) {
        throw data_error("non-finite entry in dataset");
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
    // Trim surrounding spaces; everything else must be one floating literal.
    std::size_t b = cell.find_first_not_of(" \t");
    std::size_t e = cell.find_last_not_of(" \t");
    if (b == std::string::npos) {
        throw data_error(fmt::format("missing value at row {}, column '{}'", row, col));
    }
    const char* first = cell.data() + b;
    const char* last = cell.data() + e + 1;
    double v = 0.0;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        throw data_error(fmt::format("cannot parse '{}' at row {}, column '{}'", cell, row, col));
    }
    return v;
}

} // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw usage_error(fmt::format("cannot open '{}'", path));

    std::string line;
    if (!std::getline(in, line)) throw data_error(fmt::format("'{}' is empty", path));
    const std::vector<std::string> header = split_csv_line(line);

    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < header.size(); ++i) pos[header[i]] = i;

    auto col_index = [&](const std::string& name) -> std::size_t {
        auto it = pos.find(name);
        if (it == pos.end()) {
            throw usage_error(fmt::format("schema column '{}' not found in '{}'", name, path));
        }
        return it->second;
    };

    const std::size_t iy = col_index(schema.y);
    const std::size_t id = col_index(schema.delta);
    const std::size_t ia = col_index(schema.a);
    if (schema.z.empty()) throw usage_error("schema must name at least one instrument column");
    std::vector<std::size_t> iz, ix;
    for (const auto& name : schema.z) iz.push_back(col_index(name));
    for (const auto& name : schema.x) ix.push_back(col_index(name));

    std::vector<double> vy, vd, va;
    std::vector<std::vector<double>> vz(iz.size()), vx(ix.size());
    std::size_t row = 1; // header was row 1
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw data_error(fmt::format("row {} has {} cells, header has {}", row,
                                         cells.size(), header.size()));
        }
        vy.push_back(parse_cell(cells[iy], row, schema.y));
        const double d = parse_cell(cells[id], row, schema.delta);
        if (d != 0.0 && d != 1.0) {
            throw data_error(fmt::format("delta must be 0 or 1, got {} in row {}", d, row));
        }
        vd.push_back(d);
        va.push_back(parse_cell(cells[ia], row, schema.a));
        for (std::size_t j = 0; j < iz.size(); ++j) {
            vz[j].push_back(parse_cell(cells[iz[j]], row, schema.z[j]));
        }
        for (std::size_t j = 0; j < ix.size(); ++j) {
            vx[j].push_back(parse_cell(cells[ix[j]], row, schema.x[j]));
        }
    }

    const Eigen::Index n = static_cast<Eigen::Index>(vy.size());
    if (n < 2) throw data_error("n >= 2 required");

    Dataset ds;
    ds.y = Eigen::Map<Eigen::VectorXd>(vy.data(), n);
    ds.delta = Eigen::Map<Eigen::VectorXd>(vd.data(), n);
    ds.a = Eigen::Map<Eigen::VectorXd>(va.data(), n);
    ds.z.resize(n, static_cast<Eigen::Index>(iz.size()));
    for (std::size_t j = 0; j < iz.size(); ++j) {
        ds.z.col(static_cast<Eigen::Index>(j)) = Eigen::Map<Eigen::VectorXd>(vz[j].data(), n);
    }
    ds.x.resize(n, static_cast<Eigen::Index>(ix.size()));
    for (std::size_t j = 0; j < ix.size(); ++j) {
        ds.x.col(static_cast<Eigen::Index>(j)) = Eigen::Map<Eigen::VectorXd>(vx[j].data(), n);
    }
    ds.validate();
    return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw usage_error(fmt::format("cannot write '{}'", path));
    out << "y,delta,a";
    for (Eigen::Index j = 0; j < ds.m(); ++j) out << fmt::format(",z{}", j + 1);
    for (Eigen::Index j = 0; j < ds.dx(); ++j) out << fmt::format(",x{}", j + 1);
    out << '\n';
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        out << fmt::format("{:.17g},{:.17g},{:.17g}", ds.y[i], ds.delta[i], ds.a[i]);
        for (Eigen::Index j = 0; j < ds.m(); ++j) out << fmt::format(",{:.17g}", ds.z(i, j));
        for (Eigen::Index j = 0; j < ds.dx(); ++j) out << fmt::format(",{:.17g}", ds.x(i, j));
        out << '\n';
    }
    if (!out) throw usage_error(fmt::format("write to '{}' failed", path));
}

namespace {

// Population-divisor moments; the spread check rejects constant columns.
std::pair<double, double> center_spread(const Eigen::Ref<const Eigen::VectorXd>& col,
                                        const std::string& name) {
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) throw data_error(fmt::format("column '{}' is constant", name));
    return {mean, sd};
}

} // namespace

std::pair<Dataset, ScalingRecord> standardize(const Dataset& ds) {
    ds.validate();
    Dataset out = ds;
    ScalingRecord rec;

    auto [ac, as] = center_spread(ds.a, "a");
    rec.a_center = ac;
    rec.a_spread = as;
    out.a = (ds.a.array() - ac) / as;

    rec.z_center.resize(ds.m());
    rec.z_spread.resize(ds.m());
    for (Eigen::Index j = 0; j < ds.m(); ++j) {
        auto [c, s] = center_spread(ds.z.col(j), fmt::format("z{}", j + 1));
        rec.z_center[j] = c;
        rec.z_spread[j] = s;
        out.z.col(j) = (ds.z.col(j).array() - c) / s;
    }

    rec.x_center.resize(ds.dx());
    rec.x_spread.resize(ds.dx());
    for (Eigen::Index j = 0; j < ds.dx(); ++j) {
        auto [c, s] = center_spread(ds.x.col(j), fmt::format("x{}", j + 1));
        rec.x_center[j] = c;
        rec.x_spread[j] = s;
        out.x.col(j) = (ds.x.col(j).array() - c) / s;
    }
    return {out, rec};
}

Dataset unstandardize(const Dataset& ds, const ScalingRecord& rec) {
    Dataset out = ds;
    out.a = ds.a.array() * rec.a_spread + rec.a_center;
    for (Eigen::Index j = 0; j < ds.m(); ++j) {
        out.z.col(j) = ds.z.col(j).array() * rec.z_spread[j] + rec.z_center[j];
    }
    for (Eigen::Index j = 0; j < ds.dx(); ++j) {
        out.x.col(j) = ds.x.col(j).array() * rec.x_spread[j] + rec.x_center[j];
    }
    return out;
}

} // namespace civet
