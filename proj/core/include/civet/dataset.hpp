// dataset.hpp: canonical sample representation, CSV ingestion, and
// standardization.
//
// A Dataset holds one right-censored sample: y is the observed outcome on the
// log-time scale (min of event and censoring time), delta the event indicator
// (1 = event observed, 0 = censored), a the exposure, z the n x m candidate
// instrument matrix, and x the n x d_x baseline covariates. Everything
// downstream (kernel weights, residual regressions, moment construction)
// assumes a, z, x have been standardized; ScalingRecord keeps enough
// information to undo that map exactly.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "civet/errors.hpp"

namespace civet {

struct Dataset {
    Eigen::VectorXd y;      // observed log time
    Eigen::VectorXd delta;  // event indicator, each entry exactly 0.0 or 1.0
    Eigen::VectorXd a;      // exposure
    Eigen::MatrixXd z;      // instruments, n x m
    Eigen::MatrixXd x;      // covariates, n x d_x (d_x may be 0)

    Eigen::Index n() const { return y.size(); }
    Eigen::Index m() const { return z.cols(); }
    Eigen::Index dx() const { return x.cols(); }

    bool fully_observed() const { return delta.minCoeff() == 1.0; }

    // Throws data_error on any invariant violation: mismatched row counts,
    // n < 2, m < 1, delta outside {0,1}, or non-finite entries.
    void validate() const;
};

// Per-column centers and spreads for a, z, x. Spreads are the population
// (divide-by-n) standard deviations and are strictly positive; constant
// columns are rejected before a record is ever produced.
struct ScalingRecord {
    double a_center = 0.0;
    double a_spread = 1.0;
    Eigen::VectorXd z_center, z_spread;
    Eigen::VectorXd x_center, x_spread;
};

// Column-role map for CSV ingestion. Column order of z and x in the loaded
// Dataset follows the order given here, not the file order.
struct CsvSchema {
    std::string y;
    std::string delta;
    std::string a;
    std::vector<std::string> z;
    std::vector<std::string> x;
};

// Reads a comma-delimited UTF-8 file with a mandatory header row. Cells must
// parse as decimal or scientific floating point; any missing or malformed
// cell is an error naming the row and column. Deterministic: two loads of
// the same file produce bit-identical Datasets.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

// Writes a Dataset back out with columns y,delta,a,z1..zm,x1..xdx. Used by
// the simulate command and by tests that exercise the CSV round trip.
void write_csv(const Dataset& ds, const std::string& path);

// Centers and scales a, each z column, and each x column to mean 0 and
// population standard deviation 1. y and delta are untouched. Throws on
// constant columns, naming the offender.
std::pair<Dataset, ScalingRecord> standardize(const Dataset& ds);

// Exact inverse of standardize, used by the round-trip tests.
Dataset unstandardize(const Dataset& ds, const ScalingRecord& rec);

} // namespace civet
