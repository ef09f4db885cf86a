#include "civet/kernels.hpp"

#include <cmath>

#include <fmt/format.h>

namespace civet {

void KernelSpec::validate() const {
    if (order != 2 && order != 4 && order != 6 && order != 8) {
        throw usage_error(fmt::format("kernel order {} unsupported; available: 2, 4, 6, 8", order));
    }
    if (!(bandwidth > 0.0)) throw usage_error("kernel bandwidth must be positive");
    if (dim < 1) throw usage_error("kernel dimension must be at least 1");
}

namespace {

const double kPi = 3.14159265358979323846;

// Cauchy-family kernels: rational functions P_r(u)/(1+u^2)^r with even
// polynomials P_r. The constants are exact, derived from the closed forms of
// the integrals int u^{2p}(1+u^2)^{-r} du so that each kernel integrates to
// one and every even moment below the order vanishes; the quadrature tests
// verify both properties numerically. Orders 4 and up dip negative away from
// the origin, which is what the weight-level positive truncation handles.
inline double k2(double u) {
    const double d = 1.0 + u * u;
    return 2.0 / (kPi * d * d);
}

inline double k4(double u) {
    const double u2 = u * u;
    const double d = 1.0 + u2;
    const double d2 = d * d;
    return 4.0 * (1.0 - u2) / (kPi * d2 * d2);
}

inline double k6(double u) {
    const double u2 = u * u;
    const double d = 1.0 + u2;
    const double d3 = d * d * d;
    return 2.0 * (3.0 * u2 * u2 - 10.0 * u2 + 3.0) / (kPi * d3 * d3);
}

inline double k8(double u) {
    const double u2 = u * u;
    const double u4 = u2 * u2;
    const double d = 1.0 + u2;
    const double d4 = d * d * d * d;
    return 8.0 * (1.0 - 7.0 * u2 + 7.0 * u4 - u4 * u2) / (kPi * d4 * d4);
}

// Vectorized kernel over an array of scaled distances; `out` is overwritten.
// The order switch sits outside the element loop on purpose: weight-matrix
// construction is the hot path of every censored fit.
void kernel_array(int order, const Eigen::ArrayXd& u, Eigen::ArrayXd& out) {
    switch (order) {
        case 2: {
            const Eigen::ArrayXd d = 1.0 + u.square();
            out = 2.0 / (kPi * d.square());
            return;
        }
        case 4: {
            const Eigen::ArrayXd u2 = u.square();
            const Eigen::ArrayXd d2 = (1.0 + u2).square();
            out = 4.0 * (1.0 - u2) / (kPi * d2.square());
            return;
        }
        case 6: {
            const Eigen::ArrayXd u2 = u.square();
            const Eigen::ArrayXd d3 = (1.0 + u2).cube();
            out = 2.0 * (3.0 * u2.square() - 10.0 * u2 + 3.0) / (kPi * d3.square());
            return;
        }
        case 8: {
            const Eigen::ArrayXd u2 = u.square();
            const Eigen::ArrayXd u4 = u2.square();
            const Eigen::ArrayXd d4 = (1.0 + u2).square().square();
            out = 8.0 * (1.0 - 7.0 * u2 + 7.0 * u4 - u4 * u2) / (kPi * d4.square());
            return;
        }
        default:
            throw usage_error(fmt::format("kernel order {} unsupported; available: 2, 4, 6, 8", order));
    }
}

} // namespace

double kernel_eval(int order, double u) {
    switch (order) {
        case 2: return k2(u);
        case 4: return k4(u);
        case 6: return k6(u);
        case 8: return k8(u);
        default:
            throw usage_error(fmt::format("kernel order {} unsupported; available: 2, 4, 6, 8", order));
    }
}

int kernel_order_for(int q) {
    if (q < 1) throw usage_error("conditioning dimension must be at least 1");
    int required = (3 * q) / 2 + 1;
    if (required > 8) required = 8;
    // round up to the next even member of the family
    return (required % 2 == 0) ? required : required + 1;
}

double default_bandwidth(Eigen::Index n, int q, double c) {
    if (n < 2) throw usage_error("bandwidth rule needs n >= 2");
    if (q < 1) throw usage_error("conditioning dimension must be at least 1");
    if (!(c > 0.0)) throw usage_error("bandwidth constant must be positive");
    return c * std::pow(static_cast<double>(n), -1.0 / (3.0 * q + 2.0));
}

Eigen::VectorXd nw_weights(const Eigen::MatrixXd& points, const Eigen::VectorXd& query,
                           const KernelSpec& spec) {
    spec.validate();
    if (points.cols() != query.size()) {
        throw usage_error(fmt::format("query dimension {} does not match points dimension {}",
                                      query.size(), points.cols()));
    }
    const Eigen::Index n = points.rows();
    const double inv_h = 1.0 / spec.bandwidth;
    Eigen::ArrayXd acc = Eigen::ArrayXd::Ones(n);
    Eigen::ArrayXd scaled(n), part(n);
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
        scaled = (query[k] - points.col(k).array()) * inv_h;
        kernel_array(spec.order, scaled, part);
        acc *= part;
    }
    acc = acc.max(0.0); // positive truncation (orders >= 4 go negative)
    const double sum = acc.sum();
    if (!(sum > 0.0)) {
        throw numeric_error(
            "degenerate neighborhood: no positive kernel weight at the query point; "
            "enlarge the bandwidth");
    }
    return (acc / sum).matrix();
}

Eigen::MatrixXd nw_weight_matrix(const Eigen::MatrixXd& points, const KernelSpec& spec) {
    spec.validate();
    const Eigen::Index n = points.rows();
    const double inv_h = 1.0 / spec.bandwidth;

    // Raw product kernel, built one column at a time (the raw matrix is
    // symmetric; the row-wise renormalization below is what breaks the
    // symmetry). Column j holds K((o_i - o_j)/h) over i.
    Eigen::MatrixXd B(n, n);
    Eigen::ArrayXd acc(n), scaled(n), part(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        acc.setOnes();
        for (Eigen::Index k = 0; k < points.cols(); ++k) {
            scaled = (points.col(k).array() - points(j, k)) * inv_h;
            kernel_array(spec.order, scaled, part);
            acc *= part;
        }
        B.col(j) = acc.max(0.0).matrix();
    }

    const Eigen::VectorXd row_sums = B.rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(row_sums[i] > 0.0)) {
            throw numeric_error(fmt::format(
                "degenerate neighborhood at row {}: no positive kernel weight; "
                "enlarge the bandwidth", i));
        }
    }
    B.array().colwise() /= row_sums.array();
    return B;
}

} // namespace civet
