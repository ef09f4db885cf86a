#include "civet/moments.hpp"

#include <fmt/format.h>

namespace civet {

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_g(const Dataset& ds,
                                                    const NuisanceBundle& bundle) {
    const Eigen::VectorXd level = bundle.ra.cwiseProduct(bundle.ry) - bundle.h3x;
    const Eigen::VectorXd slope = bundle.ra.cwiseProduct(bundle.ra) - bundle.h4x;
    Eigen::MatrixXd g0 = bundle.rz.array().colwise() * level.array();
    Eigen::MatrixXd g1 = bundle.rz.array().colwise() * slope.array();
    if (g0.rows() != ds.n()) {
        throw usage_error(fmt::format("nuisance bundle covers {} rows, dataset has {}", g0.rows(),
                                      ds.n()));
    }
    return {std::move(g0), std::move(g1)};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_psi(const Dataset& ds,
                                                      const CensoringModel& cens,
                                                      const Eigen::MatrixXd& g0,
                                                      const Eigen::MatrixXd& g1,
                                                      const XiComponents& xi) {
    const Eigen::Index n = ds.n();
    Eigen::MatrixXd psi0(n, g0.cols());
    Eigen::MatrixXd psi1(n, g1.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double ghat = cens.trivial ? 1.0 : cens.ghat[i];
        const double w = ds.delta[i] / ghat;
        if (w == 1.0) {
            // Fully observed with no reweighting: identical to the plain
            // moment, bit for bit.
            psi0.row(i) = g0.row(i);
            psi1.row(i) = g1.row(i);
        } else {
            psi0.row(i) = w * g0.row(i) + (1.0 - w) * xi.xi0.row(i);
            psi1.row(i) = w * g1.row(i) + (1.0 - w) * xi.xi1.row(i);
        }
    }
    return {std::move(psi0), std::move(psi1)};
}

MomentMatrices build_moments(const Dataset& ds, const NuisanceBundle& bundle,
                             const CensoringModel& cens) {
    MomentMatrices mm;
    std::tie(mm.g0, mm.g1) = build_g(ds, bundle);
    mm.xi = xi_components(ds, cens, mm.g0, mm.g1);
    std::tie(mm.psi0, mm.psi1) = build_psi(ds, cens, mm.g0, mm.g1, mm.xi);
    if (cens.trivial) {
        mm.ipcw = ds.delta;
    } else {
        mm.ipcw = ds.delta.cwiseQuotient(cens.ghat);
    }
    return mm;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> dg_factors(const Eigen::VectorXd& lambda,
                                                       double beta,
                                                       const Dataset& ds,
                                                       const MomentMatrices& mm,
                                                       const CensoringModel& cens) {
    const Eigen::Index n = mm.n();
    Eigen::VectorXd u(n), w(n);
    if (cens.trivial) {
        u.setZero();
        w.setZero();
        return {std::move(u), std::move(w)};
    }
    // Perturbing ghat_i moves row i of psi through the weight delta_i/ghat_i
    // on both the direct moment and the augmentation: the chain rule gives a
    // common factor -delta_i/ghat_i^2 times the (g - xi) contrast.
    const Eigen::MatrixXd contrast0 = mm.g0 - mm.xi.xi0;
    const Eigen::MatrixXd contrast1 = mm.g1 - mm.xi.xi1;
    const Eigen::VectorXd lev = (contrast0 - beta * contrast1) * lambda;
    const Eigen::VectorXd slo = contrast1 * lambda;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double gi = cens.ghat[i];
        const double common = -ds.delta[i] / (gi * gi);
        u[i] = common * lev[i];
        w[i] = common * (-slo[i]); // slope of psi is -psi1, hence the sign
    }
    return {std::move(u), std::move(w)};
}

DGDirectional dg_directional(Eigen::Index j, const Eigen::VectorXd& lambda, double beta,
                             const Dataset& ds, const MomentMatrices& mm,
                             const CensoringModel& cens, const PhiKernel& phik) {
    const Eigen::Index n = mm.n();
    auto [u, w] = dg_factors(lambda, beta, ds, mm, cens);
    DGDirectional out;
    out.dpsi.resize(n);
    out.dpsi_slope.resize(n);
    Eigen::VectorXd col(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        phik.column(i, col);
        out.dpsi[i] = col[j] * u[i];
        out.dpsi_slope[i] = col[j] * w[i];
    }
    return out;
}

} // namespace civet
