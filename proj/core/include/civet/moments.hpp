// moments.hpp: the stacked estimating functions, their beta-slopes, and the
// directional derivatives with respect to the censoring survival function.
//
// Everything here is exactly linear in beta. The per-observation moment is
//   g(beta; O_i) = g0(i,:) - beta * g1(i,:)
// with one coordinate per instrument, and the censoring-weighted version
//   psi(beta; O_i) = psi0(i,:) - beta * psi1(i,:)
// combines the inverse-probability-weighted moment with the augmentation:
// row i gets weight delta_i/ghat_i on g and 1 - delta_i/ghat_i on xi.
// The slope of psi in beta is therefore -psi1.
#pragma once

#include <utility>

#include <Eigen/Core>

#include "civet/censoring.hpp"
#include "civet/dataset.hpp"
#include "civet/nuisance.hpp"

namespace civet {

struct MomentMatrices {
    Eigen::MatrixXd g0, g1;     // n x m
    Eigen::MatrixXd psi0, psi1; // n x m
    Eigen::VectorXd ipcw;       // delta_i / ghat_i
    XiComponents xi;

    Eigen::Index n() const { return psi0.rows(); }
    Eigen::Index m() const { return psi0.cols(); }

    // psi(beta) rows; the workhorse of the saddle-point solver.
    Eigen::MatrixXd psi_at(double beta) const { return psi0 - beta * psi1; }
};

// g0(i,j) = rz(i,j) * (ra_i * ry_i - h3(x_i)),
// g1(i,j) = rz(i,j) * (ra_i^2     - h4(x_i)).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_g(const Dataset& ds,
                                                    const NuisanceBundle& bundle);

// psi0 = diag(w) g0 + diag(1-w) xi0 with w_i = delta_i/ghat_i; psi1 alike.
// Rows with w_i == 1 are copied from g verbatim so the fully observed case
// reduces bit-for-bit, not just to rounding.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_psi(const Dataset& ds,
                                                      const CensoringModel& cens,
                                                      const Eigen::MatrixXd& g0,
                                                      const Eigen::MatrixXd& g1,
                                                      const XiComponents& xi);

// One-call pipeline step: g, xi, psi assembled together.
MomentMatrices build_moments(const Dataset& ds, const NuisanceBundle& bundle,
                             const CensoringModel& cens);

// Directional derivative of psi (and of its beta-slope) with respect to the
// censoring survival, in the direction of the influence kernel's column for
// perturbing observation j, contracted with lambda:
//
//   lambda' D_G psi_i[phi_j]  = Phi(j,i) * u_i
//   lambda' D_G psi'_i[phi_j] = Phi(j,i) * w_i
// with
//   u_i = -(delta_i / ghat_i^2) * lambda' (g(beta;O_i) - xi(beta; row i))
//   w_i = -(delta_i / ghat_i^2) * lambda' (-g1(i,:) + xi1(i,:)).
//
// The factor form (u, w) is what the variance plug-ins consume: they only
// ever need Phi-weighted sums of u and w, never the full n x n array.
std::pair<Eigen::VectorXd, Eigen::VectorXd> dg_factors(const Eigen::VectorXd& lambda,
                                                       double beta,
                                                       const Dataset& ds,
                                                       const MomentMatrices& mm,
                                                       const CensoringModel& cens);

// Full directional vectors for one perturbing index j; the dense companion
// of dg_factors used by tests and small-sample diagnostics.
struct DGDirectional {
    Eigen::VectorXd dpsi;       // over i: lambda' D_G psi_i[phi_j]
    Eigen::VectorXd dpsi_slope; // over i: lambda' D_G psi'_i[phi_j]
};

DGDirectional dg_directional(Eigen::Index j, const Eigen::VectorXd& lambda, double beta,
                             const Dataset& ds, const MomentMatrices& mm,
                             const CensoringModel& cens, const PhiKernel& phik);

} // namespace civet
