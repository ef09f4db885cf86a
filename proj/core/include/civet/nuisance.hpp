// nuisance.hpp: the m+4 orthogonal nuisance regressions, their residuals,
// and the censoring-aware augmentation components.
//
// The bundle fits, in order: f_j(X) = E(Z_j | X) for each instrument,
// h1(Z,X) = E(A | Z,X), h2(Z,X) = E(Y | Z,X), then from the implied
// residuals h3(X) = E(R_A R_Y | X) and h4(X) = E(R_A^2 | X). h3 and h4 are
// fitted on plug-in residual products since the population residuals are
// unobservable. h4 predictions are left unconstrained: only the centered
// difference R_A^2 - h4(X) enters the moments, so clipping at zero would be
// a modelling choice with no payoff.
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "civet/censoring.hpp"
#include "civet/dataset.hpp"
#include "civet/learners.hpp"

namespace civet {

struct NuisanceBundle {
    std::vector<PredictorPtr> f; // f[j]: X -> Z_j, size m
    PredictorPtr h1, h2, h3, h4;

    Eigen::MatrixXd rz; // rz(i,j) = z(i,j) - f_j(x_i)
    Eigen::VectorXd ra; // ra(i) = a(i) - h1(z_i, x_i)
    Eigen::VectorXd ry; // ry(i) = y(i) - h2(z_i, x_i)

    // Cached in-sample predictions of h3 and h4 at each x_i.
    Eigen::VectorXd h3x, h4x;
};

// Fits all m+4 learners. With d_x = 0 the X-conditional fits degrade to
// unconditional means (intercept-only designs). Each learner draws its seed
// from a named sub-stream of spec.seed, so the bundle is reproducible and
// insensitive to fit order. Learner failures are rethrown with the nuisance
// name attached.
NuisanceBundle fit_nuisance_bundle(const Dataset& ds, const LearnerSpec& spec);

// Augmentation components, linear in beta by construction:
//   xi_hat(beta; row k) = xi0(k,:) - beta * xi1(k,:)
// with
//   xi0(k,:) = (1/n) sum_i B(k,i) * delta_i / ghat_i * g0(i,:)
// and xi1 the same with g1. g0/g1 are the moment intercept and slope built
// by the moments module. Throws data_error when every observation is
// censored (the augmentation, and everything downstream, degenerates).
struct XiComponents {
    Eigen::MatrixXd xi0, xi1; // n x m each
};

XiComponents xi_components(const Dataset& ds, const CensoringModel& cens,
                           const Eigen::MatrixXd& g0, const Eigen::MatrixXd& g1);

} // namespace civet
