#include "civet/nuisance.hpp"

#include <fmt/format.h>

#include "civet/rng.hpp"

namespace civet {

namespace {

PredictorPtr fit_named(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                       const LearnerSpec& spec, std::uint64_t master_seed,
                       const std::string& name) {
    LearnerSpec local = spec;
    local.seed = substream_seed(master_seed, name);
    try {
        return fit_learner(features, targets, local);
    } catch (const Error& e) {
        throw Error(e.kind(), fmt::format("{} (while fitting {})", e.what(), name));
    }
}

} // namespace

NuisanceBundle fit_nuisance_bundle(const Dataset& ds, const LearnerSpec& spec) {
    spec.validate();
    const Eigen::Index n = ds.n();
    const Eigen::Index m = ds.m();

    NuisanceBundle b;
    b.f.resize(static_cast<std::size_t>(m));
    b.rz.resize(n, m);

    for (Eigen::Index j = 0; j < m; ++j) {
        const std::string name = fmt::format("f{}", j + 1);
        b.f[static_cast<std::size_t>(j)] = fit_named(ds.x, ds.z.col(j), spec, spec.seed, name);
        b.rz.col(j) = ds.z.col(j) - b.f[static_cast<std::size_t>(j)]->predict(ds.x);
    }

    Eigen::MatrixXd zx(n, m + ds.dx());
    zx.leftCols(m) = ds.z;
    if (ds.dx() > 0) zx.rightCols(ds.dx()) = ds.x;

    b.h1 = fit_named(zx, ds.a, spec, spec.seed, "h1");
    b.ra = ds.a - b.h1->predict(zx);

    b.h2 = fit_named(zx, ds.y, spec, spec.seed, "h2");
    b.ry = ds.y - b.h2->predict(zx);

    // h3 and h4 regress plug-in residual products on X; their predictions are
    // the centering terms of the moment function.
    const Eigen::VectorXd cross = b.ra.cwiseProduct(b.ry);
    const Eigen::VectorXd square = b.ra.cwiseProduct(b.ra);
    b.h3 = fit_named(ds.x, cross, spec, spec.seed, "h3");
    b.h3x = b.h3->predict(ds.x);
    b.h4 = fit_named(ds.x, square, spec, spec.seed, "h4");
    b.h4x = b.h4->predict(ds.x);
    return b;
}

XiComponents xi_components(const Dataset& ds, const CensoringModel& cens,
                           const Eigen::MatrixXd& g0, const Eigen::MatrixXd& g1) {
    const Eigen::Index n = ds.n();
    const Eigen::Index m = g0.cols();
    XiComponents xi;
    if (cens.trivial) {
        // Fully observed: the augmentation weight 1 - delta/G is identically
        // zero, so the components never enter. Zeros keep the shape contract.
        xi.xi0 = Eigen::MatrixXd::Zero(n, m);
        xi.xi1 = Eigen::MatrixXd::Zero(n, m);
        return xi;
    }
    if (ds.delta.sum() == 0.0) {
        throw data_error("every observation is censored; the augmentation average is undefined");
    }

    // xi0(k,:) = (1/n) sum_i B_k(i) (delta_i / ghat_i) g0(i,:). The stored
    // weight matrix has neighborhoods in columns, so this is B^T times the
    // row-scaled moment components.
    const Eigen::VectorXd scale = ds.delta.cwiseQuotient(cens.ghat) / static_cast<double>(n);
    xi.xi0 = cens.B.transpose() * (scale.asDiagonal() * g0);
    xi.xi1 = cens.B.transpose() * (scale.asDiagonal() * g1);
    return xi;
}

} // namespace civet
