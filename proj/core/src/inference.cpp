#include "civet/inference.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

namespace civet {

namespace {

// Symmetric inverse with an explicit conditioning guard. The moment
// second-moment matrix is m x m with small m, so an eigendecomposition is
// cheap and gives the condition number for free.
Eigen::MatrixXd guarded_inverse(const Eigen::MatrixXd& sym, const char* label) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) {
        throw numeric_error(fmt::format("{}: eigendecomposition failed", label));
    }
    const Eigen::VectorXd ev = es.eigenvalues();
    const double emin = ev.minCoeff();
    const double emax = ev.maxCoeff();
    if (!(emin > 0.0) || emax / emin > 1e12) {
        throw numeric_error(fmt::format(
            "{} is numerically singular (eigenvalues in [{}, {}])", label, emin, emax));
    }
    return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

VarianceComponents variance_components(const GelFit& fit, const Dataset& ds,
                                       const MomentMatrices& mm,
                                       const CensoringModel& cens,
                                       const PhiKernel& phik) {
    const Eigen::Index n = mm.n();
    const double dn = static_cast<double>(n);
    const double beta = fit.beta_hat;
    const Eigen::VectorXd& lambda = fit.lambda_hat;

    VarianceComponents vc;
    vc.h_hat = q_second_derivative(fit.family, lambda, beta, mm);
    if (!(vc.h_hat > 0.0)) {
        throw numeric_error(fmt::format(
            "profiled objective has non-positive curvature {} at the estimate", vc.h_hat));
    }

    const Eigen::MatrixXd psi = mm.psi_at(beta);
    const Eigen::VectorXd v = psi * lambda;
    Eigen::VectorXd d1(n), d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const RhoEval r = rho_eval(fit.family, v[i]);
        d1[i] = r.d1;
        d2[i] = r.d2;
    }

    const double sum_d1 = d1.sum();
    if (std::abs(sum_d1) < 1e-12 * dn) {
        throw numeric_error("tilting weights sum to zero; the slope average is undefined");
    }
    // D = sum_i rho'_i psi'_i / sum_i rho'_i, with psi'_i = -psi1 row i.
    const Eigen::VectorXd D = -(mm.psi1.transpose() * d1) / sum_d1;

    const Eigen::MatrixXd sigma = psi.transpose() * psi / dn;
    const Eigen::MatrixXd sigma_inv = guarded_inverse(sigma, "moment second-moment matrix");

    vc.v1_hat = D.dot(sigma_inv * D) / (vc.h_hat * vc.h_hat);

    if (cens.trivial) {
        vc.v2_hat = 0.0;
        return vc;
    }

    // Censoring-estimation variance. Both terms are phi-weighted averages of
    // the per-observation factor
    //   c_i = rho''_i u_i (lambda'psi'_i) + rho'_i w_i
    // so two streamed kernel products cover the quadratic and cross terms.
    auto [u, w] = dg_factors(lambda, beta, ds, mm, cens);
    const Eigen::VectorXd lps = -(mm.psi1 * lambda); // lambda' psi'_i
    const Eigen::VectorXd c =
        d2.cwiseProduct(u).cwiseProduct(lps) + d1.cwiseProduct(w);

    const Eigen::VectorXd psibar_prime = -(mm.psi1.colwise().mean().transpose());
    const Eigen::VectorXd e = psi * (sigma_inv * psibar_prime);
    const Eigen::VectorXd ce = c.cwiseProduct(e);

    const std::vector<Eigen::VectorXd> prods = phik.apply({&c, &ce});
    const double h2 = vc.h_hat * vc.h_hat;
    const double quad = prods[0].squaredNorm() / (dn * dn * dn);
    const double cross = 2.0 * prods[1].sum() / (dn * dn);
    vc.v2_hat = (quad + cross) / h2;
    return vc;
}

IntervalEstimate standard_error(const VarianceComponents& vc, double beta_hat,
                                Eigen::Index n, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw usage_error("alpha must lie in (0, 1)");
    const double var =
        (1.0 / vc.h_hat + vc.v1_hat + vc.v2_hat) / static_cast<double>(n);
    if (!(var > 0.0)) {
        throw numeric_error(fmt::format("variance estimate {} is not positive", var));
    }
    const boost::math::normal_distribution<double> norm;
    const double z = boost::math::quantile(norm, 1.0 - alpha / 2.0);
    IntervalEstimate ie;
    ie.se = std::sqrt(var);
    ie.ci_lo = beta_hat - z * ie.se;
    ie.ci_hi = beta_hat + z * ie.se;
    return ie;
}

OveridResult overid_test(const GelFit& fit, const Dataset& ds, const MomentMatrices& mm,
                         const CensoringModel& cens, const PhiKernel& phik) {
    const Eigen::Index m = mm.m();
    if (m < 2) {
        throw usage_error("over-identification test needs at least 2 instruments; "
                          "the model is exactly identified with one");
    }
    const Eigen::Index n = mm.n();
    const double dn = static_cast<double>(n);
    const double dof = static_cast<double>(m - 1);

    OveridResult out;
    if (!cens.trivial) {
        auto [u, w] = dg_factors(fit.lambda_hat, fit.beta_hat, ds, mm, cens);
        (void)w;
        const Eigen::VectorXd v = mm.psi_at(fit.beta_hat) * fit.lambda_hat;
        Eigen::VectorXd t(n);
        const double scale = 2.0 * dn / std::sqrt(2.0 * dof);
        for (Eigen::Index i = 0; i < n; ++i) {
            t[i] = scale * rho_eval(fit.family, v[i]).d1 * u[i];
        }
        const std::vector<Eigen::VectorXd> prods = phik.apply({&t});
        out.v3_hat = prods[0].squaredNorm() / (dn * dn * dn);
    }

    out.stat = std::abs(2.0 * dn * fit.q_hat - dof) / std::sqrt(2.0 * dof * (1.0 + out.v3_hat));
    const boost::math::normal_distribution<double> norm;
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(norm, out.stat));
    return out;
}

WeakIdResult weak_id_f(const Dataset& ds, const NuisanceBundle& bundle) {
    const Eigen::Index m = ds.m();
    const Eigen::MatrixXd& W = bundle.rz;
    const Eigen::VectorXd e = bundle.ra.cwiseProduct(bundle.ra) - bundle.h4x;

    // No-intercept OLS, then the HC0 Wald form. With gamma solving
    // (W'W) gamma = W'e the quadratic form collapses to
    //   F = (W'e)' meat^{-1} (W'e) / m,  meat = sum_i resid_i^2 w_i w_i'.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(W);
    if (qr.rank() < m) {
        // The pivot order puts the dependent directions last; name them.
        const auto& perm = qr.colsPermutation().indices();
        std::string cols;
        for (Eigen::Index k = qr.rank(); k < m; ++k) {
            if (!cols.empty()) cols += ", ";
            cols += fmt::format("z{}", perm[k] + 1);
        }
        throw numeric_error(fmt::format(
            "instrument residuals are rank deficient (columns {} are linearly dependent)", cols));
    }
    const Eigen::VectorXd wte = W.transpose() * e;
    const Eigen::VectorXd gamma = qr.solve(e);
    const Eigen::VectorXd resid = e - W * gamma;
    const Eigen::MatrixXd meat =
        W.transpose() * resid.cwiseProduct(resid).asDiagonal() * W;
    const Eigen::MatrixXd meat_inv = guarded_inverse(meat, "robust variance matrix");

    WeakIdResult out;
    out.f = wte.dot(meat_inv * wte) / static_cast<double>(m);
    out.weak = !(out.f > 2.0);
    return out;
}

Eigen::MatrixX2d weak_id_scatter(const Dataset& ds, const NuisanceBundle& bundle) {
    const Eigen::MatrixXd& W = bundle.rz;
    const Eigen::VectorXd e = bundle.ra.cwiseProduct(bundle.ra) - bundle.h4x;
    const Eigen::MatrixXd wtw = W.transpose() * W;
    const Eigen::VectorXd gamma = wtw.ldlt().solve(W.transpose() * e);
    Eigen::MatrixX2d out(ds.n(), 2);
    out.col(0) = W * gamma;
    out.col(1) = e;
    return out;
}

InferenceReport analyze(const Dataset& raw, const AnalysisOptions& opt) {
    raw.validate();
    auto [ds, scaling] = standardize(raw);

    NuisanceBundle bundle = fit_nuisance_bundle(ds, opt.learner);

    CensoringModel cens;
    if (ds.fully_observed()) {
        cens = trivial_censoring_model(ds);
    } else {
        const int q = opt.conditioning.dim(ds);
        KernelSpec spec;
        spec.dim = q;
        spec.order = opt.kernel_order > 0 ? opt.kernel_order : kernel_order_for(q);
        spec.bandwidth =
            opt.bandwidth > 0.0 ? opt.bandwidth : default_bandwidth(ds.n(), q, opt.bandwidth_c);
        cens = fit_local_km(ds, opt.conditioning, spec, opt.eps_g);
    }

    const MomentMatrices mm = build_moments(ds, bundle, cens);
    GelOptions gopt;
    gopt.family = opt.family;
    gopt.beta_lo = opt.beta_lo;
    gopt.beta_hi = opt.beta_hi;
    const GelFit fit = estimate_beta(mm, gopt);

    const PhiKernel phik(cens);
    const VarianceComponents vc = variance_components(fit, ds, mm, cens, phik);
    const IntervalEstimate ie = standard_error(vc, fit.beta_hat, ds.n(), opt.alpha);
    const WeakIdResult wk = weak_id_f(ds, bundle);

    InferenceReport rep;
    // The exposure was scaled by 1/a_spread, so the standardized coefficient
    // is a_spread times the raw one. Centering shifts only the intercept.
    const double s = scaling.a_spread;
    rep.beta_hat = fit.beta_hat / s;
    rep.se = ie.se / s;
    rep.ci_lo = ie.ci_lo / s;
    rep.ci_hi = ie.ci_hi / s;
    rep.h_hat = vc.h_hat;
    rep.v1_hat = vc.v1_hat;
    rep.v2_hat = vc.v2_hat;
    if (ds.m() >= 2) {
        const OveridResult ov = overid_test(fit, ds, mm, cens, phik);
        rep.v3_hat = ov.v3_hat;
        rep.overid_stat = ov.stat;
        rep.overid_p = ov.p_value;
    }
    rep.f_mawii = wk.f;
    rep.weak_flag = wk.weak;
    rep.family = rho_family_name(opt.family);
    rep.n = ds.n();
    rep.m = ds.m();
    return rep;
}

} // namespace civet
