#include "civet/gel.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace civet {

const char* rho_family_name(RhoFamily f) {
    switch (f) {
        case RhoFamily::el: return "el";
        case RhoFamily::et: return "et";
        case RhoFamily::cue: return "cue";
    }
    return "unknown";
}

RhoFamily rho_family_from_name(const std::string& name) {
    if (name == "el") return RhoFamily::el;
    if (name == "et") return RhoFamily::et;
    if (name == "cue") return RhoFamily::cue;
    throw usage_error(fmt::format("unknown rho family '{}'; expected el, et, or cue", name));
}

RhoEval rho_eval(RhoFamily f, double v) {
    switch (f) {
        case RhoFamily::el: {
            if (v >= 1.0) {
                throw numeric_error(fmt::format("empirical likelihood argument {} outside v < 1", v));
            }
            const double one_minus = 1.0 - v;
            return {std::log(one_minus), -1.0 / one_minus, -1.0 / (one_minus * one_minus)};
        }
        case RhoFamily::et: {
            const double e = std::exp(v);
            return {1.0 - e, -e, -e};
        }
        case RhoFamily::cue:
            return {-v - 0.5 * v * v, -1.0 - v, -1.0};
    }
    throw usage_error("unhandled rho family");
}

bool rho_in_domain(RhoFamily f, double v) {
    return f != RhoFamily::el || v < 1.0 - 1e-6;
}

namespace {

// Objective value at a candidate lambda, or -inf when outside the domain.
// ET overflow produces -inf naturally and is rejected by the line search the
// same way a domain violation is.
double q_value(RhoFamily f, const Eigen::VectorXd& v) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (!rho_in_domain(f, v[i])) return -std::numeric_limits<double>::infinity();
        total += rho_eval(f, v[i]).value;
    }
    return total / static_cast<double>(v.size());
}

} // namespace

LambdaSolve solve_lambda(double beta, RhoFamily family, const MomentMatrices& mm) {
    const Eigen::Index n = mm.n();
    const Eigen::Index m = mm.m();
    const Eigen::MatrixXd psi = mm.psi_at(beta);

    LambdaSolve out;
    out.lambda = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    double q = 0.0;

    Eigen::VectorXd d1(n), d2(n);
    double grad0 = 0.0;
    for (int iter = 1; iter <= 200; ++iter) {
        double value = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const RhoEval r = rho_eval(family, v[i]);
            value += r.value;
            d1[i] = r.d1;
            d2[i] = r.d2;
        }
        q = value / static_cast<double>(n);
        const Eigen::VectorXd grad = psi.transpose() * d1 / static_cast<double>(n);
        out.iterations = iter;
        out.q = q;
        out.grad_norm = grad.norm();
        if (iter == 1) grad0 = out.grad_norm;
        if (out.grad_norm <= 1e-9 * (1.0 + std::abs(q))) {
            out.converged = true;
            return out;
        }

        // Newton direction for a concave objective: solve (-H) step = grad,
        // -H positive semidefinite. A failed or non-ascending factorization
        // gets a Levenberg shift and one retry.
        Eigen::MatrixXd neg_hess =
            -(psi.transpose() * (d2.asDiagonal() * psi)) / static_cast<double>(n);
        Eigen::VectorXd step;
        {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_hess);
            step = ldlt.solve(grad);
            if (ldlt.info() != Eigen::Success || !step.allFinite() ||
                grad.dot(step) <= 0.0) {
                neg_hess.diagonal().array() += 1e-10;
                step = neg_hess.ldlt().solve(grad);
                if (!step.allFinite()) {
                    throw numeric_error("tilting solve produced a non-finite Newton step");
                }
            }
        }

        double t = 1.0;
        bool accepted = false;
        while (t >= 1e-16) {
            const Eigen::VectorXd lam_try = out.lambda + t * step;
            const Eigen::VectorXd v_try = psi * lam_try;
            const double q_try = q_value(family, v_try);
            if (q_try >= q) {
                out.lambda = lam_try;
                v = v_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            // No step improves the objective even at machine precision, so the
            // iterate is the numerical optimum. Accept it when the gradient has
            // actually collapsed relative to its starting scale; a stall with a
            // large gradient (a domain boundary, where log(1 - v) caps the
            // step) is genuine non-convergence.
            out.converged = out.grad_norm <= 1e-6 * (1.0 + grad0);
            return out;
        }
    }
    // Out of iterations. EL crawls here when the optimum sits near its
    // domain boundary and steps shrink; the iterate is still the numerical
    // optimum whenever the gradient has collapsed, so apply the same
    // scale-aware acceptance as the line-search stall. The objective value
    // is accurate either way, so callers probing the profile may keep going;
    // the caller that needs the multiplier itself checks `converged`.
    out.converged = out.grad_norm <= 1e-6 * (1.0 + grad0);
    return out;
}

double q_derivative(RhoFamily family, const Eigen::VectorXd& lambda, double beta,
                    const MomentMatrices& mm) {
    const Eigen::Index n = mm.n();
    const Eigen::VectorXd v = mm.psi_at(beta) * lambda;
    const Eigen::VectorXd slope = mm.psi1 * lambda; // lambda' psi'_i = -slope_i
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        total += rho_eval(family, v[i]).d1 * (-slope[i]);
    }
    return total / static_cast<double>(n);
}

double q_second_derivative(RhoFamily family, const Eigen::VectorXd& lambda, double beta,
                           const MomentMatrices& mm) {
    const Eigen::Index n = mm.n();
    const Eigen::MatrixXd psi = mm.psi_at(beta);
    const Eigen::VectorXd v = psi * lambda;
    const Eigen::VectorXd lps = -(mm.psi1 * lambda); // lambda' psi'_i

    Eigen::VectorXd d1(n), d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const RhoEval r = rho_eval(family, v[i]);
        d1[i] = r.d1;
        d2[i] = r.d2;
    }

    // dlambda/dbeta from the inner first-order condition:
    //   M lambda' = -(1/n) sum_i [rho'' (lambda'psi'_i) psi_i + rho' psi'_i]
    // with M = (1/n) sum_i rho'' psi_i psi_i'. psi'_i is -psi1 row i.
    const double dn = static_cast<double>(n);
    Eigen::MatrixXd M = psi.transpose() * (d2.asDiagonal() * psi) / dn;
    Eigen::VectorXd rhs = -(psi.transpose() * d2.cwiseProduct(lps) / dn) +
                          (mm.psi1.transpose() * d1 / dn);
    Eigen::VectorXd lam_prime = M.ldlt().solve(rhs);
    if (!lam_prime.allFinite()) {
        M.diagonal().array() -= 1e-10; // M is negative semidefinite
        lam_prime = M.ldlt().solve(rhs);
        if (!lam_prime.allFinite()) {
            throw numeric_error("profiled second derivative: singular inner Hessian");
        }
    }

    const Eigen::VectorXd lpp = psi * lam_prime;          // lambda'' -> lambda_prime' psi_i
    const Eigen::VectorXd lpp_slope = mm.psi1 * lam_prime; // lambda_prime' psi1_i
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        total += d2[i] * (lpp[i] + lps[i]) * lps[i] + d1[i] * (-lpp_slope[i]);
    }
    return total / dn;
}

GelFit estimate_beta(const MomentMatrices& mm, const GelOptions& opt) {
    if (!(opt.beta_lo < opt.beta_hi)) throw usage_error("beta interval must have beta_lo < beta_hi");

    GelFit fit;
    fit.family = opt.family;

    int evals = 0;
    auto profiled = [&](double beta) {
        ++evals;
        return solve_lambda(beta, opt.family, mm).q;
    };

    // Golden-section shrink to a 1e-6-wide bracket. On ties the upper half is
    // discarded so the result is deterministic and leans low.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = opt.beta_lo, hi = opt.beta_hi;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = profiled(x1);
    double f2 = profiled(x2);
    while (hi - lo > 1e-6) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = profiled(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = profiled(x2);
        }
    }
    double beta = f1 <= f2 ? x1 : x2;

    // A few Newton polish steps sharpen the bracket midpoint to solver
    // precision; each is accepted only when it stays in the search interval
    // and the curvature is convex at the current point.
    LambdaSolve inner = solve_lambda(beta, opt.family, mm);
    ++evals;
    for (int k = 0; k < 3; ++k) {
        const double d1 = q_derivative(opt.family, inner.lambda, beta, mm);
        const double d2 = q_second_derivative(opt.family, inner.lambda, beta, mm);
        if (!(d2 > 0.0)) break;
        const double beta_next = beta - d1 / d2;
        if (!(beta_next >= opt.beta_lo && beta_next <= opt.beta_hi)) break;
        const LambdaSolve trial = solve_lambda(beta_next, opt.family, mm);
        ++evals;
        if (trial.q > inner.q) break; // polish must not climb
        beta = beta_next;
        inner = trial;
        if (std::abs(d1 / d2) < 1e-12) break;
    }

    if (!inner.converged) {
        throw numeric_error(fmt::format(
            "tilting solve did not converge at the estimate (beta = {}, grad norm = {})", beta,
            inner.grad_norm));
    }

    fit.beta_hat = beta;
    fit.lambda_hat = inner.lambda;
    fit.q_hat = inner.q;
    fit.outer_evaluations = evals;
    fit.at_bound = (beta - opt.beta_lo) <= 2e-6 || (opt.beta_hi - beta) <= 2e-6;
    fit.inner = inner;
    return fit;
}

Eigen::VectorXd closed_form_beta_per_instrument(const MomentMatrices& mm) {
    const Eigen::VectorXd num = mm.psi0.colwise().mean();
    const Eigen::VectorXd den = mm.psi1.colwise().mean();
    Eigen::VectorXd beta(mm.m());
    for (Eigen::Index j = 0; j < mm.m(); ++j) {
        if (std::abs(den[j]) < 1e-10) {
            throw numeric_error(fmt::format(
                "instrument {} carries no heteroscedasticity signal (mean slope {})", j + 1,
                den[j]));
        }
        beta[j] = num[j] / den[j];
    }
    return beta;
}

double closed_form_beta_pooled(const MomentMatrices& mm) {
    const double num = mm.psi0.colwise().mean().sum();
    const double den = mm.psi1.colwise().mean().sum();
    if (std::abs(den) < 1e-10) {
        throw numeric_error(fmt::format(
            "pooled heteroscedasticity signal is numerically zero (mean slope {})", den));
    }
    return num / den;
}

} // namespace civet
