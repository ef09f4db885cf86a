// gel.hpp: the saddle-point estimator. Inner problem: concave maximization
// over the tilting vector lambda of (1/n) sum_i rho(lambda' psi_i(beta)).
// Outer problem: minimize the inner optimum over scalar beta on a compact
// interval. Three rho families are supported; all satisfy rho(0) = 0,
// rho'(0) = rho''(0) = -1, which makes lambda = 0 the natural starting point
// and gives Q(beta) >= 0 everywhere.
#pragma once

#include <optional>
#include <string>

#include <Eigen/Core>

#include "civet/moments.hpp"

namespace civet {

enum class RhoFamily { el, et, cue };

const char* rho_family_name(RhoFamily f);
RhoFamily rho_family_from_name(const std::string& name);

struct RhoEval {
    double value;
    double d1;
    double d2;
};

// EL: log(1 - v) on v < 1; ET: 1 - exp(v); CUE: -v - v^2/2. EL outside its
// domain throws numeric_error.
RhoEval rho_eval(RhoFamily f, double v);
bool rho_in_domain(RhoFamily f, double v);

struct LambdaSolve {
    Eigen::VectorXd lambda;
    double q = 0.0;         // inner optimum (1/n) sum rho(lambda' psi_i)
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;
};

// Damped Newton maximization from lambda = 0. The line search halves the
// step until the iterate is inside the family domain (for EL: max_i
// lambda'psi_i <= 1 - 1e-6) and the objective does not decrease. Convergence
// when the gradient norm drops below 1e-9 * (1 + |q|); hard stop and error
// after 200 iterations. A singular Newton system gets a Levenberg shift of
// 1e-10 and a retry.
LambdaSolve solve_lambda(double beta, RhoFamily family, const MomentMatrices& mm);

struct GelOptions {
    RhoFamily family = RhoFamily::et;
    double beta_lo = -10.0; // search interval on the standardized scale
    double beta_hi = 10.0;
};

struct GelFit {
    double beta_hat = 0.0;
    Eigen::VectorXd lambda_hat;
    double q_hat = 0.0;
    RhoFamily family = RhoFamily::et;
    int outer_evaluations = 0;
    bool at_bound = false; // minimum landed on an interval endpoint
    LambdaSolve inner;     // diagnostics of the final inner solve
};

// Golden-section search on [beta_lo, beta_hi] to interval width 1e-6 (ties
// break toward the lower beta for determinism), then three Newton
// refinements using the envelope first derivative
//   dQ/dbeta = (1/n) sum_i rho'(lambda' psi_i) lambda' psi'_i
// and the implicit-function second derivative (see q_second_derivative).
GelFit estimate_beta(const MomentMatrices& mm, const GelOptions& opt);

// Envelope derivative of the profiled objective at (beta, lambda(beta)).
double q_derivative(RhoFamily family, const Eigen::VectorXd& lambda, double beta,
                    const MomentMatrices& mm);

// Second derivative of the profiled objective. Differentiates the envelope
// expression once more, obtaining dlambda/dbeta from the implicit function
// theorem applied to the inner first-order condition.
double q_second_derivative(RhoFamily family, const Eigen::VectorXd& lambda, double beta,
                           const MomentMatrices& mm);

// Ratio-of-means diagnostic estimator. Per instrument j:
//   beta_j = mean_i psi0(i,j) / mean_i psi1(i,j);
// pooled: ratio of the sums across instruments. A denominator below 1e-10
// in absolute value throws: the sample shows no usable heteroscedasticity
// signal for that instrument (or at all, in pooled mode).
Eigen::VectorXd closed_form_beta_per_instrument(const MomentMatrices& mm);
double closed_form_beta_pooled(const MomentMatrices& mm);

} // namespace civet
