// inference.hpp: variance decomposition, standard errors, the
// over-identification test, and the weak-identification F diagnostic.
//
// The asymptotic variance has three pieces: the curvature H of the profiled
// objective, the sampling piece V1 (a sandwich in the moment second-moment
// matrix), and V2, which prices the estimation error of the censoring
// survival function through the phi influence kernel. V2 is identically
// zero without censoring, as is the V3 correction inside the
// over-identification statistic; tests pin both reductions exactly.
#pragma once

#include <optional>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "civet/censoring.hpp"
#include "civet/gel.hpp"
#include "civet/moments.hpp"
#include "civet/nuisance.hpp"

namespace civet {

struct VarianceComponents {
    double h_hat = 0.0;  // d^2 Q / d beta^2 at the estimate
    double v1_hat = 0.0;
    double v2_hat = 0.0;
};

// H by the analytic second derivative; V1 = H^-1 D' Sigma^-1 D H^-1 with
// D the rho'-weighted average of the moment slopes and Sigma the sample
// second-moment matrix of psi at the estimate; V2 from the phi kernel via
// the factorized directional derivatives. Throws numeric_error when H <= 0
// (no local second-order identification) or Sigma is numerically singular
// (condition number above 1e12).
VarianceComponents variance_components(const GelFit& fit, const Dataset& ds,
                                       const MomentMatrices& mm,
                                       const CensoringModel& cens,
                                       const PhiKernel& phik);

// se^2 = (1/n) (H^-1 + V1 + V2); the plug-in components already carry their
// H^-1 factors. Returns the standard error and the symmetric normal CI at
// level 1 - alpha.
struct IntervalEstimate {
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

IntervalEstimate standard_error(const VarianceComponents& vc, double beta_hat,
                                Eigen::Index n, double alpha = 0.05);

// Over-identification test. The statistic centers 2n Q at its degrees of
// freedom m - 1 and studentizes by sqrt(2(m-1) (1 + V3)), where V3 prices
// censoring-estimation noise:
//   V3 = (1/n) sum_j [ (1/n) sum_i rho'(lambda'psi_i) * (lambda' D_G
//        psi_i[phi_j]) * 2n / sqrt(2(m-1)) ]^2.
// Two-sided normal p-value. Requires m >= 2; with one instrument the model
// is exactly identified and the test does not exist.
struct OveridResult {
    double stat = 0.0;
    double p_value = 1.0;
    double v3_hat = 0.0;
};

OveridResult overid_test(const GelFit& fit, const Dataset& ds, const MomentMatrices& mm,
                         const CensoringModel& cens, const PhiKernel& phik);

// Heteroscedasticity-robust F statistic for weak identification: regress
// the centered squared exposure residual on the centered instruments
// without an intercept and form the HC0 Wald statistic divided by m. The
// identification signal is considered adequate when F > 2.
struct WeakIdResult {
    double f = 0.0;
    bool weak = true;
};

WeakIdResult weak_id_f(const Dataset& ds, const NuisanceBundle& bundle);

// Scatter data for residual-variance diagnostics: (fitted instrument signal,
// centered squared residual) pairs from the weak-identification regression.
Eigen::MatrixX2d weak_id_scatter(const Dataset& ds, const NuisanceBundle& bundle);

// Everything the CLI prints and serializes for one estimation run. Over-id
// fields are absent when m = 1. beta_hat, se, and the interval are reported
// on the original (unstandardized) exposure scale; the variance components
// and test statistics are scale-free diagnostics of the internal
// standardized problem.
struct InferenceReport {
    double beta_hat = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double h_hat = 0.0;
    double v1_hat = 0.0;
    double v2_hat = 0.0;
    std::optional<double> v3_hat;
    std::optional<double> overid_stat;
    std::optional<double> overid_p;
    double f_mawii = 0.0;
    bool weak_flag = true;
    std::string family;
    Eigen::Index n = 0;
    Eigen::Index m = 0;
};

// Pipeline options for one estimation pass over a raw dataset.
struct AnalysisOptions {
    LearnerSpec learner;
    RhoFamily family = RhoFamily::et;
    Conditioning conditioning;
    int kernel_order = 0;        // 0 = derive from conditioning dimension
    double bandwidth = 0.0;      // 0 = default rate with constant bandwidth_c
    double bandwidth_c = 1.0;
    double eps_g = 0.05;
    double beta_lo = -10.0;
    double beta_hi = 10.0;
    double alpha = 0.05;
};

// Full pipeline: standardize, fit nuisances, fit censoring model, build
// moments, solve the saddle point, decompose the variance, run diagnostics.
// beta and its interval are mapped back to the raw exposure scale.
InferenceReport analyze(const Dataset& raw, const AnalysisOptions& opt);

} // namespace civet
