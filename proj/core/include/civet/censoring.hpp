// censoring.hpp: local Kaplan-Meier model of the conditional censoring
// survival function G(y | conditioning variables), plus the phi influence
// kernel that feeds the censoring-induced variance corrections.
//
// The fitted model keeps the full n x n Nadaraya-Watson weight matrix
// because three downstream consumers need all-pairs weights: the
// augmentation averages, the phi kernel, and the variance plug-ins. It is
// stored with one neighborhood per column so that every per-observation pass
// reads contiguous memory.
#pragma once

#include <vector>

#include <Eigen/Core>

#include "civet/dataset.hpp"
#include "civet/kernels.hpp"

namespace civet {

// Which blocks of (a, z, x) enter the kernel distance. The default {a, x}
// keeps the conditioning dimension at 1 + d_x; including z is supported but
// with many instruments the kernel neighborhood degenerates, so it is off
// unless explicitly requested.
struct Conditioning {
    bool use_a = true;
    bool use_z = false;
    bool use_x = true;

    Eigen::MatrixXd extract(const Dataset& ds) const;
    int dim(const Dataset& ds) const;
};

struct CensoringModel {
    Eigen::VectorXd y;      // observed times, copied from the dataset
    Eigen::VectorXd delta;  // event indicators
    Eigen::MatrixXd cond;   // n x q conditioning matrix (standardized)
    KernelSpec spec;
    double eps_g = 0.05;    // floor for survival values and at-risk divisors

    // B.col(i)[j] = weight of observation j in the neighborhood of
    // observation i; each column has mean one (sums to n), so averages
    // against a column keep an explicit 1/n. Empty in the trivial (fully
    // observed) model.
    Eigen::MatrixXd B;

    // ghat(i) = estimated censoring survival at (y_i, neighborhood of i),
    // already floored at eps_g.
    Eigen::VectorXd ghat;

    // Indices of observations sorted by ascending y; shared by the phi
    // kernel and the per-row survival evaluations.
    std::vector<Eigen::Index> order;

    // True for the fully-observed shortcut: no weight matrix, ghat = 1.
    bool trivial = false;

    Eigen::Index n() const { return y.size(); }
};

// Fits the local Kaplan-Meier model: builds B, then for each observation the
// product-limit estimate over censored observations in its neighborhood.
// Factors are clamped to [0,1]; the final survival values are floored at
// eps_g. A degenerate neighborhood makes the weight construction throw with
// the offending observation named.
CensoringModel fit_local_km(const Dataset& ds, const Conditioning& cond,
                            const KernelSpec& spec, double eps_g = 0.05);

// Shortcut model for fully observed data: G = 1 identically, no weight
// matrix. The estimating equations reduce exactly to their uncensored form,
// so none of the censoring machinery is materialized.
CensoringModel trivial_censoring_model(const Dataset& ds);

// Product-limit value at (time y, query point) for an arbitrary query,
// floored at eps_g. The query is a point in the model's conditioning space.
double g_eval(const CensoringModel& model, double y, const Eigen::VectorXd& query);

// Influence kernel of the local Kaplan-Meier estimator. Entry (j, i) is the
// first-order effect of observation j on the fitted survival at observation
// i's (time, neighborhood) pair:
//
//   Phi(j,i) = B_i(j) * ghat_i * [ 1{y_j <= y_i, delta_j = 0} / S_i(y_j)
//              - (1/n) sum over censored k with y_k <= min(y_j, y_i) of
//                B_i(k) / S_i(y_k)^2 ]
//
// where B_i is neighborhood i's mean-one weight vector and S_i(t) =
// (1/n) sum_l B_i(l) 1{y_l >= t} is the weighted at-risk proportion in that
// neighborhood (non-strict at ties), floored at eps_g wherever it divides.
// The outer B_i(j) keeps the mean-one scale, so a column of Phi carries the
// influence of one observation at the same order as a single moment row and
// column means shrink at the root-n rate. Columns are
// generated on the fly in O(n) after shared O(n log n) preparation, so
// matrix-free products against Phi cost O(n^2) total and the dense matrix is
// only materialized on request (tests, small n).
class PhiKernel {
public:
    explicit PhiKernel(const CensoringModel& model);

    Eigen::Index n() const { return model_->n(); }

    // out[j] = Phi(j, i) for all j.
    void column(Eigen::Index i, Eigen::VectorXd& out) const;

    // Dense n x n matrix; quadratic memory, intended for tests and small n.
    Eigen::MatrixXd dense() const;

    // Products r_v[j] = sum_i Phi(j, i) * v(i) for several vectors v in one
    // sweep over columns. With a trivial model every product is zero.
    std::vector<Eigen::VectorXd> apply(const std::vector<const Eigen::VectorXd*>& vs) const;

private:
    const CensoringModel* model_;
    // Tie groups in the model's shared sort order: group_start_ holds offsets
    // into the order (with an end sentinel), group_of_ maps an observation to
    // its group. Groups, not raw ranks, drive the prefix sums so tied times
    // share one at-risk set.
    std::vector<Eigen::Index> group_start_;
    std::vector<int> group_of_;
};

inline PhiKernel phi_kernel(const CensoringModel& model) { return PhiKernel(model); }

} // namespace civet
