#include "civet/censoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace civet {

Eigen::MatrixXd Conditioning::extract(const Dataset& ds) const {
    const int q = dim(ds);
    if (q == 0) {
        throw usage_error("censoring conditioning set is empty; include at least one of a, z, x");
    }
    Eigen::MatrixXd out(ds.n(), q);
    Eigen::Index c = 0;
    if (use_a) out.col(c++) = ds.a;
    if (use_z) {
        out.middleCols(c, ds.m()) = ds.z;
        c += ds.m();
    }
    if (use_x && ds.dx() > 0) {
        out.middleCols(c, ds.dx()) = ds.x;
        c += ds.dx();
    }
    return out;
}

int Conditioning::dim(const Dataset& ds) const {
    int q = 0;
    if (use_a) q += 1;
    if (use_z) q += static_cast<int>(ds.m());
    if (use_x) q += static_cast<int>(ds.dx());
    return q;
}

namespace {

std::vector<Eigen::Index> sort_order(const Eigen::VectorXd& y) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(y.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return y[a] < y[b]; });
    return order;
}

// Tied observations form one group; the product-limit walk treats every
// member of a group as at risk at the group's time (non-strict convention).
struct Groups {
    std::vector<Eigen::Index> start; // offsets into the sort order, one per group
    std::vector<int> group_of;       // observation -> group index

    static Groups build(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& order) {
        Groups g;
        g.group_of.resize(static_cast<std::size_t>(y.size()));
        const Eigen::Index n = y.size();
        Eigen::Index pos = 0;
        while (pos < n) {
            g.start.push_back(pos);
            const double t = y[order[static_cast<std::size_t>(pos)]];
            while (pos < n && y[order[static_cast<std::size_t>(pos)]] == t) {
                g.group_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] =
                    static_cast<int>(g.start.size()) - 1;
                ++pos;
            }
        }
        g.start.push_back(n); // sentinel
        return g;
    }

    std::size_t count() const { return start.size() - 1; }
};

// Product-limit survival of the censoring time at `y_cut`, given one weight
// vector over the sample. Walks groups in ascending time; the running value
// after a group is the right-continuous survival at that group's time.
double product_limit_at(const Eigen::Ref<const Eigen::VectorXd>& w,
                        const Eigen::VectorXd& y, const Eigen::VectorXd& delta,
                        const std::vector<Eigen::Index>& order, const Groups& groups,
                        double y_cut) {
    double at_risk = w.sum();
    double surv = 1.0;
    for (std::size_t g = 0; g < groups.count(); ++g) {
        const Eigen::Index lo = groups.start[g];
        const Eigen::Index hi = groups.start[g + 1];
        const double t = y[order[static_cast<std::size_t>(lo)]];
        if (t > y_cut) break;
        double group_w = 0.0;
        for (Eigen::Index p = lo; p < hi; ++p) {
            const Eigen::Index k = order[static_cast<std::size_t>(p)];
            group_w += w[k];
            if (delta[k] == 0.0 && at_risk > 0.0) {
                double factor = 1.0 - w[k] / at_risk;
                factor = std::clamp(factor, 0.0, 1.0);
                surv *= factor;
            }
        }
        at_risk -= group_w;
    }
    return surv;
}

} // namespace

CensoringModel trivial_censoring_model(const Dataset& ds) {
    CensoringModel m;
    m.y = ds.y;
    m.delta = ds.delta;
    m.ghat = Eigen::VectorXd::Ones(ds.n());
    m.order = sort_order(ds.y);
    m.trivial = true;
    return m;
}

CensoringModel fit_local_km(const Dataset& ds, const Conditioning& cond,
                            const KernelSpec& spec, double eps_g) {
    if (!(eps_g > 0.0 && eps_g < 1.0)) throw usage_error("eps_g must lie in (0, 1)");
    CensoringModel m;
    m.y = ds.y;
    m.delta = ds.delta;
    m.cond = cond.extract(ds);
    m.spec = spec;
    m.spec.dim = static_cast<int>(m.cond.cols());
    m.eps_g = eps_g;
    m.order = sort_order(ds.y);

    // Weight matrix in column layout: column i holds the weights of all
    // observations in the neighborhood of observation i. Column access is
    // what every later per-observation pass wants. Columns are rescaled from
    // probability vectors to mean one (sum n): the augmentation and variance
    // formulas average B against the sample with an explicit 1/n, and the
    // product-limit estimator is ratio-invariant, so this is the scale at
    // which one column carries the influence of one observation.
    m.B = nw_weight_matrix(m.cond, m.spec);
    m.B.transposeInPlace();
    m.B *= static_cast<double>(ds.n());

    const Groups groups = Groups::build(m.y, m.order);
    const Eigen::Index n = ds.n();
    m.ghat.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double surv = product_limit_at(m.B.col(i), m.y, m.delta, m.order, groups, m.y[i]);
        m.ghat[i] = std::max(surv, eps_g);
    }
    return m;
}

double g_eval(const CensoringModel& model, double y, const Eigen::VectorXd& query) {
    if (model.trivial) return 1.0;
    const Eigen::VectorXd w = nw_weights(model.cond, query, model.spec);
    const Groups groups = Groups::build(model.y, model.order);
    const double surv = product_limit_at(w, model.y, model.delta, model.order, groups, y);
    return std::max(surv, model.eps_g);
}

// ---------------------------------------------------------------------------
// PhiKernel

PhiKernel::PhiKernel(const CensoringModel& model) : model_(&model) {
    if (model.trivial) return;
    const Groups groups = Groups::build(model.y, model.order);
    group_start_ = groups.start;
    group_of_ = groups.group_of;
}

void PhiKernel::column(Eigen::Index i, Eigen::VectorXd& out) const {
    const CensoringModel& m = *model_;
    const Eigen::Index n = m.n();
    out.resize(n);
    if (m.trivial || m.delta.minCoeff() == 1.0) {
        out.setZero();
        return;
    }

    const auto w = m.B.col(i);
    const std::size_t gcount = group_start_.size() - 1;
    const double inv_n = 1.0 / static_cast<double>(n);

    // Weighted at-risk proportion at each group time: suffix sums of the
    // mean-one weights divided by n, so values live in [0, 1] and the
    // eps_g floor below has the same meaning as in the survival fit.
    std::vector<double> at_risk(gcount);
    {
        double acc = 0.0;
        for (std::size_t g = gcount; g-- > 0;) {
            for (Eigen::Index p = group_start_[g]; p < group_start_[g + 1]; ++p) {
                acc += w[m.order[static_cast<std::size_t>(p)]];
            }
            at_risk[g] = acc * inv_n;
        }
    }

    // Cumulative censored jump mass up to and including each group:
    // (1/n) sum of w_k / S(y_k)^2 over censored k, an average against the
    // mean-one weights. Denominators floored at eps_g.
    std::vector<double> cum(gcount);
    {
        double acc = 0.0;
        for (std::size_t g = 0; g < gcount; ++g) {
            const double s = std::max(at_risk[g], m.eps_g);
            for (Eigen::Index p = group_start_[g]; p < group_start_[g + 1]; ++p) {
                const Eigen::Index k = m.order[static_cast<std::size_t>(p)];
                if (m.delta[k] == 0.0) acc += w[k] * inv_n / (s * s);
            }
            cum[g] = acc;
        }
    }

    const int gi = group_of_[static_cast<std::size_t>(i)];
    const double ghat_i = m.ghat[i];
    for (Eigen::Index j = 0; j < n; ++j) {
        const int gj = group_of_[static_cast<std::size_t>(j)];
        double term = 0.0;
        if (m.delta[j] == 0.0 && gj <= gi) {
            term = 1.0 / std::max(at_risk[static_cast<std::size_t>(gj)], m.eps_g);
        }
        const double prefix = cum[static_cast<std::size_t>(std::min(gi, gj))];
        out[j] = w[j] * ghat_i * (term - prefix);
    }
}

Eigen::MatrixXd PhiKernel::dense() const {
    const Eigen::Index n = model_->n();
    Eigen::MatrixXd phi(n, n);
    Eigen::VectorXd col(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        column(i, col);
        phi.col(i) = col;
    }
    return phi;
}

std::vector<Eigen::VectorXd> PhiKernel::apply(
    const std::vector<const Eigen::VectorXd*>& vs) const {
    const Eigen::Index n = model_->n();
    std::vector<Eigen::VectorXd> out(vs.size(), Eigen::VectorXd::Zero(n));
    if (model_->trivial) return out;
    Eigen::VectorXd col(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        bool needed = false;
        for (const auto* v : vs) {
            if ((*v)[i] != 0.0) {
                needed = true;
                break;
            }
        }
        if (!needed) continue; // censored rows carry zero factors throughout
        column(i, col);
        for (std::size_t r = 0; r < vs.size(); ++r) {
            const double vi = (*vs[r])[i];
            if (vi != 0.0) out[r] += vi * col;
        }
    }
    return out;
}

} // namespace civet
