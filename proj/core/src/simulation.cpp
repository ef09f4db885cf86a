#include "civet/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "civet/gel.hpp"
#include "civet/rng.hpp"

namespace civet {

void DgpSpec::validate() const {
    if (n < 2) throw usage_error("simulated sample size must be at least 2");
    if (m < 1) throw usage_error("need at least one instrument");
    if (invalid_case < 1 || invalid_case > 4) {
        throw usage_error(fmt::format("invalid_case must be 1..4, got {}", invalid_case));
    }
    if (censor_target && !(*censor_target > 0.0 && *censor_target < 1.0)) {
        throw usage_error("censor_target must lie strictly between 0 and 1");
    }
    if (!(h2 >= 0.0 && h2 < 1.0)) throw usage_error("h2 must lie in [0, 1)");
    if (!std::isfinite(beta0)) throw usage_error("beta0 must be finite");
    if (!(theta >= 0.0) || !std::isfinite(theta)) {
        throw usage_error("theta must be finite and non-negative");
    }
}

namespace {

constexpr int kCovariates = 5;

// Instruments with structural signal: the first five under the nonlinear
// shape, all of them under the linear shape.
int active_count(const DgpSpec& spec) {
    return spec.shape == NuisanceShape::linear ? spec.m : std::min(spec.m, kCovariates);
}

struct DgpCoefs {
    Eigen::VectorXd xi_a;    // direct exposure effects, active instruments
    Eigen::VectorXd xi_y;    // direct outcome effects after case assignment
    Eigen::VectorXd upsilon; // variance loadings, all instruments
    Eigen::VectorXd mu_a, mu_t; // misspecification loadings, all instruments
};

Eigen::VectorXd draw_normal(std::mt19937_64& rng, Eigen::Index count, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    Eigen::VectorXd out(count);
    for (Eigen::Index i = 0; i < count; ++i) out[i] = dist(rng);
    return out;
}

// Every stream is drawn in full for every case so that two specs differing
// only in invalid_case (or in theta, or heteroscedastic) share all their
// draws; the case only changes how the draws are combined.
DgpCoefs draw_coefs(const DgpSpec& spec) {
    const int active = active_count(spec);
    const double coef_sd = std::sqrt(0.4 * (1.0 - spec.h2));
    const double load_sd = std::sqrt(spec.h2 / (1.5 * static_cast<double>(spec.m)));

    DgpCoefs c;
    {
        auto rng = substream(spec.seed, "xiA");
        c.xi_a = draw_normal(rng, active, coef_sd);
    }
    Eigen::VectorXd xi_y_raw;
    {
        auto rng = substream(spec.seed, "xiY");
        xi_y_raw = draw_normal(rng, active, coef_sd);
    }
    {
        auto rng = substream(spec.seed, "upsilon");
        c.upsilon = draw_normal(rng, spec.m, load_sd);
        if (!spec.heteroscedastic) c.upsilon.setZero();
    }
    {
        auto rng = substream(spec.seed, "muA");
        c.mu_a = draw_normal(rng, spec.m, load_sd);
    }
    {
        auto rng = substream(spec.seed, "muT");
        c.mu_t = draw_normal(rng, spec.m, load_sd);
    }

    // Validity mix over the active instruments: first the valid block, then
    // instruments violating exclusion independently, then violations
    // correlated with the exposure effect.
    double p1 = 1.0, p2 = 0.0;
    switch (spec.invalid_case) {
        case 1: p1 = 1.0; p2 = 0.0; break;
        case 2: p1 = 0.6; p2 = 0.2; break;
        case 3: p1 = 0.1; p2 = 0.9; break;
        case 4: p1 = 0.1; p2 = 0.0; break;
    }
    const int n1 = static_cast<int>(std::lround(p1 * active));
    const int n2 = std::min(active - n1, static_cast<int>(std::lround(p2 * active)));
    c.xi_y = Eigen::VectorXd::Zero(active);
    for (int j = n1; j < n1 + n2; ++j) c.xi_y[j] = xi_y_raw[j];
    for (int j = n1 + n2; j < active; ++j) c.xi_y[j] = c.xi_a[j] / 2.0;
    return c;
}

struct PopulationDraw {
    Eigen::MatrixXd x, z;
    Eigen::VectorXd a, t; // t: latent log event time
};

PopulationDraw draw_population(const DgpSpec& spec, const DgpCoefs& coefs, Eigen::Index count,
                               std::uint64_t master) {
    const int active = active_count(spec);
    const double pi = 3.14159265358979323846;

    PopulationDraw pop;
    pop.x.resize(count, kCovariates);
    {
        auto rng = substream(master, "X");
        std::uniform_real_distribution<double> unif(-2.0, 2.0);
        for (int j = 0; j < kCovariates; ++j) {
            for (Eigen::Index i = 0; i < count; ++i) pop.x(i, j) = unif(rng);
        }
    }

    pop.z.resize(count, spec.m);
    {
        auto rng = substream(master, "Znoise");
        std::uniform_real_distribution<double> unif(-2.0, 2.0);
        std::normal_distribution<double> noise(0.0, std::sqrt(0.4));
        for (int j = 0; j < spec.m; ++j) {
            const bool structural = spec.shape == NuisanceShape::nonlinear && j < active;
            for (Eigen::Index i = 0; i < count; ++i) {
                if (!structural) {
                    pop.z(i, j) = unif(rng);
                    continue;
                }
                const double x1 = pop.x(i, 0), x2 = pop.x(i, 1);
                double signal = 0.0;
                switch (j) {
                    case 0: signal = std::cos(pi * x1); break;
                    case 1: signal = (x1 + 1.0) * (x2 - 1.0); break;
                    case 2: signal = x1 + x2; break;
                    case 3: signal = (x2 - 0.5) * (x2 - 0.5); break;
                    case 4: signal = std::sin(x1 + x2); break;
                }
                pop.z(i, j) = signal + noise(rng);
            }
        }
    }

    const double noise_sd = std::sqrt(0.4 * (1.0 - spec.h2));
    Eigen::VectorXd u, eps_a, eps_t;
    {
        auto rng = substream(master, "U");
        u = draw_normal(rng, count, std::sqrt(0.6 * (1.0 - spec.h2)));
    }
    {
        auto rng = substream(master, "epsA");
        eps_a = draw_normal(rng, count, noise_sd);
    }
    {
        auto rng = substream(master, "epsT");
        eps_t = draw_normal(rng, count, noise_sd);
    }

    // Structural pieces. alpha1/gamma1 carry the instrument effects,
    // alpha2/gamma2 the covariate effects.
    Eigen::VectorXd alpha1 = Eigen::VectorXd::Zero(count);
    Eigen::VectorXd gamma1 = Eigen::VectorXd::Zero(count);
    if (spec.shape == NuisanceShape::nonlinear) {
        for (int j = 0; j < active; ++j) {
            const Eigen::ArrayXd basis = (pi * pop.z.col(j).array()).cos();
            alpha1.array() += coefs.xi_a[j] * basis;
            gamma1.array() += coefs.xi_y[j] * basis;
        }
    } else {
        alpha1 = pop.z.leftCols(active) * coefs.xi_a;
        gamma1 = pop.z.leftCols(active) * coefs.xi_y;
    }

    Eigen::VectorXd alpha2 = Eigen::VectorXd::Zero(count);
    Eigen::VectorXd gamma2(count);
    if (spec.shape == NuisanceShape::nonlinear) {
        const Eigen::ArrayXd x1 = pop.x.col(0).array();
        const Eigen::ArrayXd x2 = pop.x.col(1).array();
        const Eigen::ArrayXd x345 = pop.x.col(2).array() + pop.x.col(3).array() + pop.x.col(4).array();
        const Eigen::ArrayXd xsum = pop.x.rowwise().sum().array();
        alpha2 = (2.0 * (((x1 + x2 + 1.0).sin() + (x345 + 1.0).sin()).sin() + (xsum + 1.0).sin())
                            .sin())
                     .matrix();
        gamma2 = ((x1.cos() + x1 * x2 + (x345 - 1.0).sin()) / 2.0).matrix();
    } else {
        gamma2 = pop.x.rowwise().sum();
    }

    // Confounder scalings: theta > 0 lets U depend on the instruments, which
    // breaks instrument independence (the over-identification alternative).
    Eigen::VectorXd conf_a = Eigen::VectorXd::Ones(count);
    Eigen::VectorXd conf_t = Eigen::VectorXd::Ones(count);
    if (spec.theta != 0.0) {
        conf_a += spec.theta * (pop.z * coefs.mu_a);
        conf_t += spec.theta * (pop.z * coefs.mu_t);
    }

    const Eigen::VectorXd vol = Eigen::VectorXd::Ones(count) + pop.z * coefs.upsilon;
    pop.a = alpha1 + alpha2 + conf_a.cwiseProduct(u) + vol.cwiseProduct(eps_a);
    pop.t = spec.beta0 * pop.a + gamma1 + gamma2 - conf_t.cwiseProduct(u) + eps_t;
    return pop;
}

} // namespace

double calibrate_tau(const DgpSpec& spec) {
    spec.validate();
    if (!spec.censor_target) {
        throw usage_error("calibrate_tau needs a censoring target on the spec");
    }
    const double target = *spec.censor_target;
    const DgpCoefs coefs = draw_coefs(spec);
    const std::uint64_t pre_master = substream_seed(spec.seed, "presample");
    const Eigen::Index pre_n = 50000;
    const PopulationDraw pre = draw_population(spec, coefs, pre_n, pre_master);

    Eigen::VectorXd c0(pre_n);
    {
        auto rng = substream(pre_master, "C");
        std::uniform_real_distribution<double> unif(-3.0, 3.0);
        for (Eigen::Index i = 0; i < pre_n; ++i) c0[i] = unif(rng);
    }

    // Censoring rate at window offset tau; strictly later censoring times
    // mean fewer censored observations, so the rate decreases in tau.
    auto rate_at = [&](double tau) {
        Eigen::Index censored = 0;
        for (Eigen::Index i = 0; i < pre_n; ++i) {
            if (pre.t[i] > c0[i] + tau) ++censored;
        }
        return static_cast<double>(censored) / static_cast<double>(pre_n);
    };

    double lo = -10.0, hi = 10.0;
    if (rate_at(lo) < target || rate_at(hi) > target) {
        throw numeric_error(fmt::format(
            "censoring target {} is outside the achievable range of the window offset", target));
    }
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (rate_at(mid) > target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double tau = 0.5 * (lo + hi);
    if (std::abs(rate_at(tau) - target) > 0.005) {
        throw numeric_error(fmt::format(
            "bisection stalled: achieved censoring rate {} vs target {}", rate_at(tau), target));
    }
    return tau;
}

std::pair<Dataset, double> gen_dataset(const DgpSpec& spec) {
    spec.validate();
    const DgpCoefs coefs = draw_coefs(spec);
    const PopulationDraw pop = draw_population(spec, coefs, spec.n, spec.seed);

    Dataset ds;
    ds.x = pop.x;
    ds.z = pop.z;
    ds.a = pop.a;
    if (spec.censor_target) {
        const double tau = calibrate_tau(spec);
        auto rng = substream(spec.seed, "C");
        std::uniform_real_distribution<double> unif(-3.0 + tau, 3.0 + tau);
        ds.y.resize(spec.n);
        ds.delta.resize(spec.n);
        for (Eigen::Index i = 0; i < spec.n; ++i) {
            const double c = unif(rng);
            ds.y[i] = std::min(pop.t[i], c);
            ds.delta[i] = pop.t[i] <= c ? 1.0 : 0.0;
        }
    } else {
        ds.y = pop.t;
        ds.delta = Eigen::VectorXd::Ones(spec.n);
    }
    ds.validate();
    return {std::move(ds), spec.beta0};
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

namespace {

// Two estimator configs can share one nuisance/censoring pipeline when all
// the fields that feed it agree; the rho family and interval level only
// enter afterwards.
bool same_pipeline(const EstimatorConfig& a, const EstimatorConfig& b) {
    const LearnerSpec &la = a.options.learner, &lb = b.options.learner;
    const bool learner_equal =
        la.kind == lb.kind && la.depth == lb.depth && la.width == lb.width &&
        la.learning_rate == lb.learning_rate && la.batch_size == lb.batch_size &&
        la.max_epochs == lb.max_epochs && la.val_fraction == lb.val_fraction &&
        la.patience == lb.patience;
    const Conditioning &ca = a.options.conditioning, &cb = b.options.conditioning;
    return learner_equal && ca.use_a == cb.use_a && ca.use_z == cb.use_z &&
           ca.use_x == cb.use_x && a.options.kernel_order == b.options.kernel_order &&
           a.options.bandwidth == b.options.bandwidth &&
           a.options.bandwidth_c == b.options.bandwidth_c && a.options.eps_g == b.options.eps_g;
}

std::vector<std::vector<std::size_t>> group_estimators(
    const std::vector<EstimatorConfig>& estimators) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
        bool placed = false;
        for (auto& g : groups) {
            if (same_pipeline(estimators[g.front()], estimators[e])) {
                g.push_back(e);
                placed = true;
                break;
            }
        }
        if (!placed) groups.push_back({e});
    }
    return groups;
}

std::vector<ReplicateRecord> run_replicate(const DgpSpec& base, int rep,
                                           const std::vector<EstimatorConfig>& estimators,
                                           const std::vector<std::vector<std::size_t>>& groups) {
    std::vector<ReplicateRecord> recs(estimators.size());
    for (std::size_t e = 0; e < estimators.size(); ++e) {
        recs[e].rep = rep;
        recs[e].label = estimators[e].label;
    }
    auto fail_all = [&](const std::string& msg) {
        for (auto& r : recs) {
            r.ok = false;
            r.error = msg;
        }
    };

    DgpSpec rspec = base;
    rspec.seed = base.seed + static_cast<std::uint64_t>(rep);

    Dataset raw;
    double beta0 = 0.0;
    try {
        std::tie(raw, beta0) = gen_dataset(rspec);
    } catch (const std::exception& ex) {
        fail_all(fmt::format("data generation failed: {}", ex.what()));
        return recs;
    }

    Dataset ds;
    ScalingRecord scaling;
    try {
        std::tie(ds, scaling) = standardize(raw);
    } catch (const std::exception& ex) {
        fail_all(fmt::format("standardization failed: {}", ex.what()));
        return recs;
    }

    for (const auto& group : groups) {
        // Shared pipeline for the group: nuisances, censoring fit, moments,
        // influence kernel, weak-identification diagnostic.
        NuisanceBundle bundle;
        CensoringModel cens;
        MomentMatrices mm;
        WeakIdResult wk;
        try {
            AnalysisOptions opts = estimators[group.front()].options;
            opts.learner.seed = rspec.seed;
            bundle = fit_nuisance_bundle(ds, opts.learner);
            if (ds.fully_observed()) {
                cens = trivial_censoring_model(ds);
            } else {
                const int q = opts.conditioning.dim(ds);
                KernelSpec kspec;
                kspec.dim = q;
                kspec.order = opts.kernel_order > 0 ? opts.kernel_order : kernel_order_for(q);
                kspec.bandwidth = opts.bandwidth > 0.0
                                      ? opts.bandwidth
                                      : default_bandwidth(ds.n(), q, opts.bandwidth_c);
                cens = fit_local_km(ds, opts.conditioning, kspec, opts.eps_g);
            }
            mm = build_moments(ds, bundle, cens);
            wk = weak_id_f(ds, bundle);
        } catch (const std::exception& ex) {
            for (std::size_t e : group) {
                recs[e].ok = false;
                recs[e].error = fmt::format("shared pipeline failed: {}", ex.what());
            }
            continue;
        }
        const PhiKernel phik(cens);

        for (std::size_t e : group) {
            ReplicateRecord& rec = recs[e];
            rec.f_mawii = wk.f;
            try {
                const EstimatorConfig& est = estimators[e];
                if (est.closed_form) {
                    rec.beta_hat = closed_form_beta_pooled(mm) / scaling.a_spread;
                    rec.ok = true;
                    continue;
                }
                GelOptions gopt;
                gopt.family = est.options.family;
                gopt.beta_lo = est.options.beta_lo;
                gopt.beta_hi = est.options.beta_hi;
                const GelFit fit = estimate_beta(mm, gopt);
                const VarianceComponents vc = variance_components(fit, ds, mm, cens, phik);
                const IntervalEstimate ie =
                    standard_error(vc, fit.beta_hat, ds.n(), est.options.alpha);
                rec.beta_hat = fit.beta_hat / scaling.a_spread;
                rec.se = ie.se / scaling.a_spread;
                const double lo = ie.ci_lo / scaling.a_spread;
                const double hi = ie.ci_hi / scaling.a_spread;
                rec.covered = lo <= beta0 && beta0 <= hi;
                if (ds.m() >= 2) {
                    rec.overid_p = overid_test(fit, ds, mm, cens, phik).p_value;
                }
                rec.ok = true;
            } catch (const std::exception& ex) {
                rec.ok = false;
                rec.error = ex.what();
            }
        }
    }
    return recs;
}

} // namespace

MonteCarloResult monte_carlo(const DgpSpec& spec, int reps,
                             const std::vector<EstimatorConfig>& estimators, int workers,
                             const std::function<void(int)>& progress) {
    spec.validate();
    if (reps < 1) throw usage_error("need at least one replicate");
    if (estimators.empty()) throw usage_error("need at least one estimator configuration");

    const auto groups = group_estimators(estimators);

    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    int nw = workers > 0 ? std::min<int>(workers, static_cast<int>(hw)) : static_cast<int>(hw);
    nw = std::min(nw, reps);

    std::vector<std::vector<ReplicateRecord>> slots(static_cast<std::size_t>(reps));
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    std::mutex progress_mutex;

    auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= reps) return;
            slots[static_cast<std::size_t>(r)] = run_replicate(spec, r, estimators, groups);
            const int completed = done.fetch_add(1) + 1;
            if (progress) {
                std::lock_guard<std::mutex> lock(progress_mutex);
                progress(completed);
            }
        }
    };

    if (nw <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(nw));
        for (int t = 0; t < nw; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    MonteCarloResult result;
    result.records.reserve(static_cast<std::size_t>(reps) * estimators.size());
    for (const auto& slot : slots) {
        for (const auto& rec : slot) result.records.push_back(rec);
    }

    for (std::size_t e = 0; e < estimators.size(); ++e) {
        MetricsRow row;
        row.label = estimators[e].label;
        std::vector<double> betas, ses;
        int covered = 0, overid_n = 0, overid_reject = 0;
        for (const auto& rec : result.records) {
            if (rec.label != row.label) continue;
            if (!rec.ok) {
                ++row.reps_failed;
                continue;
            }
            ++row.reps_ok;
            betas.push_back(rec.beta_hat);
            ses.push_back(rec.se);
            if (rec.covered) ++covered;
            if (rec.overid_p) {
                ++overid_n;
                if (*rec.overid_p < 0.05) ++overid_reject;
            }
        }
        if (row.reps_failed > reps / 10) {
            throw numeric_error(fmt::format(
                "estimator '{}' failed on {} of {} replicates (more than 10%)", row.label,
                row.reps_failed, reps));
        }
        if (!betas.empty()) {
            const double mean_beta =
                std::accumulate(betas.begin(), betas.end(), 0.0) / betas.size();
            row.bias_pct = (mean_beta - spec.beta0) / spec.beta0 * 100.0;
            if (betas.size() > 1) {
                double ss = 0.0;
                for (double b : betas) ss += (b - mean_beta) * (b - mean_beta);
                row.sd = std::sqrt(ss / (betas.size() - 1.0));
            }
            row.se_mean = std::accumulate(ses.begin(), ses.end(), 0.0) / ses.size();
            row.cp = static_cast<double>(covered) / static_cast<double>(row.reps_ok);
            if (overid_n > 0) {
                row.rejection_rate =
                    static_cast<double>(overid_reject) / static_cast<double>(overid_n);
            }
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_metrics_csv(const MonteCarloResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw usage_error(fmt::format("cannot open '{}' for writing", path));
    out << "label,bias_pct,sd,se_mean,cp,rejection_rate,reps_ok,reps_failed\n";
    for (const auto& row : result.rows) {
        out << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},{},{},{}\n", row.label,
                           row.bias_pct, row.sd, row.se_mean, row.cp,
                           row.rejection_rate ? fmt::format("{:.10g}", *row.rejection_rate) : "",
                           row.reps_ok, row.reps_failed);
    }
    if (!out.good()) throw data_error(fmt::format("short write to '{}'", path));
}

void write_metrics_json(const MonteCarloResult& result, const std::string& path,
                        const std::string& config_echo_json) {
    nlohmann::json doc;
    doc["config"] = nlohmann::json::parse(config_echo_json);
    doc["rows"] = nlohmann::json::array();
    for (const auto& row : result.rows) {
        nlohmann::json r{{"label", row.label},       {"bias_pct", row.bias_pct},
                         {"sd", row.sd},             {"se_mean", row.se_mean},
                         {"cp", row.cp},             {"reps_ok", row.reps_ok},
                         {"reps_failed", row.reps_failed}};
        if (row.rejection_rate) r["rejection_rate"] = *row.rejection_rate;
        doc["rows"].push_back(std::move(r));
    }
    doc["records"] = nlohmann::json::array();
    for (const auto& rec : result.records) {
        nlohmann::json r{{"rep", rec.rep},   {"label", rec.label},   {"ok", rec.ok},
                         {"beta_hat", rec.beta_hat}, {"se", rec.se}, {"covered", rec.covered},
                         {"f_mawii", rec.f_mawii}};
        if (rec.overid_p) r["overid_p"] = *rec.overid_p;
        if (!rec.error.empty()) r["error"] = rec.error;
        doc["records"].push_back(std::move(r));
    }
    std::ofstream out(path);
    if (!out) throw usage_error(fmt::format("cannot open '{}' for writing", path));
    out << doc.dump(2) << "\n";
    if (!out.good()) throw data_error(fmt::format("short write to '{}'", path));
}

} // namespace civet
