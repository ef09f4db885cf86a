// main.cpp: the `civet` command-line tool.
//
// Three subcommands: `estimate` runs the full pipeline on a CSV and writes an
// inference report, `simulate` drives the Monte Carlo harness, `diagnose`
// computes the weak-identification diagnostic (optionally with scatter data
// for residual-variance plots). Configuration is a flat key=value file plus
// --set overrides; overrides win, unknown keys are rejected. All randomness
// descends from one master seed, which every output repeats.
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "civet/dataset.hpp"
#include "civet/errors.hpp"
#include "civet/gel.hpp"
#include "civet/inference.hpp"
#include "civet/simulation.hpp"
#include "config.hpp"

namespace {

using civet::cli::Config;
using nlohmann::json;

std::vector<std::string> split_header(const std::string& line) {
    std::vector<std::string> out;
    std::string token;
    for (char c : line) {
        if (c == ',') {
            out.push_back(token);
            token.clear();
        } else if (c != '\r') {
            token += c;
        }
    }
    out.push_back(token);
    return out;
}

// Columns named like z1, z2, ... (or x1, x2, ...) in file order of their
// numeric suffix. Used when the config does not spell the schema out.
std::vector<std::string> detect_columns(const std::string& path, char prefix) {
    std::ifstream in(path);
    if (!in) throw civet::usage_error(fmt::format("cannot open data file '{}'", path));
    std::string header;
    if (!std::getline(in, header)) {
        throw civet::data_error(fmt::format("data file '{}' is empty", path));
    }
    std::vector<std::pair<long, std::string>> found;
    for (const std::string& name : split_header(header)) {
        if (name.size() < 2 || name[0] != prefix) continue;
        bool digits = true;
        for (std::size_t k = 1; k < name.size(); ++k) {
            if (!std::isdigit(static_cast<unsigned char>(name[k]))) {
                digits = false;
                break;
            }
        }
        if (digits) found.emplace_back(std::stol(name.substr(1)), name);
    }
    std::sort(found.begin(), found.end());
    std::vector<std::string> out;
    out.reserve(found.size());
    for (auto& [num, name] : found) {
        (void)num;
        out.push_back(std::move(name));
    }
    return out;
}

std::vector<std::string> parse_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string token;
    auto flush = [&]() {
        std::string t = token;
        const auto a = t.find_first_not_of(" \t");
        const auto b = t.find_last_not_of(" \t");
        if (a != std::string::npos) out.push_back(t.substr(a, b - a + 1));
        token.clear();
    };
    for (char c : csv) {
        if (c == ',') {
            flush();
        } else {
            token += c;
        }
    }
    flush();
    return out;
}

civet::CsvSchema schema_from_config(const Config& cfg, const std::string& data_path) {
    civet::CsvSchema schema;
    schema.y = cfg.get_string("y", "y");
    schema.delta = cfg.get_string("delta", "delta");
    schema.a = cfg.get_string("a", "a");
    const std::string z = cfg.get_string("z", "");
    const std::string x = cfg.get_string("x", "");
    schema.z = z.empty() ? detect_columns(data_path, 'z') : parse_list(z);
    schema.x = x.empty() ? detect_columns(data_path, 'x') : parse_list(x);
    if (schema.z.empty()) {
        throw civet::usage_error(
            "no instrument columns: set key 'z' or name them z1, z2, ... in the header");
    }
    return schema;
}

civet::LearnerSpec learner_from_config(const Config& cfg, std::uint64_t seed) {
    civet::LearnerSpec spec;
    const std::string kind = cfg.get_string("learner", "linear");
    if (kind == "linear") {
        spec.kind = civet::LearnerSpec::Kind::linear;
    } else if (kind == "feedforward") {
        spec.kind = civet::LearnerSpec::Kind::feedforward;
    } else {
        throw civet::usage_error(
            fmt::format("learner must be 'linear' or 'feedforward', got '{}'", kind));
    }
    spec.depth = static_cast<int>(cfg.get_long("depth", spec.depth));
    spec.width = static_cast<int>(cfg.get_long("width", spec.width));
    spec.learning_rate = cfg.get_double("learning_rate", spec.learning_rate);
    spec.batch_size = static_cast<int>(cfg.get_long("batch_size", spec.batch_size));
    spec.max_epochs = static_cast<int>(cfg.get_long("max_epochs", spec.max_epochs));
    spec.val_fraction = cfg.get_double("val_fraction", spec.val_fraction);
    spec.patience = static_cast<int>(cfg.get_long("patience", spec.patience));
    spec.seed = seed;
    spec.validate();
    return spec;
}

civet::AnalysisOptions options_from_config(const Config& cfg, std::uint64_t seed) {
    civet::AnalysisOptions opt;
    opt.learner = learner_from_config(cfg, seed);
    opt.family = civet::rho_family_from_name(cfg.get_string("family", "et"));
    opt.conditioning.use_a = cfg.get_bool("cond_a", true);
    opt.conditioning.use_z = cfg.get_bool("cond_z", false);
    opt.conditioning.use_x = cfg.get_bool("cond_x", true);
    opt.kernel_order = static_cast<int>(cfg.get_long("kernel_order", 0));
    opt.bandwidth = cfg.get_double("bandwidth", 0.0);
    opt.bandwidth_c = cfg.get_double("bandwidth_c", 1.0);
    opt.eps_g = cfg.get_double("eps_g", 0.05);
    opt.beta_lo = cfg.get_double("beta_lo", -10.0);
    opt.beta_hi = cfg.get_double("beta_hi", 10.0);
    opt.alpha = cfg.get_double("alpha", 0.05);
    return opt;
}

json report_to_json(const civet::InferenceReport& rep) {
    json j{{"beta_hat", rep.beta_hat}, {"se", rep.se},       {"ci_lo", rep.ci_lo},
           {"ci_hi", rep.ci_hi},       {"H", rep.h_hat},     {"V1", rep.v1_hat},
           {"V2", rep.v2_hat},         {"f_mawii", rep.f_mawii},
           {"weak_flag", rep.weak_flag}, {"family", rep.family},
           {"n", rep.n},               {"m", rep.m}};
    if (rep.v3_hat) {
        j["V3"] = *rep.v3_hat;
        j["overid_stat"] = *rep.overid_stat;
        j["overid_p"] = *rep.overid_p;
    } else {
        j["overid_note"] = "exactly identified";
    }
    return j;
}

void write_json_file(const json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw civet::usage_error(fmt::format("cannot open '{}' for writing", path));
    out << doc.dump(2) << "\n";
    if (!out.good()) throw civet::data_error(fmt::format("short write to '{}'", path));
}

int cmd_estimate(const Config& cfg) {
    const std::string data = cfg.get_string("data", "");
    if (data.empty()) {
        throw civet::usage_error("estimate needs an input CSV (key 'data' or --data)");
    }
    const auto seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
    const civet::AnalysisOptions opt = options_from_config(cfg, seed);
    const civet::CsvSchema schema = schema_from_config(cfg, data);
    const std::string out_dir = cfg.get_string("out", ".");
    const std::string report_path = cfg.get_string("report", out_dir + "/report.json");
    cfg.reject_unknown();

    const civet::Dataset ds = civet::load_csv(data, schema);
    const civet::InferenceReport rep = civet::analyze(ds, opt);

    fmt::print("beta_hat   {:.6g}\n", rep.beta_hat);
    fmt::print("se         {:.6g}\n", rep.se);
    fmt::print("ci{:<2.0f}       [{:.6g}, {:.6g}]\n", (1.0 - opt.alpha) * 100.0, rep.ci_lo,
               rep.ci_hi);
    fmt::print("H          {:.6g}\n", rep.h_hat);
    fmt::print("V1         {:.6g}\n", rep.v1_hat);
    fmt::print("V2         {:.6g}\n", rep.v2_hat);
    if (rep.overid_stat) {
        fmt::print("overid     stat {:.6g}  p {:.4g}  V3 {:.6g}\n", *rep.overid_stat,
                   *rep.overid_p, *rep.v3_hat);
    } else {
        fmt::print("overid     exactly identified (m = 1)\n");
    }
    fmt::print("F          {:.6g}  identification: {}\n", rep.f_mawii,
               rep.weak_flag ? "weak (F <= 2)" : "adequate (F > 2)");
    fmt::print("family     {}    n {}    m {}\n", rep.family, rep.n, rep.m);
    fmt::print("seed       {}\n", seed);

    json doc;
    doc["config"] = json(cfg.resolved());
    doc["report"] = report_to_json(rep);
    write_json_file(doc, report_path);
    fmt::print("report     {}\n", report_path);
    return 0;
}

int cmd_simulate(const Config& cfg) {
    civet::DgpSpec spec;
    spec.n = cfg.get_long("n", 4000);
    spec.m = static_cast<int>(cfg.get_long("m", 10));
    const std::string shape = cfg.get_string("shape", "nonlinear");
    if (shape == "linear") {
        spec.shape = civet::NuisanceShape::linear;
    } else if (shape == "nonlinear") {
        spec.shape = civet::NuisanceShape::nonlinear;
    } else {
        throw civet::usage_error(
            fmt::format("shape must be 'linear' or 'nonlinear', got '{}'", shape));
    }
    spec.invalid_case = static_cast<int>(cfg.get_long("case", 1));
    const double censoring = cfg.get_double("censoring", 0.0);
    if (censoring > 0.0) spec.censor_target = censoring;
    spec.beta0 = cfg.get_double("beta0", 0.4);
    spec.h2 = cfg.get_double("h2", 0.2);
    spec.theta = cfg.get_double("theta", 0.0);
    spec.heteroscedastic = cfg.get_bool("heteroscedastic", true);
    spec.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));

    const int reps = static_cast<int>(cfg.get_long("reps", 100));
    const int workers = static_cast<int>(cfg.get_long("workers", 0));
    const civet::AnalysisOptions base = options_from_config(cfg, spec.seed);

    // Estimator tokens: family[:learner] with families el/et/cue plus
    // `ratio` for the closed-form ratio-of-means reference.
    std::vector<civet::EstimatorConfig> estimators;
    for (const std::string& token : parse_list(cfg.get_string("estimators", "et"))) {
        civet::EstimatorConfig est;
        est.label = token;
        est.options = base;
        std::string family = token;
        const auto colon = token.find(':');
        if (colon != std::string::npos) {
            family = token.substr(0, colon);
            const std::string kind = token.substr(colon + 1);
            if (kind == "linear") {
                est.options.learner.kind = civet::LearnerSpec::Kind::linear;
            } else if (kind == "feedforward") {
                est.options.learner.kind = civet::LearnerSpec::Kind::feedforward;
            } else {
                throw civet::usage_error(fmt::format(
                    "estimator '{}': learner must be 'linear' or 'feedforward'", token));
            }
        }
        if (family == "ratio") {
            est.closed_form = true;
        } else {
            est.options.family = civet::rho_family_from_name(family);
        }
        estimators.push_back(std::move(est));
    }

    const std::string out_dir = cfg.get_string("out", ".");
    const std::string csv_path = cfg.get_string("metrics_csv", out_dir + "/metrics.csv");
    const std::string json_path = cfg.get_string("metrics_json", out_dir + "/metrics.json");
    cfg.reject_unknown();

    auto progress = [reps](int done) {
        fmt::print(stderr, "\r{}/{} replicates", done, reps);
        if (done == reps) fmt::print(stderr, "\n");
        std::fflush(stderr);
    };
    const civet::MonteCarloResult result =
        civet::monte_carlo(spec, reps, estimators, workers, progress);

    fmt::print("{:<18} {:>9} {:>9} {:>9} {:>7} {:>8} {:>5} {:>6}\n", "estimator", "bias_pct",
               "sd", "se_mean", "cp", "reject", "ok", "failed");
    for (const auto& row : result.rows) {
        fmt::print("{:<18} {:>9.3f} {:>9.4f} {:>9.4f} {:>7.3f} {:>8} {:>5} {:>6}\n", row.label,
                   row.bias_pct, row.sd, row.se_mean, row.cp,
                   row.rejection_rate ? fmt::format("{:.3f}", *row.rejection_rate) : "-",
                   row.reps_ok, row.reps_failed);
    }
    fmt::print("seed       {}\n", spec.seed);

    civet::write_metrics_csv(result, csv_path);
    civet::write_metrics_json(result, json_path, json(cfg.resolved()).dump());
    fmt::print("metrics    {}  {}\n", csv_path, json_path);
    return 0;
}

int cmd_diagnose(const Config& cfg) {
    const std::string data = cfg.get_string("data", "");
    if (data.empty()) {
        throw civet::usage_error("diagnose needs an input CSV (key 'data' or --data)");
    }
    const auto seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
    const civet::LearnerSpec learner = learner_from_config(cfg, seed);
    const civet::CsvSchema schema = schema_from_config(cfg, data);
    const auto scatter_path = cfg.maybe_string("scatter");
    cfg.reject_unknown();

    const civet::Dataset raw = civet::load_csv(data, schema);
    const auto [ds, scaling] = civet::standardize(raw);
    (void)scaling;
    const civet::NuisanceBundle bundle = civet::fit_nuisance_bundle(ds, learner);
    const civet::WeakIdResult wk = civet::weak_id_f(ds, bundle);

    fmt::print("F          {:.6g}\n", wk.f);
    fmt::print("weak       {}\n", wk.weak ? "true (F <= 2)" : "false (F > 2)");
    fmt::print("n          {}    m {}\n", ds.n(), ds.m());
    fmt::print("seed       {}\n", seed);

    if (scatter_path) {
        const Eigen::MatrixX2d pairs = civet::weak_id_scatter(ds, bundle);
        std::ofstream out(*scatter_path);
        if (!out) {
            throw civet::usage_error(fmt::format("cannot open '{}' for writing", *scatter_path));
        }
        out << "fitted,residual_sq_centered\n";
        for (Eigen::Index i = 0; i < pairs.rows(); ++i) {
            out << fmt::format("{:.17g},{:.17g}\n", pairs(i, 0), pairs(i, 1));
        }
        if (!out.good()) throw civet::data_error(fmt::format("short write to '{}'", *scatter_path));
        fmt::print("scatter    {}\n", *scatter_path);
    }
    return 0;
}

void print_error_json(const char* kind, const std::string& message) {
    json doc{{"error", {{"kind", kind}, {"message", message}}}};
    fmt::print(stderr, "{}\n", doc.dump());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"heteroscedasticity-identified exposure effects for censored outcomes"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_dir, seed_str, workers_str;
    std::vector<std::string> sets;

    auto add_common = [&](CLI::App* sub, bool with_data, bool with_out, bool with_workers) {
        sub->add_option("--config", config_path, "config file with key = value lines");
        sub->add_option("--set", sets, "override one key=value (repeatable)");
        if (with_data) sub->add_option("--data", data_path, "input CSV path");
        if (with_out) sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_str, "master seed");
        if (with_workers) sub->add_option("--workers", workers_str, "parallel replicate workers");
    };

    CLI::App* est = app.add_subcommand("estimate", "estimate the exposure effect from a CSV");
    add_common(est, true, true, false);
    CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo study");
    add_common(sim, false, true, true);
    CLI::App* diag = app.add_subcommand("diagnose", "weak-identification diagnostics for a CSV");
    add_common(diag, true, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help and friends
        print_error_json("usage", e.what());
        return 2;
    }

    try {
        Config cfg = config_path.empty() ? Config{} : Config::from_file(config_path);
        for (const std::string& s : sets) cfg.set_pair(s);
        if (!data_path.empty()) cfg.set("data", data_path);
        if (!out_dir.empty()) cfg.set("out", out_dir);
        if (!seed_str.empty()) cfg.set("seed", seed_str);
        if (!workers_str.empty()) cfg.set("workers", workers_str);

        if (est->parsed()) return cmd_estimate(cfg);
        if (sim->parsed()) return cmd_simulate(cfg);
        if (diag->parsed()) return cmd_diagnose(cfg);
        throw civet::usage_error("no subcommand selected");
    } catch (const civet::Error& e) {
        print_error_json(e.kind_name(), e.what());
        return e.kind() == civet::ErrorKind::usage ? 2 : 1;
    } catch (const std::exception& e) {
        print_error_json("internal", e.what());
        return 1;
    }
}
