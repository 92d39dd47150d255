#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "c2ed2/estimator.hpp"
#include "c2ed2/io.hpp"
#include "c2ed2/montecarlo.hpp"
#include "c2ed2/panel.hpp"

namespace {

using namespace c2ed2;

Eigen::Vector2d parse_pair(const std::string& text, const std::string& flag) {
    auto comma = text.find(',');
    if (comma == std::string::npos)
        throw ValidationError(flag + " expects two comma-separated numbers, got '" +
                              text + "'");
    auto first = detail::parse_double(detail::trim(text.substr(0, comma)));
    auto second = detail::parse_double(detail::trim(text.substr(comma + 1)));
    if (!first || !second)
        throw ValidationError(flag + " expects two comma-separated numbers, got '" +
                              text + "'");
    return {*first, *second};
}

// observed factor series file: one value per line, blank lines and # comments
// ignored, order matching the sorted period labels
Eigen::VectorXd read_series_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open observed-factor file " + path);
    std::vector<double> values;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        auto body = detail::trim(line);
        if (body.empty() || body[0] == '#') continue;
        auto v = detail::parse_double(body);
        if (!v)
            throw ParseError("bad number in " + path + " line " +
                             std::to_string(line_no) + ": '" + body + "'");
        values.push_back(*v);
    }
    return Eigen::Map<Eigen::VectorXd>(values.data(),
                                       static_cast<Eigen::Index>(values.size()));
}

std::vector<ObservedFactorSpec> parse_factor_specs(const std::vector<std::string>& specs) {
    std::vector<ObservedFactorSpec> out;
    for (const auto& raw : specs) {
        auto spec = detail::trim(raw);
        if (spec == "constant")
            out.push_back(ObservedFactorSpec::constant());
        else if (spec == "trend")
            out.push_back(ObservedFactorSpec::trend());
        else if (spec.rfind("file:", 0) == 0) {
            auto path = spec.substr(5);
            out.push_back(ObservedFactorSpec::custom(read_series_file(path), spec));
        } else
            throw ValidationError("unknown observed factor '" + spec +
                                  "' (expected constant, trend, or file:PATH)");
    }
    return out;
}

struct EstimateOptions {
    std::string input;
    CsvSchema schema;
    std::vector<std::string> factor_specs;
    bool groupwise = false;
    bool placebo = false;
    bool force = false;
    std::string format = "text";
    std::string output;
};

int cmd_estimate(const EstimateOptions& opt) {
    auto data = ingest_csv(opt.input, opt.schema);
    auto index = build_group_index(data);
    auto factors_spec = parse_factor_specs(opt.factor_specs);
    auto factors = estimate_factors(data, index, factors_spec);

    EstimateDiagnostics diag;
    diag.validation =
        validate_assumptions(data, index, static_cast<int>(factors_spec.size()));
    diag.n_never = static_cast<int>(index.never_units.size());
    for (const auto& [g, members] : index.treated)
        diag.group_sizes[g] = static_cast<int>(members.size());
    diag.factor_names = factors.column_names;
    diag.groupwise = opt.groupwise;
    diag.forced = opt.force;
    if (!diag.validation.ok() && !opt.force) {
        for (const auto& f : diag.validation.failures) std::cerr << "error: " << f << '\n';
        std::cerr << "use --force to proceed past assumption checks\n";
        return 3;
    }
    for (const auto& w : diag.validation.warnings) std::cerr << "warning: " << w << '\n';
    if (opt.force)
        for (const auto& f : diag.validation.failures)
            std::cerr << "warning (forced past): " << f << '\n';

    auto fit = fit_pretreatment(data, index, factors, opt.groupwise);
    diag.cond_factor_gram = fit.cond_factor_gram;
    diag.cond_slope_gram = fit.cond_slope_gram;
    diag.beta = fit.beta;
    auto table = att_table(data, index, fit, factors, impute(fit, factors, index),
                           {.placebo = opt.placebo});

    std::string rendered;
    if (opt.format == "text")
        rendered = render_att_text(table, &diag);
    else if (opt.format == "csv")
        rendered = render_att_csv(table);
    else
        rendered = att_to_json(table, &diag).dump(2) + "\n";
    write_output(opt.output, rendered);
    return 0;
}

struct SimulateOptions {
    std::string preset;
    std::string config_file;
    int reps = 1000;
    std::uint64_t seed = 0;
    int threads = 0;
    std::optional<int> n, t, g;
    std::optional<double> rho;
    std::optional<std::string> theta, delta, tau;
    std::string format = "text";
    std::string output;
};

// key=value lines mirroring the generator configuration; # starts a comment
void apply_config_file(const std::string& path, DgpConfig& config) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open config file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        auto body = detail::trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(line_no) +
                             " is not key=value: '" + body + "'");
        auto key = detail::trim(body.substr(0, eq));
        auto value = detail::trim(body.substr(eq + 1));
        auto number = [&]() {
            auto v = detail::parse_double(value);
            if (!v)
                throw ParseError("config key " + key + " has a bad number '" + value +
                                 "'");
            return *v;
        };
        if (key == "n_units")
            config.n_units = static_cast<int>(number());
        else if (key == "n_periods")
            config.n_periods = static_cast<int>(number());
        else if (key == "g_treat")
            config.g_treat = static_cast<int>(number());
        else if (key == "treated_fraction")
            config.treated_fraction = number();
        else if (key == "rho")
            config.rho = number();
        else if (key == "theta")
            config.theta = parse_pair(value, "theta");
        else if (key == "delta_g")
            config.delta_g = number();
        else if (key == "tau_g")
            config.tau_g = parse_pair(value, "tau_g");
        else if (key == "seed")
            config.seed = static_cast<std::uint64_t>(number());
        else
            throw ValidationError("unknown config key '" + key + "'");
    }
}

int cmd_simulate(const SimulateOptions& opt) {
    if (opt.reps < 1) throw ValidationError("need at least one replication");
    if (opt.preset.empty() && opt.config_file.empty() && !opt.theta && !opt.delta &&
        !opt.tau)
        throw ValidationError(
            "give --preset table1|table2, a --config file, or scenario parameters "
            "(--theta/--delta/--tau)");

    std::vector<McReport> reports;
    if (!opt.preset.empty()) {
        DgpConfig knobs = preset_config(opt.preset, opt.seed);
        if (opt.n) knobs.n_units = *opt.n;
        if (opt.t) knobs.n_periods = *opt.t;
        if (opt.g) knobs.g_treat = *opt.g;
        if (opt.rho) knobs.rho = *opt.rho;
        const std::vector<EstimatorKind> estimators{
            EstimatorKind::Cce, EstimatorKind::Ols, EstimatorKind::OlsWithCovariates};
        std::uint64_t scenario_slot = 0;
        for (const auto& scenario : effect_scenarios()) {
            DgpConfig config = knobs;
            config.seed = mix64(opt.seed ^ mix64(0x5CEA1A0ull + scenario_slot++));
            config.delta_g = scenario.delta;
            config.tau_g = scenario.tau;
            auto report = run_study(config, estimators, opt.reps, opt.threads);
            report.seed = opt.seed;
            report.scenario = scenario.name;
            reports.push_back(std::move(report));
        }
    } else {
        DgpConfig config;
        if (!opt.config_file.empty()) apply_config_file(opt.config_file, config);
        config.seed = opt.seed;
        if (opt.n) config.n_units = *opt.n;
        if (opt.t) config.n_periods = *opt.t;
        if (opt.g) config.g_treat = *opt.g;
        if (opt.rho) config.rho = *opt.rho;
        if (opt.theta) config.theta = parse_pair(*opt.theta, "--theta");
        if (opt.delta) {
            auto v = detail::parse_double(*opt.delta);
            if (!v) throw ValidationError("--delta expects a number");
            config.delta_g = *v;
        }
        if (opt.tau) config.tau_g = parse_pair(*opt.tau, "--tau");
        auto report = run_study(config,
                                {EstimatorKind::Cce, EstimatorKind::Ols,
                                 EstimatorKind::OlsWithCovariates},
                                opt.reps, opt.threads);
        report.scenario = "custom";
        reports.push_back(std::move(report));
    }

    std::string rendered;
    if (opt.format == "text")
        rendered = render_studies_text(reports);
    else if (opt.format == "csv")
        rendered = render_studies_csv(reports);
    else
        rendered = studies_to_json(reports).dump(2) + "\n";
    write_output(opt.output, rendered);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"group-time treatment effects with factor-proxy counterfactuals"};
    app.require_subcommand(1);

    EstimateOptions est;
    auto* cmd_e = app.add_subcommand("estimate", "estimate effects on a long-format CSV panel");
    cmd_e->add_option("--input", est.input, "panel CSV path")->required();
    cmd_e->add_option("--unit-col", est.schema.unit_col, "unit id column")
        ->default_val("unit");
    cmd_e->add_option("--time-col", est.schema.time_col, "period column")
        ->default_val("time");
    cmd_e->add_option("--group-col", est.schema.group_col,
                      "first treated period column (0 or empty: never treated)")
        ->default_val("group");
    cmd_e->add_option("--outcome-col", est.schema.outcome_col, "outcome column")
        ->default_val("outcome");
    cmd_e->add_option("--covariate-cols", est.schema.covariate_cols,
                      "comma-separated covariate columns")
        ->delimiter(',');
    cmd_e->add_option("--observed-factors", est.factor_specs,
                      "comma-separated: constant, trend, file:PATH")
        ->delimiter(',');
    cmd_e->add_flag("--groupwise-beta", est.groupwise,
                    "re-estimate slopes per treated group");
    cmd_e->add_flag("--placebo", est.placebo, "include pre-treatment placebo cells");
    cmd_e->add_option("--output-format", est.format, "text, json, or csv")
        ->default_val("text")
        ->check(CLI::IsMember({"text", "json", "csv"}));
    cmd_e->add_option("--output", est.output, "output path (default stdout)");
    cmd_e->add_flag("--force", est.force,
                    "downgrade assumption-check failures to warnings");

    SimulateOptions sim;
    auto* cmd_s = app.add_subcommand("simulate", "run a replication study");
    auto* preset_opt =
        cmd_s->add_option("--preset", sim.preset, "named design: table1 or table2");
    auto* config_opt = cmd_s->add_option("--config", sim.config_file,
                                         "key=value study configuration file");
    cmd_s->add_option("--reps", sim.reps, "replication count")->default_val(1000);
    cmd_s->add_option("--seed", sim.seed, "study seed")->required();
    cmd_s->add_option("--threads", sim.threads, "worker threads (0: hardware)")
        ->envname("C2ED2_THREADS");
    auto* n_opt = cmd_s->add_option("--n", sim.n, "units");
    auto* t_opt = cmd_s->add_option("--t", sim.t, "periods");
    auto* g_opt = cmd_s->add_option("--g", sim.g, "first treated period");
    auto* rho_opt = cmd_s->add_option("--rho", sim.rho, "outcome noise AR coefficient");
    auto* theta_opt =
        cmd_s->add_option("--theta", sim.theta, "loading-mean gap pair a,b");
    auto* delta_opt = cmd_s->add_option("--delta", sim.delta, "outcome shift");
    auto* tau_opt = cmd_s->add_option("--tau", sim.tau, "covariate shift pair a,b");
    cmd_s->add_option("--output-format", sim.format, "text, json, or csv")
        ->default_val("text")
        ->check(CLI::IsMember({"text", "json", "csv"}));
    cmd_s->add_option("--output", sim.output, "output path (default stdout)");

    preset_opt->excludes(theta_opt)->excludes(delta_opt)->excludes(tau_opt);
    preset_opt->excludes(config_opt);
    config_opt->excludes(theta_opt)->excludes(delta_opt)->excludes(tau_opt);
    (void)n_opt;
    (void)t_opt;
    (void)g_opt;
    (void)rho_opt;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (cmd_e->parsed()) return cmd_estimate(est);
        return cmd_simulate(sim);
    } catch (const c2ed2::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const c2ed2::StructuralError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const c2ed2::NumericalError& e) {
        std::cerr << "error: " << e.what();
        if (e.condition > 0.0) std::cerr << " (condition " << e.condition << ")";
        std::cerr << '\n';
        return 4;
    } catch (const c2ed2::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
