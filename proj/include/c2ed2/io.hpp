#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "estimator.hpp"
#include "montecarlo.hpp"
#include "panel.hpp"

namespace c2ed2 {

struct Interval {
    double estimate = 0.0;
    double se = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

// one place turns a cross-sectional variance into a reported interval
inline Interval interval(double estimate, double variance, int group_size) {
    Interval out;
    out.estimate = estimate;
    out.se = std::sqrt(variance / group_size);
    out.lo = estimate - kAttZ * out.se;
    out.hi = estimate + kAttZ * out.se;
    return out;
}

struct EstimateDiagnostics {
    ValidationReport validation;
    double cond_factor_gram = 0.0;
    double cond_slope_gram = 0.0;
    int n_never = 0;
    std::map<int, int> group_sizes;
    bool groupwise = false;
    bool forced = false;
    std::vector<std::string> factor_names;
    Eigen::VectorXd beta;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline void pad(std::ostringstream& out, const std::string& s, int width) {
    out << s;
    for (int i = static_cast<int>(s.size()); i < width; ++i) out << ' ';
}

inline std::string period_name(const AttTable& table, int period) {
    return format_g(table.period_labels[static_cast<size_t>(period) - 1]);
}

} // namespace detail

inline std::string render_att_csv(const AttTable& table) {
    std::ostringstream out;
    out << "row,group,period,placebo,n,total,total_se,total_lo,total_hi,"
           "direct,direct_se,direct_lo,direct_hi,"
           "indirect,indirect_se,indirect_lo,indirect_hi\n";
    auto emit = [&](const std::string& kind, int group, const std::string& period,
                    bool placebo, int n, const Interval& t, const Interval& d,
                    const Interval& ind) {
        out << kind << ','
            << detail::format_g(table.period_labels[static_cast<size_t>(group) - 1])
            << ',' << period << ',' << (placebo ? 1 : 0) << ',' << n;
        for (const Interval* iv : {&t, &d, &ind})
            out << ',' << detail::fmt(iv->estimate) << ',' << detail::fmt(iv->se) << ','
                << detail::fmt(iv->lo) << ',' << detail::fmt(iv->hi);
        out << '\n';
    };
    for (const auto& cell : table.cells)
        emit("cell", cell.group, detail::period_name(table, cell.period), cell.placebo,
             cell.group_size, interval(cell.delta, cell.var_delta, cell.group_size),
             interval(cell.eta, cell.var_eta, cell.group_size),
             interval(cell.indirect, cell.var_indirect, cell.group_size));
    for (const auto& avg : table.averages)
        emit("average", avg.group, avg.post ? "post" : "pre", !avg.post, avg.group_size,
             interval(avg.delta, avg.var_delta, avg.group_size),
             interval(avg.eta, avg.var_eta, avg.group_size),
             interval(avg.indirect, avg.var_indirect, avg.group_size));
    return out.str();
}

inline std::string render_att_text(const AttTable& table,
                                   const EstimateDiagnostics* diagnostics = nullptr) {
    std::ostringstream out;
    out << "group-time average treatment effects (95% intervals)\n";
    int current_group = -1;
    auto line = [&](const std::string& label, bool placebo, int n, const Interval& t,
                    const Interval& d, const Interval& ind) {
        out << "    ";
        detail::pad(out, label, 10);
        detail::pad(out, placebo ? "placebo" : "", 9);
        for (const Interval* iv : {&t, &d, &ind}) {
            std::ostringstream cellbuf;
            cellbuf << detail::fmt(iv->estimate) << " [" << detail::fmt(iv->lo) << ", "
                    << detail::fmt(iv->hi) << "]";
            detail::pad(out, cellbuf.str(), 34);
        }
        out << "(n=" << n << ")\n";
    };
    for (const auto& cell : table.cells) {
        if (cell.group != current_group) {
            current_group = cell.group;
            out << "  group first treated at period "
                << detail::period_name(table, cell.group) << '\n';
            out << "    ";
            detail::pad(out, "period", 10);
            detail::pad(out, "", 9);
            detail::pad(out, "total", 34);
            detail::pad(out, "direct", 34);
            detail::pad(out, "indirect", 34);
            out << '\n';
        }
        line(detail::period_name(table, cell.period), cell.placebo, cell.group_size,
             interval(cell.delta, cell.var_delta, cell.group_size),
             interval(cell.eta, cell.var_eta, cell.group_size),
             interval(cell.indirect, cell.var_indirect, cell.group_size));
    }
    if (!table.averages.empty()) {
        out << "  window averages\n";
        for (const auto& avg : table.averages) {
            std::string label = "g=" + detail::period_name(table, avg.group) +
                                (avg.post ? " post" : " pre");
            line(label, !avg.post, avg.group_size,
                 interval(avg.delta, avg.var_delta, avg.group_size),
                 interval(avg.eta, avg.var_eta, avg.group_size),
                 interval(avg.indirect, avg.var_indirect, avg.group_size));
        }
    }
    if (diagnostics) {
        const auto& d = *diagnostics;
        out << "diagnostics\n";
        out << "  never-treated units: " << d.n_never << '\n';
        for (const auto& [g, n] : d.group_sizes)
            out << "  group " << detail::period_name(table, g) << ": " << n
                << " units\n";
        out << "  cond(factor gram): " << detail::fmt(d.cond_factor_gram) << '\n';
        out << "  cond(slope gram): " << detail::fmt(d.cond_slope_gram) << '\n';
        out << "  slope coefficients:";
        for (int j = 0; j < d.beta.size(); ++j) out << ' ' << detail::fmt(d.beta(j));
        out << '\n';
        out << "  proxy columns:";
        for (const auto& name : d.factor_names) out << ' ' << name;
        out << '\n';
        out << "  groupwise slopes: " << (d.groupwise ? "yes" : "no") << '\n';
        out << "  pre-treatment window: " << d.validation.pre_window_length
            << " periods (required " << d.validation.required_pre_window << ")\n";
        for (const auto& w : d.validation.warnings) out << "  warning: " << w << '\n';
        for (const auto& f : d.validation.failures)
            out << (d.forced ? "  warning (forced past): " : "  failure: ") << f << '\n';
    }
    return out.str();
}

inline nlohmann::json att_to_json(const AttTable& table,
                                  const EstimateDiagnostics* diagnostics = nullptr) {
    nlohmann::json root;
    auto& att = root["att"];
    att["n_covariates"] = table.n_covariates;
    att["period_labels"] = table.period_labels;
    att["cells"] = nlohmann::json::array();
    for (const auto& cell : table.cells)
        att["cells"].push_back({{"group", cell.group},
                                {"period", cell.period},
                                {"placebo", cell.placebo},
                                {"n", cell.group_size},
                                {"total", cell.delta},
                                {"total_variance", cell.var_delta},
                                {"direct", cell.eta},
                                {"direct_variance", cell.var_eta},
                                {"indirect", cell.indirect},
                                {"indirect_variance", cell.var_indirect},
                                {"covariate_shift", std::vector<double>(
                                                        cell.tau.begin(), cell.tau.end())}});
    att["averages"] = nlohmann::json::array();
    for (const auto& avg : table.averages)
        att["averages"].push_back({{"group", avg.group},
                                   {"window", avg.post ? "post" : "pre"},
                                   {"n_periods", avg.n_periods},
                                   {"n", avg.group_size},
                                   {"total", avg.delta},
                                   {"total_variance", avg.var_delta},
                                   {"direct", avg.eta},
                                   {"direct_variance", avg.var_eta},
                                   {"indirect", avg.indirect},
                                   {"indirect_variance", avg.var_indirect},
                                   {"covariate_shift",
                                    std::vector<double>(avg.tau.begin(), avg.tau.end())}});
    if (diagnostics) {
        const auto& d = *diagnostics;
        auto& diag = root["diagnostics"];
        diag["never_treated_units"] = d.n_never;
        diag["group_sizes"] = nlohmann::json::object();
        for (const auto& [g, n] : d.group_sizes)
            diag["group_sizes"][detail::period_name(table, g)] = n;
        diag["cond_factor_gram"] = d.cond_factor_gram;
        diag["cond_slope_gram"] = d.cond_slope_gram;
        diag["slope_coefficients"] =
            std::vector<double>(d.beta.begin(), d.beta.end());
        diag["proxy_columns"] = d.factor_names;
        diag["groupwise_slopes"] = d.groupwise;
        diag["pre_window_length"] = d.validation.pre_window_length;
        diag["required_pre_window"] = d.validation.required_pre_window;
        diag["warnings"] = d.validation.warnings;
        diag["failures"] = d.validation.failures;
        diag["forced"] = d.forced;
    }
    return root;
}

inline AttTable att_from_json(const nlohmann::json& root) {
    if (!root.contains("att")) throw ParseError("missing 'att' object");
    const auto& att = root.at("att");
    AttTable table;
    table.n_covariates = att.at("n_covariates").get<int>();
    table.period_labels = att.at("period_labels").get<std::vector<double>>();
    for (const auto& j : att.at("cells")) {
        AttCell cell;
        cell.group = j.at("group").get<int>();
        cell.period = j.at("period").get<int>();
        cell.placebo = j.at("placebo").get<bool>();
        cell.group_size = j.at("n").get<int>();
        cell.delta = j.at("total").get<double>();
        cell.var_delta = j.at("total_variance").get<double>();
        cell.eta = j.at("direct").get<double>();
        cell.var_eta = j.at("direct_variance").get<double>();
        cell.indirect = j.at("indirect").get<double>();
        cell.var_indirect = j.at("indirect_variance").get<double>();
        auto tau = j.at("covariate_shift").get<std::vector<double>>();
        cell.tau = Eigen::Map<Eigen::VectorXd>(tau.data(), tau.size());
        table.cells.push_back(std::move(cell));
    }
    for (const auto& j : att.at("averages")) {
        AttAverage avg;
        avg.group = j.at("group").get<int>();
        avg.post = j.at("window").get<std::string>() == "post";
        avg.n_periods = j.at("n_periods").get<int>();
        avg.group_size = j.at("n").get<int>();
        avg.delta = j.at("total").get<double>();
        avg.var_delta = j.at("total_variance").get<double>();
        avg.eta = j.at("direct").get<double>();
        avg.var_eta = j.at("direct_variance").get<double>();
        avg.indirect = j.at("indirect").get<double>();
        avg.var_indirect = j.at("indirect_variance").get<double>();
        auto tau = j.at("covariate_shift").get<std::vector<double>>();
        avg.tau = Eigen::Map<Eigen::VectorXd>(tau.data(), tau.size());
        table.averages.push_back(std::move(avg));
    }
    return table;
}

inline nlohmann::json study_to_json(const McReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["n_replications"] = report.n_reps;
    j["failures"] = report.failures;
    j["scenario"] = report.scenario;
    const auto& c = report.config;
    j["config"] = {{"n_units", c.n_units},
                   {"n_periods", c.n_periods},
                   {"g_treat", c.g_treat},
                   {"treated_fraction", c.treated_fraction},
                   {"rho", c.rho},
                   {"theta", std::vector<double>{c.theta(0), c.theta(1)}},
                   {"delta_g", c.delta_g},
                   {"tau_g", std::vector<double>{c.tau_g(0), c.tau_g(1)}},
                   {"beta", std::vector<double>{c.beta(0), c.beta(1)}},
                   {"seed", c.seed}};
    j["rows"] = nlohmann::json::array();
    for (const auto& row : report.rows)
        j["rows"].push_back({{"estimator", row.estimator},
                             {"period", row.period},
                             {"bias", row.bias},
                             {"mse", row.mse},
                             {"coverage", row.coverage}});
    return j;
}

inline McReport study_from_json(const nlohmann::json& j) {
    McReport report;
    report.seed = j.at("seed").get<std::uint64_t>();
    report.n_reps = j.at("n_replications").get<int>();
    report.failures = j.at("failures").get<int>();
    report.scenario = j.at("scenario").get<std::string>();
    const auto& c = j.at("config");
    report.config.n_units = c.at("n_units").get<int>();
    report.config.n_periods = c.at("n_periods").get<int>();
    report.config.g_treat = c.at("g_treat").get<int>();
    report.config.treated_fraction = c.at("treated_fraction").get<double>();
    report.config.rho = c.at("rho").get<double>();
    auto theta = c.at("theta").get<std::vector<double>>();
    report.config.theta = {theta.at(0), theta.at(1)};
    report.config.delta_g = c.at("delta_g").get<double>();
    auto tau = c.at("tau_g").get<std::vector<double>>();
    report.config.tau_g = {tau.at(0), tau.at(1)};
    auto beta = c.at("beta").get<std::vector<double>>();
    report.config.beta = {beta.at(0), beta.at(1)};
    report.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("rows")) {
        McRow row;
        row.estimator = r.at("estimator").get<std::string>();
        row.period = r.at("period").get<int>();
        row.bias = r.at("bias").get<double>();
        row.mse = r.at("mse").get<double>();
        row.coverage = r.at("coverage").get<double>();
        report.rows.push_back(std::move(row));
    }
    return report;
}

inline nlohmann::json studies_to_json(const std::vector<McReport>& reports) {
    nlohmann::json j;
    j["studies"] = nlohmann::json::array();
    for (const auto& report : reports) j["studies"].push_back(study_to_json(report));
    return j;
}

inline std::vector<McReport> studies_from_json(const nlohmann::json& j) {
    std::vector<McReport> reports;
    for (const auto& s : j.at("studies")) reports.push_back(study_from_json(s));
    return reports;
}

inline std::string render_studies_text(const std::vector<McReport>& reports) {
    std::ostringstream out;
    for (size_t i = 0; i < reports.size(); ++i) {
        if (i) out << '\n';
        out << summarize(reports[i], SummaryFormat::Text);
    }
    return out.str();
}

// one header, scenario column distinguishes the studies
inline std::string render_studies_csv(const std::vector<McReport>& reports) {
    std::ostringstream out;
    for (size_t i = 0; i < reports.size(); ++i) {
        std::string csv = summarize(reports[i], SummaryFormat::Csv);
        if (i) csv.erase(0, csv.find('\n') + 1);
        out << csv;
    }
    return out.str();
}

inline void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::fputs(content.c_str(), stdout);
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open output file " + path);
    f << content;
    if (!f.good()) throw Error("failed writing output file " + path);
}

} // namespace c2ed2
