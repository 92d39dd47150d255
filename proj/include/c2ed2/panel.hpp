#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"

namespace c2ed2 {

// period_index 0 encodes never treated, otherwise the 1-based first treated period
struct GroupLabel {
    int period_index = 0;

    static GroupLabel never() { return {}; }
    static GroupLabel treated_at(int period) { return {period}; }
    bool is_treated() const { return period_index > 0; }
    bool operator==(const GroupLabel&) const = default;
};

struct PanelDataset {
    int n_units = 0;
    int n_periods = 0;
    int n_covariates = 0;
    Eigen::MatrixXd outcomes;                // N x T
    std::vector<Eigen::MatrixXd> covariates; // one N x T matrix per covariate
    std::vector<GroupLabel> groups;          // length N
    std::vector<std::string> unit_ids;       // original ids, first-appearance order
    std::vector<double> period_labels;       // original time values, ascending

    // covariate rows for unit i over periods [t_begin, t_end), 1-based t_begin
    Eigen::MatrixXd unit_covariate_block(int i, int t_begin, int t_end) const {
        Eigen::MatrixXd x(t_end - t_begin, n_covariates);
        for (int j = 0; j < n_covariates; ++j)
            for (int t = t_begin; t < t_end; ++t)
                x(t - t_begin, j) = covariates[j](i, t - 1);
        return x;
    }
};

struct GroupIndex {
    std::vector<int> never_units;               // I_inf, ascending unit index
    std::map<int, std::vector<int>> treated;    // g -> I_g, ascending in both keys and members
    int g_min = 0;

    const std::vector<int>& members(int g) const { return treated.at(g); }
};

struct CsvSchema {
    std::string unit_col = "unit";
    std::string time_col = "time";
    std::string group_col = "group";
    std::string outcome_col = "outcome";
    std::vector<std::string> covariate_cols;
};

struct ValidationReport {
    bool pre_window_ok = false;
    int pre_window_length = 0;
    int required_pre_window = 0;
    std::vector<std::string> failures;
    std::vector<std::string> warnings;
    // condition numbers of the pre-window factor gram and the slope gram,
    // filled in once the fit has run
    std::optional<double> cond_factor_gram;
    std::optional<double> cond_slope_gram;

    bool ok() const { return failures.empty(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) return std::nullopt;
    return v;
}

inline std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline PanelDataset ingest_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open input file: " + path);

    std::string line;
    if (!std::getline(in, line))
        throw ParseError("empty file: " + path);
    auto header = detail::split_csv_line(line);

    auto col_of = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw ParseError("missing column '" + name + "' in " + path);
        return static_cast<int>(it - header.begin());
    };
    const int unit_c = col_of(schema.unit_col);
    const int time_c = col_of(schema.time_col);
    const int group_c = col_of(schema.group_col);
    const int outcome_c = col_of(schema.outcome_col);
    std::vector<int> cov_c;
    for (const auto& name : schema.covariate_cols)
        cov_c.push_back(col_of(name));
    const int m = static_cast<int>(cov_c.size());

    struct Row {
        int line_no;
        std::string unit;
        double time;
        std::string group;
        double outcome;
        std::vector<double> covs;
    };
    std::vector<Row> rows;
    std::vector<double> period_values;
    std::unordered_map<std::string, int> unit_of;
    std::vector<std::string> unit_ids;

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (static_cast<int>(cells.size()) < static_cast<int>(header.size())) {
            std::ostringstream msg;
            msg << "line " << line_no << ": expected " << header.size()
                << " fields, got " << cells.size();
            throw ParseError(msg.str());
        }
        Row r;
        r.line_no = line_no;
        r.unit = cells[unit_c];
        auto tv = detail::parse_double(cells[time_c]);
        if (!tv || !std::isfinite(*tv)) {
            std::ostringstream msg;
            msg << "line " << line_no << ": non-numeric time value '" << cells[time_c] << "'";
            throw ParseError(msg.str());
        }
        r.time = *tv;
        r.group = cells[group_c];
        auto ov = detail::parse_double(cells[outcome_c]);
        if (!ov || !std::isfinite(*ov)) {
            std::ostringstream msg;
            msg << "line " << line_no << ": non-numeric outcome '" << cells[outcome_c] << "'";
            throw ParseError(msg.str());
        }
        r.outcome = *ov;
        for (int j = 0; j < m; ++j) {
            auto cv = detail::parse_double(cells[cov_c[j]]);
            if (!cv || !std::isfinite(*cv)) {
                std::ostringstream msg;
                msg << "line " << line_no << ": non-numeric covariate '"
                    << schema.covariate_cols[j] << "' = '" << cells[cov_c[j]] << "'";
                throw ParseError(msg.str());
            }
            r.covs.push_back(*cv);
        }
        if (!unit_of.count(r.unit)) {
            unit_of[r.unit] = static_cast<int>(unit_ids.size());
            unit_ids.push_back(r.unit);
        }
        period_values.push_back(r.time);
        rows.push_back(std::move(r));
    }
    if (rows.empty())
        throw ParseError("no data rows in " + path);

    std::sort(period_values.begin(), period_values.end());
    period_values.erase(std::unique(period_values.begin(), period_values.end()),
                        period_values.end());
    const int T = static_cast<int>(period_values.size());
    const int N = static_cast<int>(unit_ids.size());
    auto period_index = [&](double t) {
        auto it = std::lower_bound(period_values.begin(), period_values.end(), t);
        return static_cast<int>(it - period_values.begin()) + 1; // 1-based
    };

    PanelDataset data;
    data.n_units = N;
    data.n_periods = T;
    data.n_covariates = m;
    data.outcomes = Eigen::MatrixXd::Zero(N, T);
    data.covariates.assign(m, Eigen::MatrixXd::Zero(N, T));
    data.groups.assign(N, GroupLabel::never());
    data.unit_ids = unit_ids;
    data.period_labels = period_values;

    std::vector<std::vector<char>> seen(N, std::vector<char>(T, 0));
    std::vector<std::string> group_raw(N);
    std::vector<char> group_set(N, 0);

    for (const auto& r : rows) {
        const int i = unit_of[r.unit];
        const int t = period_index(r.time);
        if (seen[i][t - 1]) {
            std::ostringstream msg;
            msg << "duplicate observation for unit '" << r.unit << "' at period "
                << detail::format_g(r.time) << " (line " << r.line_no << ")";
            throw StructuralError(msg.str());
        }
        seen[i][t - 1] = 1;
        data.outcomes(i, t - 1) = r.outcome;
        for (int j = 0; j < m; ++j)
            data.covariates[j](i, t - 1) = r.covs[j];
        if (group_set[i] && group_raw[i] != r.group) {
            std::ostringstream msg;
            msg << "conflicting group labels for unit '" << r.unit << "': '"
                << group_raw[i] << "' vs '" << r.group << "' (line " << r.line_no << ")";
            throw StructuralError(msg.str());
        }
        group_raw[i] = r.group;
        group_set[i] = 1;
    }

    for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t)
            if (!seen[i][t]) {
                std::ostringstream msg;
                msg << "unbalanced panel: unit '" << unit_ids[i] << "' has no row for period "
                    << detail::format_g(period_values[t]);
                throw StructuralError(msg.str());
            }

    for (int i = 0; i < N; ++i) {
        const std::string& g = group_raw[i];
        if (g.empty() || g == "0") {
            data.groups[i] = GroupLabel::never();
            continue;
        }
        auto gv = detail::parse_double(g);
        if (!gv || !std::isfinite(*gv)) {
            std::ostringstream msg;
            msg << "non-numeric group label '" << g << "' for unit '" << unit_ids[i] << "'";
            throw ParseError(msg.str());
        }
        auto it = std::lower_bound(period_values.begin(), period_values.end(), *gv);
        if (it == period_values.end() || *it != *gv) {
            std::ostringstream msg;
            msg << "group label " << detail::format_g(*gv) << " for unit '" << unit_ids[i]
                << "' is not an observed period";
            throw ValidationError(msg.str());
        }
        const int gi = static_cast<int>(it - period_values.begin()) + 1;
        if (gi < 2) {
            std::ostringstream msg;
            msg << "unit '" << unit_ids[i] << "' is treated from the first period "
                << detail::format_g(*gv) << "; treatment must start at period 2 or later";
            throw ValidationError(msg.str());
        }
        data.groups[i] = GroupLabel::treated_at(gi);
    }
    return data;
}

inline void write_csv(const PanelDataset& data, const std::string& path,
                      const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot open output file: " + path);
    out << schema.unit_col << ',' << schema.time_col << ',' << schema.group_col << ','
        << schema.outcome_col;
    for (const auto& c : schema.covariate_cols) out << ',' << c;
    out << '\n';
    for (int i = 0; i < data.n_units; ++i) {
        for (int t = 1; t <= data.n_periods; ++t) {
            out << data.unit_ids[i] << ',' << detail::format_g(data.period_labels[t - 1]) << ',';
            if (data.groups[i].is_treated())
                out << detail::format_g(data.period_labels[data.groups[i].period_index - 1]);
            else
                out << 0;
            out << ',' << detail::format_g(data.outcomes(i, t - 1));
            for (int j = 0; j < data.n_covariates; ++j)
                out << ',' << detail::format_g(data.covariates[j](i, t - 1));
            out << '\n';
        }
    }
}

inline GroupIndex build_group_index(const PanelDataset& data) {
    GroupIndex idx;
    for (int i = 0; i < data.n_units; ++i) {
        if (data.groups[i].is_treated())
            idx.treated[data.groups[i].period_index].push_back(i);
        else
            idx.never_units.push_back(i);
    }
    if (idx.treated.empty())
        throw ValidationError("nothing to estimate: no treated units");
    if (idx.never_units.empty())
        throw ValidationError("empty control set: no never-treated units");
    idx.g_min = idx.treated.begin()->first;
    return idx;
}

inline ValidationReport validate_assumptions(const PanelDataset& data,
                                             const GroupIndex& index,
                                             int k_observed) {
    ValidationReport rep;
    const int m = data.n_covariates;
    const int k = m + 1 + k_observed;
    rep.pre_window_length = index.g_min - 1;
    rep.required_pre_window = (m >= 1) ? k + 1 : k;
    rep.pre_window_ok = rep.pre_window_length >= rep.required_pre_window;
    if (!rep.pre_window_ok) {
        std::ostringstream msg;
        msg << "pre-treatment window too short: " << rep.pre_window_length
            << " periods before the first treated period, need at least "
            << rep.required_pre_window << " to fit " << k
            << " factor proxies" << (m >= 1 ? " with residual variation for the slope" : "");
        rep.failures.push_back(msg.str());
    }
    for (const auto& [g, members] : index.treated) {
        if (members.size() < 2) {
            std::ostringstream msg;
            msg << "group at period " << detail::format_g(data.period_labels[g - 1])
                << " has a single unit; variances are unavailable";
            rep.warnings.push_back(msg.str());
        } else if (members.size() < 30) {
            std::ostringstream msg;
            msg << "small group at period " << detail::format_g(data.period_labels[g - 1])
                << " (" << members.size() << " units); asymptotic inference may be unreliable";
            rep.warnings.push_back(msg.str());
        }
    }
    return rep;
}

} // namespace c2ed2
