#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "estimator.hpp"
#include "panel.hpp"
#include "rng.hpp"
#include "twfe.hpp"

namespace c2ed2 {

// interactive-effects simulation design: two factors (level and trend), two
// covariates, AR(1) outcome noise, one treated group
struct DgpConfig {
    int n_units = 164;
    int n_periods = 9;
    int g_treat = 7;
    double treated_fraction = 0.5;
    double rho = 0.75;
    Eigen::Vector2d theta{0.0, 0.0};  // loading-mean gap between treated and controls
    double delta_g = 1.0;
    Eigen::Vector2d tau_g{0.0, 0.0};
    Eigen::Vector2d beta{1.0, 1.0};
    std::uint64_t seed = 0;

    // debug knobs: scale the idiosyncratic noise, freeze loadings at identity
    double noise_scale = 1.0;
    bool unit_loadings = false;

    static constexpr int r = 2;
    static constexpr int m = 2;

    void validate() const {
        if (g_treat < 2 || g_treat > n_periods)
            throw ValidationError("treatment period must lie in 2..T");
        if (!(treated_fraction > 0.0 && treated_fraction < 1.0))
            throw ValidationError("treated fraction must lie strictly between 0 and 1");
        if (!(std::abs(rho) < 1.0))
            throw ValidationError("autoregressive coefficient must satisfy |rho| < 1");
        if (n_units < 4) throw ValidationError("need at least 4 units");
    }
};

struct GeneratedPanel {
    PanelDataset data;
    Eigen::MatrixXd y_untreated;                 // N x T potential outcomes
    std::array<Eigen::MatrixXd, 2> x_untreated;  // per covariate, N x T
    double delta_truth = 0.0;
    Eigen::Vector2d tau_truth{0.0, 0.0};
    double eta_truth = 0.0;
    double indirect_truth = 0.0;
};

// fixed draw order per unit: loadings (column-major), loading-mean noise,
// covariate noise by period then covariate, outcome noise by period
inline GeneratedPanel generate(const DgpConfig& c, std::mt19937_64& rng) {
    c.validate();
    const int n = c.n_units;
    const int T = c.n_periods;
    std::normal_distribution<double> nd;

    GeneratedPanel out;
    out.delta_truth = c.delta_g;
    out.tau_truth = c.tau_g;
    out.indirect_truth = c.tau_g.dot(c.beta);
    out.eta_truth = c.delta_g - out.indirect_truth;

    const int n_treated = static_cast<int>(static_cast<double>(n) * c.treated_fraction);
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int j = 0; j < n_treated; ++j) {
        std::uniform_int_distribution<int> pick(j, n - 1);
        std::swap(pool[j], pool[pick(rng)]);
    }
    std::vector<char> treated(n, 0);
    for (int j = 0; j < n_treated; ++j) treated[pool[j]] = 1;

    PanelDataset& data = out.data;
    data.n_units = n;
    data.n_periods = T;
    data.n_covariates = 2;
    data.outcomes = Eigen::MatrixXd::Zero(n, T);
    data.covariates.assign(2, Eigen::MatrixXd::Zero(n, T));
    out.y_untreated = Eigen::MatrixXd::Zero(n, T);
    out.x_untreated = {Eigen::MatrixXd::Zero(n, T), Eigen::MatrixXd::Zero(n, T)};

    for (int i = 0; i < n; ++i) {
        Eigen::Matrix2d lambda;
        for (int col = 0; col < 2; ++col)
            for (int row = 0; row < 2; ++row) {
                double z = nd(rng);
                lambda(row, col) = (row == col ? 1.0 : 0.0) + (c.unit_loadings ? 0.0 : z);
            }
        const double d_i = treated[i] ? 1.0 : 0.0;
        Eigen::Vector2d alpha = lambda.diagonal() + c.theta * d_i;
        alpha(0) += c.noise_scale * nd(rng);
        alpha(1) += c.noise_scale * nd(rng);

        Eigen::MatrixXd v(T, 2);
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < 2; ++j) v(t, j) = c.noise_scale * nd(rng);
        Eigen::VectorXd u(T);
        for (int t = 0; t < T; ++t) u(t) = c.noise_scale * nd(rng);

        double eps = 0.0;
        for (int t = 1; t <= T; ++t) {
            const Eigen::Vector2d f(1.0, static_cast<double>(t));
            eps = c.rho * eps + u(t - 1);
            Eigen::Vector2d x_inf = lambda.transpose() * f + v.row(t - 1).transpose();
            const double y_inf = c.beta.dot(x_inf) + alpha.dot(f) + eps;
            out.x_untreated[0](i, t - 1) = x_inf(0);
            out.x_untreated[1](i, t - 1) = x_inf(1);
            out.y_untreated(i, t - 1) = y_inf;
            const bool post = treated[i] && t >= c.g_treat;
            data.covariates[0](i, t - 1) = x_inf(0) + (post ? c.tau_g(0) : 0.0);
            data.covariates[1](i, t - 1) = x_inf(1) + (post ? c.tau_g(1) : 0.0);
            data.outcomes(i, t - 1) = y_inf + (post ? c.delta_g : 0.0);
        }
        data.groups.push_back(treated[i] ? GroupLabel::treated_at(c.g_treat)
                                         : GroupLabel::never());
        data.unit_ids.push_back("u" + std::to_string(i + 1));
    }
    for (int t = 1; t <= T; ++t) data.period_labels.push_back(t);
    return out;
}

enum class EstimatorKind { Cce, Ols, OlsWithCovariates };

struct McRow {
    std::string estimator; // cce, cce_direct, cce_indirect, ols, ols_cov
    int period = 0;        // 1-based period index
    double bias = 0.0;
    double mse = 0.0;
    double coverage = 0.0;
};

struct McReport {
    std::uint64_t seed = 0;
    int n_reps = 0;
    int failures = 0;
    std::string scenario;
    DgpConfig config;
    std::vector<McRow> rows;
};

namespace detail {

struct RepRecord {
    bool failed = false;
    std::string failure_reason;
    // per estimator key, per post period: error and CI hit
    std::vector<double> errors;
    std::vector<char> hits;
};

inline void run_replication(const DgpConfig& base, std::uint64_t rep,
                            const std::vector<EstimatorKind>& estimators, int n_post,
                            RepRecord& rec) {
    auto rng = substream(base.seed, rep);
    try {
        auto gen = generate(base, rng);
        const auto& data = gen.data;
        auto index = build_group_index(data);
        const int g = index.g_min;
        const double root_ng =
            std::sqrt(static_cast<double>(index.members(g).size()));

        for (auto kind : estimators) {
            if (kind == EstimatorKind::Cce) {
                auto factors = estimate_factors(data, index);
                auto fit = fit_pretreatment(data, index, factors);
                auto table = att_table(data, index, fit, factors, impute(fit, factors, index),
                                       {.placebo = false, .averages = false});
                // append key-major: all totals, all directs, all indirects
                std::vector<double> direct_err, indirect_err;
                std::vector<char> direct_hit, indirect_hit;
                for (const auto& cell : table.cells) {
                    const double se_d = std::sqrt(cell.var_delta) / root_ng;
                    const double se_e = std::sqrt(cell.var_eta) / root_ng;
                    const double se_i = std::sqrt(cell.var_indirect) / root_ng;
                    rec.errors.push_back(cell.delta - gen.delta_truth);
                    rec.hits.push_back(std::abs(cell.delta - gen.delta_truth) <= kAttZ * se_d);
                    direct_err.push_back(cell.eta - gen.eta_truth);
                    direct_hit.push_back(std::abs(cell.eta - gen.eta_truth) <= kAttZ * se_e);
                    indirect_err.push_back(cell.indirect - gen.indirect_truth);
                    indirect_hit.push_back(std::abs(cell.indirect - gen.indirect_truth) <=
                                           kAttZ * se_i);
                }
                rec.errors.insert(rec.errors.end(), direct_err.begin(), direct_err.end());
                rec.errors.insert(rec.errors.end(), indirect_err.begin(), indirect_err.end());
                rec.hits.insert(rec.hits.end(), direct_hit.begin(), direct_hit.end());
                rec.hits.insert(rec.hits.end(), indirect_hit.begin(), indirect_hit.end());
            } else {
                TwfeSpec spec;
                spec.include_covariates = (kind == EstimatorKind::OlsWithCovariates);
                auto res = twfe_event_study(data, index, spec);
                for (int j = 0; j < n_post; ++j) {
                    rec.errors.push_back(res.delta(j) - gen.delta_truth);
                    rec.hits.push_back(std::abs(res.delta(j) - gen.delta_truth) <=
                                       kAttZ * res.se(j));
                }
            }
        }
    } catch (const Error& e) {
        rec.failed = true;
        rec.failure_reason = e.what();
        rec.errors.clear();
        rec.hits.clear();
    }
}

} // namespace detail

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// replications are independent; per-replication records are reduced in
// replication order so the report is identical for any thread count
inline McReport run_study(const DgpConfig& config,
                          const std::vector<EstimatorKind>& estimators, int n_reps,
                          int threads = 0) {
    if (n_reps < 1) throw ValidationError("need at least one replication");
    config.validate();
    const int n_post = config.n_periods - config.g_treat + 1;

    std::vector<detail::RepRecord> records(n_reps);
    const int n_threads = std::min(resolve_threads(threads), n_reps);
    if (n_threads <= 1) {
        for (int rep = 0; rep < n_reps; ++rep)
            detail::run_replication(config, rep, estimators, n_post, records[rep]);
    } else {
        std::vector<std::thread> workers;
        for (int w = 0; w < n_threads; ++w)
            workers.emplace_back([&, w] {
                for (int rep = w; rep < n_reps; rep += n_threads)
                    detail::run_replication(config, rep, estimators, n_post, records[rep]);
            });
        for (auto& t : workers) t.join();
    }

    // row layout must match the per-replication record layout exactly
    std::vector<std::string> keys;
    for (auto kind : estimators) {
        if (kind == EstimatorKind::Cce) {
            keys.push_back("cce");
            keys.push_back("cce_direct");
            keys.push_back("cce_indirect");
        } else {
            keys.push_back(kind == EstimatorKind::Ols ? "ols" : "ols_cov");
        }
    }

    McReport report;
    report.seed = config.seed;
    report.n_reps = n_reps;
    report.config = config;

    const size_t cells = keys.size() * static_cast<size_t>(n_post);
    std::vector<double> sum_err(cells, 0.0), sum_sq(cells, 0.0), sum_hit(cells, 0.0);
    int ok_reps = 0;
    for (const auto& rec : records) {
        if (rec.failed) {
            ++report.failures;
            continue;
        }
        ++ok_reps;
        if (rec.errors.size() != cells)
            throw Error("replication produced an unexpected number of cells");
        for (size_t at = 0; at < cells; ++at) {
            sum_err[at] += rec.errors[at];
            sum_sq[at] += rec.errors[at] * rec.errors[at];
            sum_hit[at] += rec.hits[at];
        }
    }
    size_t cell = 0;
    for (const auto& key : keys)
        for (int j = 0; j < n_post; ++j, ++cell) {
            McRow row;
            row.estimator = key;
            row.period = config.g_treat + j;
            if (ok_reps > 0) {
                row.bias = sum_err[cell] / ok_reps;
                row.mse = sum_sq[cell] / ok_reps;
                row.coverage = sum_hit[cell] / ok_reps;
            }
            report.rows.push_back(std::move(row));
        }
    return report;
}

struct Scenario {
    std::string name;
    double delta = 0.0;
    Eigen::Vector2d tau{0.0, 0.0};
};

inline std::vector<Scenario> effect_scenarios() {
    return {{"direct effect only", 1.0, {0.0, 0.0}},
            {"direct and indirect effects", 2.0, {0.0, 1.0}}};
}

// table1 keeps treated and control loading means equal; table2 shifts the
// second loading mean of treated units, breaking parallel trends for the ols
// baselines
inline DgpConfig preset_config(const std::string& name, std::uint64_t seed) {
    DgpConfig config;
    config.seed = seed;
    if (name == "table1")
        config.theta = {0.0, 0.0};
    else if (name == "table2")
        config.theta = {0.0, 1.0};
    else
        throw ValidationError("unknown preset '" + name + "' (expected table1 or table2)");
    return config;
}

inline std::vector<McReport> run_preset(const std::string& name, int n_reps,
                                        std::uint64_t seed, int threads = 0) {
    const std::vector<EstimatorKind> estimators{EstimatorKind::Cce, EstimatorKind::Ols,
                                               EstimatorKind::OlsWithCovariates};
    std::vector<McReport> reports;
    std::uint64_t scenario_slot = 0;
    for (const auto& scenario : effect_scenarios()) {
        DgpConfig config = preset_config(name, seed);
        // distinct substream family per scenario so the two studies do not
        // share draws
        config.seed = mix64(seed ^ mix64(0x5CEA1A0ull + scenario_slot++));
        config.delta_g = scenario.delta;
        config.tau_g = scenario.tau;
        auto report = run_study(config, estimators, n_reps, threads);
        report.seed = seed;
        report.scenario = scenario.name;
        reports.push_back(std::move(report));
    }
    return reports;
}

enum class SummaryFormat { Text, Csv };

inline std::string summarize(const McReport& report, SummaryFormat format) {
    if (report.rows.empty()) throw ValidationError("empty study report");
    std::vector<int> periods;
    for (const auto& row : report.rows)
        if (row.estimator == report.rows.front().estimator) periods.push_back(row.period);
    std::vector<std::string> keys;
    for (const auto& row : report.rows)
        if (std::find(keys.begin(), keys.end(), row.estimator) == keys.end())
            keys.push_back(row.estimator);

    auto cell = [&](const std::string& key, int period) -> const McRow& {
        for (const auto& row : report.rows)
            if (row.estimator == key && row.period == period) return row;
        throw ValidationError("missing report cell " + key);
    };
    char buf[64];
    std::ostringstream out;
    if (format == SummaryFormat::Csv) {
        out << "scenario,estimator,period,bias,mse,coverage\n";
        for (const auto& key : keys)
            for (int p : periods) {
                const auto& row = cell(key, p);
                std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g", row.bias, row.mse,
                              row.coverage);
                out << report.scenario << ',' << key << ',' << p << ',' << buf << '\n';
            }
        return out.str();
    }
    out << "scenario: " << report.scenario << "  (replications " << report.n_reps
        << ", seed " << report.seed << ", failures " << report.failures << ")\n";
    out << "               ";
    for (int p : periods) {
        std::snprintf(buf, sizeof(buf), "  BIAS(t=%d)   MSE(t=%d)   COV(t=%d)", p, p, p);
        out << buf;
    }
    out << "   [COV columns are extra]\n";
    for (const auto& key : keys) {
        std::snprintf(buf, sizeof(buf), "%-15s", key.c_str());
        out << buf;
        for (int p : periods) {
            const auto& row = cell(key, p);
            std::snprintf(buf, sizeof(buf), " %10.4f %10.4f %10.4f", row.bias, row.mse,
                          row.coverage);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

} // namespace c2ed2
