#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "panel.hpp"

namespace c2ed2 {

struct ObservedFactorSpec {
    enum class Kind { Constant, Trend, Custom };
    Kind kind = Kind::Constant;
    Eigen::VectorXd series; // Custom only, length T
    std::string name;       // reporting label

    static ObservedFactorSpec constant() { return {Kind::Constant, {}, "constant"}; }
    static ObservedFactorSpec trend() { return {Kind::Trend, {}, "trend"}; }
    static ObservedFactorSpec custom(Eigen::VectorXd s, std::string name) {
        return {Kind::Custom, std::move(s), std::move(name)};
    }
};

// T x k factor proxies: cross-sectional averages of never-treated observables
// first, then any appended observed factor columns
struct FactorEstimate {
    Eigen::MatrixXd f;                     // T x k
    int n_average_columns = 0;             // m + 1
    std::vector<std::string> column_names; // provenance per column
    std::vector<bool> is_observed;         // false for average columns

    int k() const { return static_cast<int>(f.cols()); }
    Eigen::MatrixXd pre_window(int g_min) const { return f.topRows(g_min - 1); }
};

struct CceFit {
    Eigen::VectorXd beta;                    // pooled slope, length m
    std::map<int, Eigen::VectorXd> beta_by_group; // filled when groupwise requested
    Eigen::MatrixXd loadings_a;              // N x k
    std::vector<Eigen::MatrixXd> loadings_lambda; // per unit, k x m
    int pre_window_end = 0;                  // pre window is 1..pre_window_end
    double cond_factor_gram = 0.0;           // condition of pre-window f'f
    double cond_slope_gram = 0.0;            // condition of sum of x'Mx
    bool groupwise = false;

    const Eigen::VectorXd& beta_for_group(int g) const {
        if (groupwise) {
            auto it = beta_by_group.find(g);
            if (it != beta_by_group.end()) return it->second;
        }
        return beta;
    }
};

// counterfactual paths for every treated unit over all periods; post-treatment
// rows are the estimates proper, pre-treatment rows feed placebo diagnostics
struct Imputations {
    std::vector<int> treated_units;            // unit indices, grouped ascending
    std::vector<int> group_of_slot;            // treated-from period per slot
    std::vector<Eigen::MatrixXd> x_hat;        // per treated unit, T x m
    std::vector<Eigen::VectorXd> y_hat;        // per treated unit, length T
    std::vector<int> slot_of_unit;             // unit index -> slot, -1 otherwise

    int slot(int unit) const { return slot_of_unit[unit]; }
};

struct AttCell {
    int group = 0;        // treated-from period index
    int period = 0;       // 1-based period index
    bool placebo = false; // pre-treatment diagnostic row
    double delta = 0.0;
    Eigen::VectorXd tau;
    double indirect = 0.0;
    double eta = 0.0;
    double var_delta = 0.0;
    double var_indirect = 0.0;
    double var_eta = 0.0;
    int group_size = 0;
};

// unweighted mean of per-unit time-averaged effects over a window, with the
// matching cross-sectional variance
struct AttAverage {
    int group = 0;
    bool post = true; // false: pre-treatment placebo average
    int n_periods = 0;
    double delta = 0.0;
    Eigen::VectorXd tau;
    double indirect = 0.0;
    double eta = 0.0;
    double var_delta = 0.0;
    double var_indirect = 0.0;
    double var_eta = 0.0;
    int group_size = 0;
};

struct AttTable {
    std::vector<AttCell> cells;
    std::vector<AttAverage> averages;
    std::vector<double> period_labels;
    int n_covariates = 0;
};

inline constexpr double kAttZ = 1.959963984540054; // 97.5% normal quantile

struct AttOptions {
    bool placebo = false;
    bool averages = true;
    bool variances = true;
};

inline FactorEstimate estimate_factors(const PanelDataset& data, const GroupIndex& index,
                                       const std::vector<ObservedFactorSpec>& observed = {}) {
    if (index.never_units.empty())
        throw ValidationError("empty control set: factor proxies need never-treated units");
    const int T = data.n_periods;
    const int m = data.n_covariates;
    FactorEstimate fe;
    fe.n_average_columns = m + 1;
    fe.f = Eigen::MatrixXd::Zero(T, m + 1 + static_cast<int>(observed.size()));

    const double n_inf = static_cast<double>(index.never_units.size());
    for (int t = 0; t < T; ++t) {
        double sy = 0.0;
        for (int i : index.never_units) sy += data.outcomes(i, t);
        fe.f(t, 0) = sy / n_inf;
        for (int j = 0; j < m; ++j) {
            double sx = 0.0;
            for (int i : index.never_units) sx += data.covariates[j](i, t);
            fe.f(t, 1 + j) = sx / n_inf;
        }
    }
    fe.column_names.push_back("avg_outcome");
    fe.is_observed.push_back(false);
    for (int j = 0; j < m; ++j) {
        fe.column_names.push_back("avg_covariate_" + std::to_string(j + 1));
        fe.is_observed.push_back(false);
    }
    int col = m + 1;
    for (const auto& spec : observed) {
        switch (spec.kind) {
        case ObservedFactorSpec::Kind::Constant:
            fe.f.col(col).setOnes();
            fe.column_names.push_back(spec.name.empty() ? "constant" : spec.name);
            break;
        case ObservedFactorSpec::Kind::Trend:
            fe.f.col(col) = Eigen::VectorXd::LinSpaced(T, 1.0, static_cast<double>(T));
            fe.column_names.push_back(spec.name.empty() ? "trend" : spec.name);
            break;
        case ObservedFactorSpec::Kind::Custom:
            if (spec.series.size() != T) {
                std::ostringstream msg;
                msg << "observed factor '" << spec.name << "' has length "
                    << spec.series.size() << ", panel has " << T << " periods";
                throw ValidationError(msg.str());
            }
            fe.f.col(col) = spec.series;
            fe.column_names.push_back(spec.name.empty() ? "custom" : spec.name);
            break;
        }
        fe.is_observed.push_back(true);
        ++col;
    }
    return fe;
}

namespace detail {

inline Eigen::VectorXd pre_outcomes(const PanelDataset& data, int i, int pre_len) {
    Eigen::VectorXd y(pre_len);
    for (int t = 0; t < pre_len; ++t) y(t) = data.outcomes(i, t);
    return y;
}

// slope from pooled pre-window regressions after projecting out the factor
// proxies; solved on the stacked annihilated design, not the normal equations
inline Eigen::VectorXd pooled_slope(const PanelDataset& data, const std::vector<int>& units,
                                    const Annihilator& ann, int pre_len,
                                    double* cond_out = nullptr) {
    const int m = data.n_covariates;
    const int n = static_cast<int>(units.size());
    Eigen::MatrixXd xr(static_cast<Eigen::Index>(n) * pre_len, m);
    Eigen::MatrixXd xt(static_cast<Eigen::Index>(n) * pre_len, m);
    Eigen::VectorXd yt(static_cast<Eigen::Index>(n) * pre_len);
    for (int s = 0; s < n; ++s) {
        const int i = units[s];
        const Eigen::MatrixXd xi = data.unit_covariate_block(i, 1, pre_len + 1);
        xr.middleRows(static_cast<Eigen::Index>(s) * pre_len, pre_len) = xi;
        xt.middleRows(static_cast<Eigen::Index>(s) * pre_len, pre_len) = ann.apply(xi);
        yt.segment(static_cast<Eigen::Index>(s) * pre_len, pre_len) =
            ann.apply(pre_outcomes(data, i, pre_len));
    }
    // degeneracy is judged against the unannihilated covariate scale: when the
    // proxies absorb a covariate direction completely, M x is pure roundoff
    // and a tolerance relative to M x itself cannot see it
    auto rep = rank_report(xt, -1.0, xr.norm());
    if (cond_out) *cond_out = rep.condition * rep.condition; // condition of the gram
    if (rep.effective_rank < m) {
        std::ostringstream msg;
        msg << "singular pre-window slope design (sum of x'Mx has effective rank "
            << rep.effective_rank << " of " << m << ")";
        throw NumericalError(msg.str(), rep.effective_rank, rep.condition);
    }
    try {
        return least_squares(xt, yt);
    } catch (const NumericalError& e) {
        std::ostringstream msg;
        msg << "singular pre-window slope design (sum of x'Mx): " << e.what();
        throw NumericalError(msg.str(), e.effective_rank, e.condition);
    }
}

} // namespace detail

inline CceFit fit_pretreatment(const PanelDataset& data, const GroupIndex& index,
                               const FactorEstimate& factors, bool groupwise_beta = false) {
    const int m = data.n_covariates;
    const int k = factors.k();
    const int pre_len = index.g_min - 1;

    // no window-length precondition here: a window too short for the proxy
    // count is mechanically a singular gram below, reported as such
    const Eigen::MatrixXd f_pre = factors.pre_window(index.g_min);
    const auto f_rank = rank_report(f_pre);
    if (f_rank.effective_rank < k) {
        std::ostringstream msg;
        msg << "singular factor-proxy gram f'f on the pre-window (effective rank "
            << f_rank.effective_rank << " of " << k << ")";
        throw NumericalError(msg.str(), f_rank.effective_rank, f_rank.condition);
    }

    CceFit fit;
    fit.pre_window_end = pre_len;
    fit.groupwise = groupwise_beta;
    fit.cond_factor_gram = f_rank.condition * f_rank.condition;

    Annihilator ann(f_pre);
    std::vector<int> all_units(data.n_units);
    for (int i = 0; i < data.n_units; ++i) all_units[i] = i;

    if (m >= 1) {
        fit.beta = detail::pooled_slope(data, all_units, ann, pre_len, &fit.cond_slope_gram);
        if (groupwise_beta)
            for (const auto& [g, members] : index.treated)
                fit.beta_by_group[g] = detail::pooled_slope(data, members, ann, pre_len);
    } else {
        fit.beta = Eigen::VectorXd(0);
    }

    // per-unit loadings from one factorization of the pre-window proxies:
    // lambda_i from x columns, a_i from the slope-adjusted outcome
    Eigen::MatrixXd rhs(pre_len, static_cast<Eigen::Index>(data.n_units) * (m + 1));
    for (int i = 0; i < data.n_units; ++i) {
        const Eigen::MatrixXd xi = data.unit_covariate_block(i, 1, pre_len + 1);
        const Eigen::VectorXd yi = detail::pre_outcomes(data, i, pre_len);
        const Eigen::VectorXd& b = data.groups[i].is_treated()
                                       ? fit.beta_for_group(data.groups[i].period_index)
                                       : fit.beta;
        rhs.col(static_cast<Eigen::Index>(i) * (m + 1)) = m >= 1 ? (yi - xi * b).eval() : yi;
        for (int j = 0; j < m; ++j)
            rhs.col(static_cast<Eigen::Index>(i) * (m + 1) + 1 + j) = xi.col(j);
    }
    Eigen::MatrixXd sol;
    try {
        sol = least_squares(f_pre, rhs);
    } catch (const NumericalError& e) {
        std::ostringstream msg;
        msg << "singular factor-proxy gram f'f on the pre-window: " << e.what();
        throw NumericalError(msg.str(), e.effective_rank, e.condition);
    }
    fit.loadings_a = Eigen::MatrixXd(data.n_units, k);
    fit.loadings_lambda.reserve(data.n_units);
    for (int i = 0; i < data.n_units; ++i) {
        fit.loadings_a.row(i) = sol.col(static_cast<Eigen::Index>(i) * (m + 1)).transpose();
        fit.loadings_lambda.push_back(
            sol.middleCols(static_cast<Eigen::Index>(i) * (m + 1) + 1, m));
    }
    return fit;
}

inline Imputations impute_covariates(const CceFit& fit, const FactorEstimate& factors,
                                     const GroupIndex& index) {
    Imputations imp;
    imp.slot_of_unit.assign(fit.loadings_lambda.size(), -1);
    for (const auto& [g, members] : index.treated)
        for (int i : members) {
            imp.slot_of_unit[i] = static_cast<int>(imp.treated_units.size());
            imp.treated_units.push_back(i);
            imp.group_of_slot.push_back(g);
            imp.x_hat.push_back(factors.f * fit.loadings_lambda[i]); // T x m
        }
    return imp;
}

inline Imputations impute_outcomes(const CceFit& fit, const FactorEstimate& factors,
                                   Imputations imp, const GroupIndex& index) {
    (void)index;
    for (size_t s = 0; s < imp.treated_units.size(); ++s) {
        const int i = imp.treated_units[s];
        const Eigen::VectorXd& b = fit.beta_for_group(imp.group_of_slot[s]);
        Eigen::VectorXd yh = factors.f * fit.loadings_a.row(i).transpose();
        if (b.size() > 0) yh += imp.x_hat[s] * b;
        imp.y_hat.push_back(std::move(yh));
    }
    return imp;
}

inline Imputations impute(const CceFit& fit, const FactorEstimate& factors,
                          const GroupIndex& index) {
    return impute_outcomes(fit, factors, impute_covariates(fit, factors, index), index);
}

namespace detail {

struct CellAccum {
    double delta_mean = 0.0;
    Eigen::VectorXd tau_mean;
    double var_delta = 0.0;
    Eigen::MatrixXd sigma_tau;
    double var_eta = 0.0;
};

// per-unit effects for group g at one period, reduced in member order
inline CellAccum cell_statistics(const PanelDataset& data, const Imputations& imp,
                                 const std::vector<int>& members, const Eigen::VectorXd& beta,
                                 int t, bool variances) {
    const int m = data.n_covariates;
    const int n = static_cast<int>(members.size());
    Eigen::VectorXd deltas(n);
    Eigen::MatrixXd taus(n, m);
    for (int s = 0; s < n; ++s) {
        const int i = members[s];
        const int slot = imp.slot(i);
        deltas(s) = data.outcomes(i, t - 1) - imp.y_hat[slot](t - 1);
        for (int j = 0; j < m; ++j)
            taus(s, j) = data.covariates[j](i, t - 1) - imp.x_hat[slot](t - 1, j);
    }
    CellAccum acc;
    acc.delta_mean = deltas.mean();
    acc.tau_mean = m > 0 ? taus.colwise().mean().transpose().eval() : Eigen::VectorXd(0);
    if (variances) {
        const double denom = static_cast<double>(n - 1);
        Eigen::VectorXd dc = deltas.array() - acc.delta_mean;
        acc.var_delta = dc.squaredNorm() / denom;
        if (m > 0) {
            Eigen::MatrixXd tc = taus.rowwise() - acc.tau_mean.transpose();
            acc.sigma_tau = tc.transpose() * tc / denom;
            Eigen::VectorXd etas = dc - tc * beta;
            // recenter: eta deviations are delta deviations minus tau'beta deviations
            acc.var_eta = etas.squaredNorm() / denom;
        } else {
            acc.sigma_tau = Eigen::MatrixXd::Zero(0, 0);
            acc.var_eta = acc.var_delta;
        }
    }
    return acc;
}

} // namespace detail

inline AttTable att_table(const PanelDataset& data, const GroupIndex& index, const CceFit& fit,
                          const FactorEstimate& factors, const Imputations& imp,
                          const AttOptions& options = {}) {
    (void)factors;
    AttTable table;
    table.period_labels = data.period_labels;
    table.n_covariates = data.n_covariates;
    const int T = data.n_periods;
    const int m = data.n_covariates;

    for (const auto& [g, members] : index.treated) {
        const int n = static_cast<int>(members.size());
        if (options.variances && n < 2) {
            std::ostringstream msg;
            msg << "degenerate group at period index " << g
                << ": one unit cannot support a variance estimate";
            throw DegenerateGroupError(msg.str());
        }
        const Eigen::VectorXd& beta = fit.beta_for_group(g);
        const int t_begin = options.placebo ? 1 : g;
        for (int t = t_begin; t <= T; ++t) {
            auto acc = detail::cell_statistics(data, imp, members, beta, t, options.variances);
            AttCell cell;
            cell.group = g;
            cell.period = t;
            cell.placebo = t < g;
            cell.delta = acc.delta_mean;
            cell.tau = acc.tau_mean;
            cell.indirect = m > 0 ? acc.tau_mean.dot(beta) : 0.0;
            cell.eta = cell.delta - cell.indirect;
            if (options.variances) {
                cell.var_delta = acc.var_delta;
                cell.var_indirect = m > 0 ? beta.dot(acc.sigma_tau * beta) : 0.0;
                cell.var_eta = acc.var_eta;
            }
            cell.group_size = n;
            table.cells.push_back(std::move(cell));
        }

        if (!options.averages) continue;
        // time-average the per-unit effect paths, then average across units
        auto window_average = [&](int w_begin, int w_end, bool post) {
            const int len = w_end - w_begin + 1;
            Eigen::VectorXd d_avg = Eigen::VectorXd::Zero(n);
            Eigen::MatrixXd tau_avg = Eigen::MatrixXd::Zero(n, m);
            for (int s = 0; s < n; ++s) {
                const int i = members[s];
                const int slot = imp.slot(i);
                for (int t = w_begin; t <= w_end; ++t) {
                    d_avg(s) += data.outcomes(i, t - 1) - imp.y_hat[slot](t - 1);
                    for (int j = 0; j < m; ++j)
                        tau_avg(s, j) += data.covariates[j](i, t - 1) - imp.x_hat[slot](t - 1, j);
                }
            }
            d_avg /= len;
            tau_avg /= len;
            AttAverage avg;
            avg.group = g;
            avg.post = post;
            avg.n_periods = len;
            avg.group_size = n;
            avg.delta = d_avg.mean();
            avg.tau = m > 0 ? tau_avg.colwise().mean().transpose().eval() : Eigen::VectorXd(0);
            avg.indirect = m > 0 ? avg.tau.dot(beta) : 0.0;
            avg.eta = avg.delta - avg.indirect;
            if (options.variances) {
                const double denom = static_cast<double>(n - 1);
                Eigen::VectorXd dc = d_avg.array() - avg.delta;
                avg.var_delta = dc.squaredNorm() / denom;
                if (m > 0) {
                    Eigen::MatrixXd tc = tau_avg.rowwise() - avg.tau.transpose();
                    avg.var_indirect = beta.dot((tc.transpose() * tc / denom) * beta);
                    avg.var_eta = (dc - tc * beta).squaredNorm() / denom;
                } else {
                    avg.var_eta = avg.var_delta;
                }
            }
            table.averages.push_back(std::move(avg));
        };
        window_average(g, T, true);
        if (options.placebo && g > 1) window_average(1, g - 1, false);
    }
    return table;
}

} // namespace c2ed2
