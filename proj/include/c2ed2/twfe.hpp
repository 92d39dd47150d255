#pragma once

#include <Eigen/Dense>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "panel.hpp"

namespace c2ed2 {

struct TwfeSpec {
    enum class Route { Within, FullDummies };
    bool include_covariates = false;
    Route route = Route::Within;
};

struct TwfeResult {
    std::vector<int> periods;  // calendar period index per dummy, g_min..T
    Eigen::VectorXd delta;     // event-dummy coefficients
    Eigen::VectorXd se;        // conventional homoskedastic standard errors
    Eigen::VectorXd beta;      // covariate slopes when included, else empty
    double sigma2 = 0.0;
    long df_residual = 0;
};

namespace detail {

// two-way within transform for a balanced N x T variable
inline Eigen::MatrixXd demean_two_way(Eigen::MatrixXd m) {
    const Eigen::VectorXd row_means = m.rowwise().mean();
    const Eigen::RowVectorXd col_means = m.colwise().mean();
    const double grand = m.mean();
    m.colwise() -= row_means;
    m.rowwise() -= col_means;
    m.array() += grand;
    return m;
}

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
    Eigen::VectorXd v(m.size());
    Eigen::Index s = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index t = 0; t < m.cols(); ++t) v(s++) = m(i, t);
    return v;
}

inline std::vector<std::string> collinear_columns(const Eigen::MatrixXd& design,
                                                  const std::vector<std::string>& names) {
    std::vector<std::string> bad;
    int prev_rank = 0;
    for (int j = 0; j < design.cols(); ++j) {
        int r = rank_report(design.leftCols(j + 1)).effective_rank;
        if (r == prev_rank) bad.push_back(names[j]);
        prev_rank = r;
    }
    return bad;
}

struct SolvedOls {
    Eigen::VectorXd coef;
    Eigen::MatrixXd xtx_inverse;
    double rss = 0.0;
};

inline SolvedOls solve_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           const std::vector<std::string>& names) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double tol = rank_tolerance(design.rows(), design.cols(), s.size() ? s(0) : 0.0);
    int rank = 0;
    for (Eigen::Index j = 0; j < s.size(); ++j)
        if (s(j) > tol) ++rank;
    if (rank < design.cols()) {
        auto bad = collinear_columns(design, names);
        std::ostringstream msg;
        msg << "collinear design columns:";
        for (const auto& b : bad) msg << ' ' << b;
        throw NumericalError(msg.str(), rank,
                             s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1)
                                                 : std::numeric_limits<double>::infinity());
    }
    SolvedOls out;
    Eigen::VectorXd utb = svd.matrixU().transpose() * response;
    out.coef = svd.matrixV() * (utb.array() / s.array()).matrix();
    out.xtx_inverse =
        svd.matrixV() * s.array().square().inverse().matrix().asDiagonal() * svd.matrixV().transpose();
    out.rss = (response - design * out.coef).squaredNorm();
    return out;
}

} // namespace detail

// event-study regression: unit and period effects plus one dummy per calendar
// period from g_min on, active for treated units once their treatment starts
inline TwfeResult twfe_event_study(const PanelDataset& data, const GroupIndex& index,
                                   const TwfeSpec& spec = {}) {
    const int n = data.n_units;
    const int T = data.n_periods;
    const int m = spec.include_covariates ? data.n_covariates : 0;
    const int q = T - index.g_min + 1;
    if (q <= 0)
        throw ValidationError("no post-treatment periods for the event study");

    std::vector<Eigen::MatrixXd> dummies;
    std::vector<std::string> dummy_names;
    for (int t = index.g_min; t <= T; ++t) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, T);
        for (int i = 0; i < n; ++i)
            if (data.groups[i].is_treated() && t >= data.groups[i].period_index)
                d(i, t - 1) = 1.0;
        dummies.push_back(std::move(d));
        std::ostringstream nm;
        nm << "event_" << detail::format_g(data.period_labels[t - 1]);
        dummy_names.push_back(nm.str());
    }

    TwfeResult res;
    for (int t = index.g_min; t <= T; ++t) res.periods.push_back(t);

    if (spec.route == TwfeSpec::Route::Within) {
        Eigen::MatrixXd design(static_cast<Eigen::Index>(n) * T, q + m);
        std::vector<std::string> names;
        for (int j = 0; j < q; ++j) {
            design.col(j) = detail::flatten(detail::demean_two_way(dummies[j]));
            names.push_back(dummy_names[j]);
        }
        for (int j = 0; j < m; ++j) {
            design.col(q + j) = detail::flatten(detail::demean_two_way(data.covariates[j]));
            names.push_back("covariate_" + std::to_string(j + 1));
        }
        Eigen::VectorXd response = detail::flatten(detail::demean_two_way(data.outcomes));
        auto sol = detail::solve_ols(design, response, names);
        res.df_residual = static_cast<long>(n) * T - (n + T - 1) - q - m;
        res.sigma2 = res.df_residual > 0 ? sol.rss / static_cast<double>(res.df_residual)
                                         : std::numeric_limits<double>::quiet_NaN();
        res.delta = sol.coef.head(q);
        res.beta = sol.coef.tail(m);
        res.se = (res.sigma2 * sol.xtx_inverse.diagonal().head(q).array()).sqrt();
    } else {
        const int p = 1 + (n - 1) + (T - 1) + q + m;
        Eigen::MatrixXd design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * T, p);
        std::vector<std::string> names;
        Eigen::VectorXd response(static_cast<Eigen::Index>(n) * T);
        names.push_back("intercept");
        for (int i = 1; i < n; ++i) names.push_back("unit_" + data.unit_ids[i]);
        for (int t = 2; t <= T; ++t)
            names.push_back("period_" + detail::format_g(data.period_labels[t - 1]));
        for (const auto& nm : dummy_names) names.push_back(nm);
        for (int j = 0; j < m; ++j) names.push_back("covariate_" + std::to_string(j + 1));

        Eigen::Index row = 0;
        for (int i = 0; i < n; ++i)
            for (int t = 1; t <= T; ++t, ++row) {
                design(row, 0) = 1.0;
                if (i >= 1) design(row, i) = 1.0; // unit dummies occupy cols 1..n-1
                if (t >= 2) design(row, n - 1 + t - 1) = 1.0;
                for (int j = 0; j < q; ++j)
                    design(row, n + T - 1 + j) = dummies[j](i, t - 1);
                for (int j = 0; j < m; ++j)
                    design(row, n + T - 1 + q + j) = data.covariates[j](i, t - 1);
                response(row) = data.outcomes(i, t - 1);
            }
        auto sol = detail::solve_ols(design, response, names);
        res.df_residual = static_cast<long>(n) * T - p;
        res.sigma2 = res.df_residual > 0 ? sol.rss / static_cast<double>(res.df_residual)
                                         : std::numeric_limits<double>::quiet_NaN();
        res.delta = sol.coef.segment(n + T - 1, q);
        res.beta = sol.coef.tail(m);
        res.se = (res.sigma2 *
                  sol.xtx_inverse.diagonal().segment(n + T - 1, q).array()).sqrt();
    }
    return res;
}

} // namespace c2ed2
