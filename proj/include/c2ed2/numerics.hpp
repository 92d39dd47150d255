#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <sstream>
#include <utility>

#include "errors.hpp"

namespace c2ed2 {

// numerical rank cutoff: eps * max(p,q) * s_max, the usual SVD rule
inline double rank_tolerance(Eigen::Index rows, Eigen::Index cols, double smax) {
    return std::numeric_limits<double>::epsilon() *
           static_cast<double>(std::max(rows, cols)) * smax;
}

struct RankReport {
    int effective_rank = 0;
    double condition = 0.0; // largest / smallest retained singular value
};

// scale, when given, replaces s_max as the reference magnitude: a matrix that
// is pure roundoff relative to the quantities it was computed from has rank 0
// even though its own singular values look fine relative to each other
inline RankReport rank_report(const Eigen::MatrixXd& a, double rel_tol = -1.0,
                              double scale = -1.0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return {0, 0.0};
    const double smax = s(0);
    if (smax == 0.0) return {0, 0.0};
    const double ref = scale >= 0.0 ? scale : smax;
    const double tol = rel_tol >= 0.0 ? rel_tol * ref : rank_tolerance(a.rows(), a.cols(), ref);
    int r = 0;
    for (Eigen::Index j = 0; j < s.size(); ++j)
        if (s(j) > tol) ++r;
    RankReport rep;
    rep.effective_rank = r;
    rep.condition = r > 0 ? smax / s(r - 1) : 0.0;
    return rep;
}

// least squares through the SVD; throws on rank deficiency so callers can
// surface the failed rank condition rather than silently regularizing
inline Eigen::MatrixXd least_squares(const Eigen::MatrixXd& design,
                                     const Eigen::MatrixXd& response) {
    if (design.rows() < design.cols())
        throw NumericalError("least_squares: fewer rows than columns",
                             0, std::numeric_limits<double>::infinity());
    if (design.rows() != response.rows())
        throw NumericalError("least_squares: design and response row counts differ",
                             0, std::numeric_limits<double>::infinity());
    if (design.cols() == 0)
        return Eigen::MatrixXd(0, response.cols());

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double smax = s(0);
    const double tol = rank_tolerance(design.rows(), design.cols(), smax);
    int rank = 0;
    for (Eigen::Index j = 0; j < s.size(); ++j)
        if (s(j) > tol) ++rank;
    if (rank < design.cols()) {
        const double cond = (rank > 0 && s(s.size() - 1) > 0.0) ? smax / s(s.size() - 1)
                                                                : std::numeric_limits<double>::infinity();
        std::ostringstream msg;
        msg << "least_squares: rank-deficient design (effective rank " << rank
            << " of " << design.cols() << ")";
        throw NumericalError(msg.str(), rank, cond);
    }

    Eigen::MatrixXd ut_b = svd.matrixU().transpose() * response;
    for (Eigen::Index j = 0; j < s.size(); ++j)
        ut_b.row(j) /= s(j);
    return svd.matrixV() * ut_b;
}

// projection onto the orthogonal complement of col(A), factored once and
// applied as B - U_r (U_r' B) so rank-deficient A is handled exactly
class Annihilator {
public:
    explicit Annihilator(Eigen::MatrixXd a) : source_(std::move(a)) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(source_, Eigen::ComputeThinU);
        const auto& s = svd.singularValues();
        int r = 0;
        if (s.size() > 0 && s(0) > 0.0) {
            const double tol = rank_tolerance(source_.rows(), source_.cols(), s(0));
            for (Eigen::Index j = 0; j < s.size(); ++j)
                if (s(j) > tol) ++r;
        }
        rank_ = r;
        basis_ = svd.matrixU().leftCols(r);
    }

    const Eigen::MatrixXd& source() const { return source_; }
    int rank() const { return rank_; }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& b) const {
        if (b.rows() != source_.rows())
            throw NumericalError("Annihilator::apply: row count mismatch",
                                 rank_, 0.0);
        return b - basis_ * (basis_.transpose() * b);
    }

    Eigen::MatrixXd matrix() const {
        const Eigen::Index p = source_.rows();
        return Eigen::MatrixXd::Identity(p, p) - basis_ * basis_.transpose();
    }

private:
    Eigen::MatrixXd source_;
    Eigen::MatrixXd basis_; // orthonormal basis of col(A)
    int rank_;
};

inline Eigen::MatrixXd annihilate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return Annihilator(a).apply(b);
}

} // namespace c2ed2
