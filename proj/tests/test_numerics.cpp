#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "c2ed2/numerics.hpp"

using c2ed2::Annihilator;
using c2ed2::annihilate;
using c2ed2::least_squares;
using c2ed2::rank_report;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& gen, int rows, int cols) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            m(i, j) = nd(gen);
    return m;
}

} // namespace

TEST_CASE("least_squares on a column of ones is the mean") {
    Eigen::MatrixXd design = Eigen::MatrixXd::Ones(3, 1);
    Eigen::MatrixXd response(3, 1);
    response << 1, 2, 3;
    auto coef = least_squares(design, response);
    REQUIRE(coef.rows() == 1);
    REQUIRE(coef(0, 0) == Catch::Approx(2.0).margin(1e-14));
}

TEST_CASE("least_squares with square nonsingular design solves exactly") {
    std::mt19937_64 gen(7);
    Eigen::MatrixXd design = random_matrix(gen, 4, 4);
    auto coef = least_squares(design, design);
    REQUIRE((coef - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-10);
}

TEST_CASE("least_squares recovers exact coefficients without noise") {
    std::mt19937_64 gen(11);
    Eigen::MatrixXd design = random_matrix(gen, 50, 3);
    Eigen::VectorXd truth(3);
    truth << 1, -2, 0.5;
    Eigen::MatrixXd response = design * truth;
    auto coef = least_squares(design, response);
    REQUIRE((coef - truth).norm() < 1e-10);
    REQUIRE((design * coef - response).norm() < 1e-10);
}

TEST_CASE("least_squares residuals are orthogonal to the design") {
    std::mt19937_64 gen(13);
    for (int rep = 0; rep < 20; ++rep) {
        int p = 5 + static_cast<int>(gen() % 60);
        int q = 1 + static_cast<int>(gen() % 5);
        Eigen::MatrixXd design = random_matrix(gen, p, q);
        Eigen::MatrixXd response = random_matrix(gen, p, 2);
        auto coef = least_squares(design, response);
        Eigen::MatrixXd resid = response - design * coef;
        REQUIRE((design.transpose() * resid).norm() <=
                1e-8 * design.norm() * response.norm());
    }
}

TEST_CASE("least_squares rejects rank-deficient designs with diagnostics") {
    Eigen::MatrixXd design(5, 2);
    design.col(0) = Eigen::VectorXd::LinSpaced(5, 1, 5);
    design.col(1) = 2.0 * design.col(0);
    Eigen::MatrixXd response = Eigen::VectorXd::Ones(5);
    try {
        least_squares(design, response);
        FAIL("expected NumericalError");
    } catch (const c2ed2::NumericalError& e) {
        REQUIRE(e.effective_rank == 1);
        REQUIRE(e.condition > 1e10);
    }
}

TEST_CASE("least_squares rejects wide designs") {
    Eigen::MatrixXd design = Eigen::MatrixXd::Ones(2, 3);
    Eigen::MatrixXd response = Eigen::VectorXd::Ones(2);
    REQUIRE_THROWS_AS(least_squares(design, response), c2ed2::NumericalError);
}

TEST_CASE("annihilate against a constant column demeans") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(4, 1);
    Eigen::VectorXd b(4);
    b << 1, 2, 3, 4;
    Eigen::MatrixXd out = annihilate(a, b);
    Eigen::VectorXd expect(4);
    expect << -1.5, -0.5, 0.5, 1.5;
    REQUIRE((out - expect).norm() < 1e-12);
}

TEST_CASE("annihilate maps the source matrix to zero") {
    std::mt19937_64 gen(17);
    Eigen::MatrixXd a = random_matrix(gen, 6, 2);
    REQUIRE(annihilate(a, a).norm() < 1e-12 * a.norm());
}

TEST_CASE("annihilate is idempotent") {
    std::mt19937_64 gen(19);
    Eigen::MatrixXd a = random_matrix(gen, 6, 2);
    Eigen::MatrixXd b = random_matrix(gen, 6, 3);
    Eigen::MatrixXd once = annihilate(a, b);
    Eigen::MatrixXd twice = annihilate(a, once);
    REQUIRE((twice - once).norm() < 1e-12 * (1.0 + once.norm()));
}

TEST_CASE("annihilator with full row rank source is the zero map") {
    std::mt19937_64 gen(23);
    Eigen::MatrixXd a = random_matrix(gen, 3, 3);
    Eigen::MatrixXd b = random_matrix(gen, 3, 2);
    REQUIRE(annihilate(a, b).norm() < 1e-10 * b.norm());
}

TEST_CASE("annihilator projection is symmetric and idempotent on random instances") {
    std::mt19937_64 gen(29);
    std::uniform_int_distribution<int> rows_d(2, 500), cols_d(1, 10);
    for (int rep = 0; rep < 30; ++rep) {
        int p = rows_d(gen);
        int q = std::min(cols_d(gen), p);
        Eigen::MatrixXd a = random_matrix(gen, p, q);
        if (rep % 3 == 0 && q >= 2) a.col(q - 1) = a.col(0); // exact collinearity
        Annihilator ann(a);
        Eigen::MatrixXd m = ann.matrix();
        REQUIRE((m - m.transpose()).norm() < 1e-10);
        REQUIRE((m * m - m).norm() < 1e-10);
        REQUIRE((m * a).norm() < 1e-10 * (1.0 + a.norm()));
        REQUIRE(ann.rank() == rank_report(a).effective_rank);
    }
}

TEST_CASE("annihilator apply matches explicit projection matrix") {
    std::mt19937_64 gen(31);
    Eigen::MatrixXd a = random_matrix(gen, 12, 4);
    Eigen::MatrixXd b = random_matrix(gen, 12, 5);
    Annihilator ann(a);
    REQUIRE((ann.apply(b) - ann.matrix() * b).norm() < 1e-12 * b.norm());
    REQUIRE_THROWS_AS(ann.apply(random_matrix(gen, 11, 2)), c2ed2::NumericalError);
}

TEST_CASE("rank_report on the identity") {
    auto rep = rank_report(Eigen::MatrixXd::Identity(3, 3));
    REQUIRE(rep.effective_rank == 3);
    REQUIRE(rep.condition == Catch::Approx(1.0));
}

TEST_CASE("rank_report detects a duplicated column as a deficit of one") {
    std::mt19937_64 gen(37);
    Eigen::MatrixXd a = random_matrix(gen, 8, 4);
    a.col(3) = a.col(1);
    auto rep = rank_report(a);
    REQUIRE(rep.effective_rank == 3);
}

TEST_CASE("rank_report honors an explicit relative tolerance") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 3);
    a(0, 0) = 1.0;
    a(1, 1) = 1e-6;
    a(2, 2) = 1e-12;
    REQUIRE(rank_report(a, 1e-9).effective_rank == 2);
    REQUIRE(rank_report(a, 1e-3).effective_rank == 1);
}

TEST_CASE("rank_report judges rank against an external scale when given") {
    // a residual matrix of pure roundoff: full rank relative to itself,
    // rank zero relative to the magnitude it was computed from
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 2);
    a(0, 0) = 2e-16;
    a(1, 1) = 1e-16;
    a(2, 0) = -5e-17;
    REQUIRE(rank_report(a).effective_rank == 2);
    REQUIRE(rank_report(a, -1.0, 1.0).effective_rank == 0);

    // a genuine full-rank matrix keeps its rank under its own scale reference
    Eigen::MatrixXd b = Eigen::MatrixXd::Identity(4, 2);
    REQUIRE(rank_report(b, -1.0, b.norm()).effective_rank == 2);
}
