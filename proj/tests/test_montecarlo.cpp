#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "c2ed2/estimator.hpp"
#include "c2ed2/montecarlo.hpp"
#include "c2ed2/rng.hpp"

using namespace c2ed2;

TEST_CASE("substreams are deterministic and distinct") {
    auto a1 = substream(42, 0);
    auto a2 = substream(42, 0);
    REQUIRE(a1() == a2());
    REQUIRE(a1() == a2());

    auto b = substream(42, 1);
    auto c = substream(43, 0);
    std::set<std::uint64_t> firsts{substream(42, 0)(), b(), c()};
    REQUIRE(firsts.size() == 3);
}

TEST_CASE("zero-noise generator matches the closed form") {
    DgpConfig config;
    config.n_units = 10;
    config.n_periods = 9;
    config.g_treat = 7;
    config.delta_g = 1.0;
    config.tau_g = {0.5, -0.25};
    config.noise_scale = 0.0;
    config.unit_loadings = true;
    config.seed = 7;

    auto rng = substream(config.seed, 0);
    auto gen = generate(config, rng);

    // lambda = I, alpha = (1,1): x(inf) = (1,t), y(inf) = 2(1+t)
    for (int i = 0; i < config.n_units; ++i) {
        const bool treated = gen.data.groups[i].is_treated();
        for (int t = 1; t <= config.n_periods; ++t) {
            const bool post = treated && t >= config.g_treat;
            REQUIRE(gen.x_untreated[0](i, t - 1) == 1.0);
            REQUIRE(gen.x_untreated[1](i, t - 1) == static_cast<double>(t));
            REQUIRE(gen.y_untreated(i, t - 1) == 2.0 * (1.0 + t));
            REQUIRE(gen.data.covariates[0](i, t - 1) ==
                    1.0 + (post ? config.tau_g(0) : 0.0));
            REQUIRE(gen.data.covariates[1](i, t - 1) ==
                    static_cast<double>(t) + (post ? config.tau_g(1) : 0.0));
            REQUIRE(gen.data.outcomes(i, t - 1) ==
                    2.0 * (1.0 + t) + (post ? config.delta_g : 0.0));
        }
    }
    int n_treated = 0;
    for (const auto& g : gen.data.groups) n_treated += g.is_treated();
    REQUIRE(n_treated == 5);
}

TEST_CASE("generated treatment shifts equal the configured truths exactly") {
    DgpConfig config;
    config.delta_g = 2.0;
    config.tau_g = {0.0, 1.0};
    config.seed = 11;
    auto rng = substream(config.seed, 3);
    auto gen = generate(config, rng);

    REQUIRE(gen.delta_truth == 2.0);
    REQUIRE(gen.indirect_truth == 1.0);
    REQUIRE(gen.eta_truth == 1.0);

    // bitwise: each observed cell is the retained untreated value plus the
    // configured shift, applied as a single addition
    for (int i = 0; i < config.n_units; ++i) {
        const bool treated = gen.data.groups[i].is_treated();
        for (int t = 1; t <= config.n_periods; ++t) {
            const bool post = treated && t >= config.g_treat;
            const double y0 = gen.y_untreated(i, t - 1);
            REQUIRE(gen.data.outcomes(i, t - 1) == (post ? y0 + 2.0 : y0));
            REQUIRE(gen.data.covariates[0](i, t - 1) == gen.x_untreated[0](i, t - 1));
            const double x1 = gen.x_untreated[1](i, t - 1);
            REQUIRE(gen.data.covariates[1](i, t - 1) == (post ? x1 + 1.0 : x1));
        }
    }
}

TEST_CASE("effect scenarios carry the documented truths") {
    auto scenarios = effect_scenarios();
    REQUIRE(scenarios.size() == 2);
    REQUIRE(scenarios[0].delta == 1.0);
    REQUIRE(scenarios[0].tau.isZero());
    REQUIRE(scenarios[1].delta == 2.0);
    REQUIRE(scenarios[1].tau(0) == 0.0);
    REQUIRE(scenarios[1].tau(1) == 1.0);

    DgpConfig config;
    config.delta_g = scenarios[1].delta;
    config.tau_g = scenarios[1].tau;
    auto rng = substream(1, 0);
    auto gen = generate(config, rng);
    REQUIRE(gen.delta_truth == 2.0);
    REQUIRE(gen.indirect_truth == 1.0);
    REQUIRE(gen.eta_truth == 1.0);
}

TEST_CASE("config validation rejects out-of-range parameters") {
    DgpConfig config;
    config.g_treat = 1;
    REQUIRE_THROWS_AS(config.validate(), ValidationError);
    config.g_treat = 10;
    REQUIRE_THROWS_AS(config.validate(), ValidationError);
    config = DgpConfig{};
    config.treated_fraction = 1.0;
    REQUIRE_THROWS_AS(config.validate(), ValidationError);
    config = DgpConfig{};
    config.rho = 1.0;
    REQUIRE_THROWS_AS(config.validate(), ValidationError);
    config = DgpConfig{};
    REQUIRE_NOTHROW(config.validate());
}

TEST_CASE("pooled slope estimates center on the data-generating coefficients") {
    DgpConfig config;
    config.seed = 404;
    Eigen::Vector2d mean_beta = Eigen::Vector2d::Zero();
    const int reps = 300;
    for (int rep = 0; rep < reps; ++rep) {
        auto rng = substream(config.seed, rep);
        auto gen = generate(config, rng);
        auto index = build_group_index(gen.data);
        auto factors = estimate_factors(gen.data, index);
        auto fit = fit_pretreatment(gen.data, index, factors);
        mean_beta += fit.beta;
    }
    mean_beta /= reps;
    REQUIRE(std::abs(mean_beta(0) - 1.0) <= 0.02);
    REQUIRE(std::abs(mean_beta(1) - 1.0) <= 0.02);
}

TEST_CASE("near-noiseless study recovers the truths almost exactly") {
    DgpConfig config;
    config.noise_scale = 1e-8;
    config.seed = 99;
    config.delta_g = 1.5;
    config.tau_g = {0.25, 0.25};
    auto report =
        run_study(config, {EstimatorKind::Cce, EstimatorKind::Ols}, 1, 1);
    REQUIRE(report.failures == 0);
    REQUIRE(report.n_reps == 1);
    // only the total effect is pinned down in this limit: the slope signal
    // shrinks with the noise, so the split between channels retains
    // scale-invariant sampling error while the total cancels it exactly
    auto row_of = [&](const std::string& key, int period) -> const McRow& {
        for (const auto& row : report.rows)
            if (row.estimator == key && row.period == period) return row;
        FAIL("missing row");
        return report.rows.front();
    };
    for (int p = 7; p <= 9; ++p) {
        const auto& total = row_of("cce", p);
        REQUIRE(std::abs(total.bias) <= 1e-4);
        REQUIRE(total.mse <= 1e-8);
        const auto& direct = row_of("cce_direct", p);
        const auto& indirect = row_of("cce_indirect", p);
        REQUIRE(direct.bias + indirect.bias == Catch::Approx(total.bias).margin(1e-10));
    }
}

TEST_CASE("report layout and moment inequality hold on a moderate study") {
    DgpConfig config;
    config.seed = 2024;
    auto report = run_study(
        config,
        {EstimatorKind::Cce, EstimatorKind::Ols, EstimatorKind::OlsWithCovariates}, 40,
        1);
    REQUIRE(report.failures == 0);
    REQUIRE(report.rows.size() == 5 * 3);  // cce triple + two baselines, periods 7..9

    std::set<std::string> keys;
    for (const auto& row : report.rows) {
        keys.insert(row.estimator);
        REQUIRE(row.period >= 7);
        REQUIRE(row.period <= 9);
        REQUIRE(row.mse >= row.bias * row.bias - 1e-12);
        REQUIRE(row.coverage >= 0.0);
        REQUIRE(row.coverage <= 1.0);
    }
    REQUIRE(keys ==
            std::set<std::string>{"cce", "cce_direct", "cce_indirect", "ols", "ols_cov"});
}

TEST_CASE("studies are bitwise reproducible across thread counts") {
    DgpConfig config;
    config.seed = 31337;
    const std::vector<EstimatorKind> est{EstimatorKind::Cce, EstimatorKind::Ols};
    auto one = run_study(config, est, 12, 1);
    auto three = run_study(config, est, 12, 3);
    auto four = run_study(config, est, 12, 4);

    REQUIRE(one.rows.size() == three.rows.size());
    for (size_t i = 0; i < one.rows.size(); ++i) {
        REQUIRE(one.rows[i].estimator == three.rows[i].estimator);
        REQUIRE(one.rows[i].period == three.rows[i].period);
        REQUIRE(one.rows[i].bias == three.rows[i].bias);
        REQUIRE(one.rows[i].mse == three.rows[i].mse);
        REQUIRE(one.rows[i].coverage == three.rows[i].coverage);
        REQUIRE(one.rows[i].bias == four.rows[i].bias);
        REQUIRE(one.rows[i].mse == four.rows[i].mse);
        REQUIRE(one.rows[i].coverage == four.rows[i].coverage);
    }
    REQUIRE(summarize(one, SummaryFormat::Text) == summarize(four, SummaryFormat::Text));
    REQUIRE(summarize(one, SummaryFormat::Csv) == summarize(four, SummaryFormat::Csv));
}

TEST_CASE("replication failures are counted and excluded, never fatal") {
    DgpConfig config;
    config.g_treat = 2;  // one pre period, far below what the fit requires
    config.seed = 5;
    auto report = run_study(config, {EstimatorKind::Cce}, 3, 1);
    REQUIRE(report.failures == 3);
    for (const auto& row : report.rows) {
        REQUIRE(row.bias == 0.0);
        REQUIRE(row.mse == 0.0);
    }
}

TEST_CASE("biases vanish with the panel size under equal loading means") {
    DgpConfig small;
    small.seed = 777;
    DgpConfig large = small;
    large.n_units = 656;

    const std::vector<EstimatorKind> est{EstimatorKind::Cce, EstimatorKind::Ols};
    auto rs = run_study(small, est, 200, 1);
    auto rl = run_study(large, est, 200, 1);
    REQUIRE(rs.failures == 0);
    REQUIRE(rl.failures == 0);

    auto check = [](const McReport& r, const std::string& key) {
        for (const auto& row : r.rows)
            if (row.estimator == key) {
                const double mc_se = std::sqrt(row.mse / r.n_reps);
                REQUIRE(std::abs(row.bias) <= 4.0 * mc_se + 1e-3);
            }
    };
    check(rs, "cce");
    check(rs, "ols");
    check(rl, "cce");
    check(rl, "ols");

    // sampling error shrinks roughly like 1/N
    auto mse_of = [](const McReport& r, const std::string& key, int period) {
        for (const auto& row : r.rows)
            if (row.estimator == key && row.period == period) return row.mse;
        FAIL("missing row");
        return 0.0;
    };
    for (int p = 7; p <= 9; ++p) {
        REQUIRE(mse_of(rl, "cce", p) < mse_of(rs, "cce", p));
        REQUIRE(mse_of(rl, "ols", p) < mse_of(rs, "ols", p));
    }
}

TEST_CASE("presets define the two loading-mean settings and reject others") {
    auto t1 = preset_config("table1", 9);
    REQUIRE(t1.theta.isZero());
    auto t2 = preset_config("table2", 9);
    REQUIRE(t2.theta(0) == 0.0);
    REQUIRE(t2.theta(1) == 1.0);
    REQUIRE(t1.seed == 9);
    REQUIRE_THROWS_AS(preset_config("table3", 9), ValidationError);
}

TEST_CASE("preset studies emit the two-scenario table with coverage extras") {
    auto reports = run_preset("table1", 3, 123, 1);
    REQUIRE(reports.size() == 2);
    REQUIRE(reports[0].scenario == "direct effect only");
    REQUIRE(reports[1].scenario == "direct and indirect effects");
    REQUIRE(reports[0].seed == 123);

    // headline cells: 3 estimators x 2 scenarios x 3 periods x 2 stats
    int headline_cells = 0;
    for (const auto& report : reports)
        for (const auto& row : report.rows)
            if (row.estimator == "cce" || row.estimator == "ols" ||
                row.estimator == "ols_cov")
                headline_cells += 2;
    REQUIRE(headline_cells == 36);

    auto text = summarize(reports[0], SummaryFormat::Text);
    REQUIRE(text.find("direct effect only") != std::string::npos);
    REQUIRE(text.find("extra") != std::string::npos);
    REQUIRE(text.find("BIAS(t=7)") != std::string::npos);

    auto csv = summarize(reports[1], SummaryFormat::Csv);
    REQUIRE(csv.rfind("scenario,estimator,period,bias,mse,coverage\n", 0) == 0);
    int lines = 0;
    for (char ch : csv) lines += ch == '\n';
    REQUIRE(lines == 1 + 15);

    // the two scenarios must not share replication draws
    REQUIRE(reports[0].config.seed != reports[1].config.seed);
}

TEST_CASE("summary text renders one row per estimator in a fixed order") {
    DgpConfig config;
    config.seed = 8;
    auto report = run_study(config, {EstimatorKind::Ols}, 2, 1);
    report.scenario = "direct effect only";
    auto text = summarize(report, SummaryFormat::Text);
    REQUIRE(text.find("ols") != std::string::npos);
    REQUIRE(text.find("cce") == std::string::npos);

    McReport empty;
    REQUIRE_THROWS_AS(summarize(empty, SummaryFormat::Text), ValidationError);
}
