#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fmab/inference.hpp"
#include "fmab/simulation.hpp"
#include "oracles.hpp"

using namespace fmab;

namespace {

ModelParams two_component_fixture() {
    ModelParams params;
    params.spec = {3, 1, 2};
    params.loadings = Loadings::zeros(3, 1);
    params.loadings.intercepts << 0.2, -0.4, 0.6;
    params.loadings.matrix << 1.1, 0.9, 1.4;
    params.mixture.weights = VectorXd(2);
    params.mixture.weights << 0.45, 0.55;
    params.mixture.means = {VectorXd::Constant(1, -0.8), VectorXd::Constant(1, 0.7)};
    params.mixture.covs = {MatrixXd::Constant(1, 1, 0.6), MatrixXd::Constant(1, 1, 0.9)};
    params.validate();
    return params;
}

}  // namespace

TEST_CASE("MAP classification") {
    MatrixXd post(3, 3);
    post << 0.2, 0.5, 0.3,  //
        0.7, 0.1, 0.2,      //
        0.4, 0.4, 0.2;      // tie between 0 and 1
    const std::vector<int> labels = classify_map(post);
    REQUIRE(labels.size() == 3);
    CHECK(labels[0] == 1);
    CHECK(labels[1] == 0);
    CHECK(labels[2] == 0);  // ties break to the lowest index
}

TEST_CASE("factor scores") {
    SUBCASE("flat measurement model scores at the mixture mean") {
        ModelParams params = two_component_fixture();
        params.loadings.matrix.setZero();
        // Standardized mixture: overall mean zero.
        params.mixture.means = {VectorXd::Constant(1, -1.1), VectorXd::Constant(1, 0.9)};
        params.mixture.weights << 0.45, 0.55;
        params = standardize(params);
        std::vector<std::vector<std::uint8_t>> rows = {{0, 0, 0}, {1, 1, 1}};
        const PatternTable data = PatternTable::from_rows(rows, 3);
        const TensorGrid grid = tensor_grid(1, 15);
        const MatrixXd scores = factor_scores(params, data, grid);
        REQUIRE(scores.rows() == 2);
        CHECK(scores(0, 0) == doctest::Approx(0.0).epsilon(1e-8));
        CHECK(scores(1, 0) == doctest::Approx(0.0).epsilon(1e-8));
    }
    SUBCASE("matches the dense-grid oracle") {
        const ModelParams params = two_component_fixture();
        std::vector<std::vector<std::uint8_t>> rows = {
            {0, 0, 0}, {1, 0, 1}, {0, 1, 0}, {1, 1, 1}};
        const PatternTable data = PatternTable::from_rows(rows, 3);
        const TensorGrid grid = tensor_grid(1, 30);
        const MatrixXd scores = factor_scores(params, data, grid);
        for (std::size_t h = 0; h < data.size(); ++h) {
            const double dense = oracle::factor_score_1d(params, data.patterns[h]);
            CHECK(scores(h, 0) == doctest::Approx(dense).epsilon(1e-5));
        }
    }
    SUBCASE("positive loadings order the all-ones pattern above all-zeros") {
        const ModelParams params = two_component_fixture();
        std::vector<std::vector<std::uint8_t>> rows = {{0, 0, 0}, {1, 1, 1}};
        const PatternTable data = PatternTable::from_rows(rows, 3);
        const TensorGrid grid = tensor_grid(1, 20);
        const MatrixXd scores = factor_scores(params, data, grid);
        CHECK(scores(1, 0) > scores(0, 0));
    }
}

TEST_CASE("weighted loadings") {
    const ModelParams params = two_component_fixture();
    const std::vector<VectorXd> profiles =
        weighted_loadings(params.loadings, params.mixture);
    REQUIRE(profiles.size() == 2);
    for (int i = 0; i < 2; ++i) {
        const VectorXd expected = params.loadings.matrix * params.mixture.means[i];
        CHECK((profiles[i] - expected).lpNorm<Eigen::Infinity>() < 1e-12);
    }
    // For a standardized mixture the weighted profiles average to zero.
    const ModelParams s = standardize(params);
    const std::vector<VectorXd> std_profiles = weighted_loadings(s.loadings, s.mixture);
    VectorXd avg = VectorXd::Zero(3);
    for (int i = 0; i < 2; ++i) avg += s.mixture.weights[i] * std_profiles[i];
    CHECK(avg.lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("bootstrap rejects a single replicate") {
    const SimDesign design = generate_design(1, 2, 3, 4, 50, 1);
    const SampleResult sample = sample_responses(design.true_params, 50, 1);
    FitConfig cfg;
    cfg.max_iter = 10;
    CHECK_THROWS_AS(
        bootstrap_standard_errors(sample.table, design.spec, cfg, 1, design.true_params),
        std::invalid_argument);
}

TEST_CASE("bootstrap on identical rows yields exactly zero standard errors") {
    std::vector<std::vector<std::uint8_t>> rows(40, {1, 0, 1, 0});
    const PatternTable data = PatternTable::from_rows(rows, 4);
    const ModelSpec spec{4, 1, 2};
    FitConfig cfg;
    cfg.quad_points = 6;
    cfg.max_iter = 15;
    cfg.seed = 2;
    const FitResult point = fit(data, spec, cfg);
    const BootstrapReport report =
        bootstrap_standard_errors(data, spec, cfg, 8, point.params);
    CHECK(report.B == 8);
    CHECK(report.n_failed == 0);
    CHECK(report.se_intercepts.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(report.se_loadings.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(report.se_weights.lpNorm<Eigen::Infinity>() == 0.0);
    for (const VectorXd& se : report.se_means) {
        CHECK(se.lpNorm<Eigen::Infinity>() == 0.0);
    }
    REQUIRE(report.alignment_permutations.size() == 8);
    for (const auto& perm : report.alignment_permutations) {
        CHECK(perm.size() == 2);
    }
}

TEST_CASE("bootstrap standard errors are positive on real variation") {
    const SimDesign design = generate_design(1, 2, 29, 5, 250, 1);
    const SampleResult sample = sample_responses(design.true_params, 250, 17);
    FitConfig cfg;
    cfg.quad_points = 6;
    cfg.max_iter = 60;
    cfg.seed = 4;
    const FitResult point = fit(sample.table, design.spec, cfg);
    const BootstrapReport report =
        bootstrap_standard_errors(sample.table, design.spec, cfg, 6, point.params);
    CHECK(report.B == 6);
    CHECK(report.se_intercepts.minCoeff() > 0.0);
    CHECK(report.se_loadings.col(0).minCoeff() > 0.0);
    // Deterministic given the seed.
    const BootstrapReport again =
        bootstrap_standard_errors(sample.table, design.spec, cfg, 6, point.params);
    CHECK((again.se_intercepts - report.se_intercepts).lpNorm<Eigen::Infinity>() == 0.0);
}
