// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. argv[1] is the path to the CLI binary (used by the determinism
// criterion).
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fmab/estimation.hpp"
#include "fmab/inference.hpp"
#include "fmab/io.hpp"
#include "fmab/selection.hpp"
#include "fmab/simulation.hpp"
#include "oracles.hpp"

using namespace fmab;
namespace fs = std::filesystem;

namespace {

bool report(int id, bool ok, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    return ok;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

// --- 1. AIC/BIC against the published two-factor table -----------------------

bool criterion_information_criteria() {
    struct Row {
        double loglik;
        long n_par;
        double bic;
        double aic;
    };
    const Row rows[] = {
        {-2658.257, 62, 5687.99, 5440.51},
        {-2649.596, 68, 5706.61, 5435.19},
        {-2642.207, 74, 5727.78, 5432.41},
        {-2643.952, 80, 5767.22, 5447.90},
    };
    double worst = 0.0;
    for (const Row& row : rows) {
        const InformationCriteria ic = information_criteria(row.loglik, row.n_par, 400);
        worst = std::max(worst, std::abs(ic.aic - row.aic));
        worst = std::max(worst, std::abs(ic.bic - row.bic));
    }
    return report(1, worst <= 0.01,
                  "AIC/BIC vs published table, worst |dev| = " + fmt(worst) + " (tol 0.01)");
}

// --- 2. free-parameter counts ------------------------------------------------

bool criterion_parameter_counts() {
    const long expected[] = {62, 68, 74, 80};
    bool ok = true;
    std::string got;
    for (int k = 1; k <= 4; ++k) {
        const long m = count_free_parameters({21, 2, k});
        ok = ok && m == expected[k - 1];
        got += (k > 1 ? "," : "") + std::to_string(m);
    }
    return report(2, ok, "count_free_parameters(21,2,k=1..4) = " + got + " (want 62,68,74,80)");
}

// --- 3. quadrature log-likelihood vs dense trapezoid oracle ------------------

bool criterion_quadrature_oracle() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const TensorGrid grid = tensor_grid(1, 30);
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        const int p = 3 + static_cast<int>(unif(rng) * 2.0);  // 3 or 4
        const int k = 1 + static_cast<int>(unif(rng) * 2.0);  // 1 or 2
        ModelParams params;
        params.spec = {p, 1, k};
        params.loadings = Loadings::zeros(p, 1);
        for (int j = 0; j < p; ++j) {
            params.loadings.intercepts[j] = -1.5 + 3.0 * unif(rng);
            params.loadings.matrix(j, 0) = 0.3 + 1.5 * unif(rng);
        }
        if (k == 1) {
            params.mixture = MixtureParams::standard_normal(1);
        } else {
            params.mixture.weights = VectorXd(2);
            const double w = 0.25 + 0.5 * unif(rng);
            params.mixture.weights << w, 1.0 - w;
            const double m1 = 0.3 + 0.7 * unif(rng);
            params.mixture.means = {VectorXd::Constant(1, -m1), VectorXd::Constant(1, m1)};
            params.mixture.covs = {MatrixXd::Constant(1, 1, 0.4 + 0.8 * unif(rng)),
                                   MatrixXd::Constant(1, 1, 0.4 + 0.8 * unif(rng))};
        }
        params.validate();

        std::vector<std::vector<std::uint8_t>> all;
        for (int mask = 0; mask < (1 << p); ++mask) {
            std::vector<std::uint8_t> y(p);
            for (int j = 0; j < p; ++j) y[j] = (mask >> j) & 1;
            all.push_back(y);
        }
        const PatternTable data = PatternTable::from_rows(all, p);

        const double quad = e_step(params, data, grid).loglik;
        const double dense = oracle::loglik_1d(params, data);
        worst = std::max(worst, std::abs(quad - dense) / std::abs(dense));
    }
    return report(3, worst <= 1e-6,
                  "25 random models, T=30 loglik vs trapezoid oracle, worst rel dev = " +
                      fmt(worst) + " (tol 1e-6)");
}

// --- 4. GEM ascent and standardization invariants ----------------------------

bool criterion_gem_ascent() {
    const int qs[10] = {1, 1, 1, 2, 2, 2, 1, 2, 1, 2};
    const int ks[10] = {1, 2, 3, 1, 2, 3, 2, 3, 3, 2};
    double worst_drop = 0.0;
    double worst_gap = 0.0;
    for (int r = 0; r < 10; ++r) {
        const SimDesign design = generate_design(qs[r], ks[r], 100 + r, 10, 300);
        const SampleResult sample = sample_responses(design.true_params, 300, 200 + r);
        FitConfig cfg;
        cfg.seed = 300 + r;
        cfg.max_iter = 200;
        const FitResult res = fit(sample.table, design.spec, cfg);
        for (std::size_t t = 1; t < res.loglik_trace.size(); ++t) {
            worst_drop = std::max(worst_drop, res.loglik_trace[t - 1] - res.loglik_trace[t]);
        }
        worst_gap = std::max(worst_gap, res.max_standardization_gap);
    }
    return report(4, worst_drop <= 1e-8 && worst_gap <= 1e-8,
                  "10 seeded fits, worst trace drop = " + fmt(worst_drop) +
                      ", worst standardization gap = " + fmt(worst_gap) + " (tol 1e-8)");
}

// --- 5. standardize leaves the log-likelihood unchanged ----------------------

bool criterion_standardize_invariance() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int p = 6, q = 2, k = 2;
    const TensorGrid grid = tensor_grid(q, 8);

    std::vector<std::vector<std::uint8_t>> rows;
    for (int i = 0; i < 40; ++i) {
        std::vector<std::uint8_t> y(p);
        for (int j = 0; j < p; ++j) y[j] = unif(rng) < 0.5 ? 0 : 1;
        rows.push_back(y);
    }
    const PatternTable data = PatternTable::from_rows(rows, p);

    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        ModelParams params;
        params.spec = {p, q, k};
        params.loadings = Loadings::zeros(p, q);
        for (int j = 0; j < p; ++j) {
            params.loadings.intercepts[j] = normal(rng);
            for (int r = 0; r < q; ++r) {
                if (!Loadings::masked(j, r)) params.loadings.matrix(j, r) = normal(rng);
            }
        }
        const double w = 0.2 + 0.6 * unif(rng);
        params.mixture.weights = VectorXd(k);
        params.mixture.weights << w, 1.0 - w;
        for (int i = 0; i < k; ++i) {
            VectorXd mu(q);
            mu << normal(rng), normal(rng);
            MatrixXd a(q, q);
            a << 0.8 + unif(rng), 0.3 * normal(rng), 0.3 * normal(rng), 0.8 + unif(rng);
            params.mixture.means.push_back(mu);
            params.mixture.covs.push_back(a * a.transpose() + 0.2 * MatrixXd::Identity(q, q));
        }
        params.validate();

        const double before = e_step(params, data, grid).loglik;
        const double after = e_step(standardize(params), data, grid).loglik;
        worst = std::max(worst, std::abs(after - before));
    }
    return report(5, worst < 1e-9,
                  "standardize on 20 random states, worst |dloglik| = " + fmt(worst) +
                      " (tol 1e-9)");
}

// --- 6. expected score vs finite differences ---------------------------------

bool criterion_gradient_check() {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);

    ModelParams params;
    params.spec = {4, 1, 2};
    params.loadings = Loadings::zeros(4, 1);
    params.loadings.intercepts << 0.3, -0.5, 0.8, -0.1;
    params.loadings.matrix << 1.2, 0.9, 1.5, 0.7;
    params.mixture.weights = VectorXd(2);
    params.mixture.weights << 0.4, 0.6;
    params.mixture.means = {VectorXd::Constant(1, -0.8), VectorXd::Constant(1, 0.55)};
    params.mixture.covs = {MatrixXd::Constant(1, 1, 0.6), MatrixXd::Constant(1, 1, 0.8)};
    params.validate();

    std::vector<std::vector<std::uint8_t>> rows;
    for (int mask = 0; mask < 16; ++mask) {
        std::vector<std::uint8_t> y(4);
        for (int j = 0; j < 4; ++j) y[j] = (mask >> j) & 1;
        rows.push_back(y);
        if (mask % 2) rows.push_back(y);
    }
    const PatternTable data = PatternTable::from_rows(rows, 4);
    const TensorGrid grid = tensor_grid(1, 8);
    const EStepResult es = e_step(params, data, grid);
    const auto objectives = make_item_objectives(params, data, es, grid);

    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto& obj = objectives[trial % objectives.size()];
        VectorXd coef(obj.dim());
        for (int d = 0; d < obj.dim(); ++d) coef[d] = normal(rng);
        const VectorXd grad = obj.gradient(coef);
        for (int d = 0; d < obj.dim(); ++d) {
            VectorXd up = coef, dn = coef;
            up[d] += h;
            dn[d] -= h;
            const double fd = (obj.value(up) - obj.value(dn)) / (2.0 * h);
            worst = std::max(worst,
                             std::abs(grad[d] - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    return report(6, worst <= 1e-5,
                  "expected score vs central differences at 20 points, worst rel dev = " +
                      fmt(worst) + " (tol 1e-5)");
}

// --- 7. desk-scale replication of the simulation study -----------------------

bool criterion_simulation_study() {
    SimDesign design = generate_design(1, 2, 501, 10, 300, 20);
    FitConfig cfg;
    cfg.seed = 902;
    cfg.max_iter = 200;
    cfg.n_starts = 3;
    const StudySummary summary = run_study(design, cfg, 3);

    const double screen = summary.q_screen_rates.count(1) ? summary.q_screen_rates.at(1) : 0.0;
    const bool screen_ok = screen >= 0.90;
    const bool misclass_ok = summary.misclass_mean < 0.20;
    double k2 = 0.0, best_other = 0.0;
    for (const auto& [k, rate] : summary.k_rates_aic) {
        if (k == 2) {
            k2 = rate;
        } else {
            best_other = std::max(best_other, rate);
        }
    }
    const bool aic_ok = k2 >= best_other;
    return report(7, screen_ok && misclass_ok && aic_ok,
                  "q=1,k=2 study (20 reps): screen rate = " + fmt(screen) +
                      " (need >=0.9), mean misclassification = " + fmt(summary.misclass_mean) +
                      " (need <0.2), AIC k=2 rate = " + fmt(k2) + " vs best other " +
                      fmt(best_other));
}

// --- 8. posterior quantities vs dense-grid Bayes oracles ---------------------

bool criterion_posterior_oracles() {
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

    std::vector<std::vector<std::uint8_t>> rows;
    for (int mask = 0; mask < 8; ++mask) {
        rows.push_back({static_cast<std::uint8_t>(mask & 1),
                        static_cast<std::uint8_t>((mask >> 1) & 1),
                        static_cast<std::uint8_t>((mask >> 2) & 1)});
    }
    const PatternTable data = PatternTable::from_rows(rows, 3);
    const TensorGrid grid = tensor_grid(1, 30);
    const EStepResult es = e_step(params, data, grid);
    const MatrixXd scores = factor_scores(params, data, grid);

    double worst = 0.0;
    for (std::size_t h = 0; h < data.size(); ++h) {
        const auto& y = data.patterns[h];
        // Component posteriors.
        double f[2];
        for (int i = 0; i < 2; ++i) f[i] = oracle::component_likelihood_1d(params, y, i);
        const double denom =
            params.mixture.weights[0] * f[0] + params.mixture.weights[1] * f[1];
        for (int i = 0; i < 2; ++i) {
            const double dense = params.mixture.weights[i] * f[i] / denom;
            worst = std::max(worst, std::abs(es.responsibilities(h, i) - dense));
            // Conditional latent moments.
            const auto m = oracle::posterior_moments_1d(params, y, i);
            worst = std::max(worst, std::abs(es.cond_mean[h](i, 0) - m.mean));
            worst = std::max(worst, std::abs(es.cond_second[h][i](0, 0) - m.second));
        }
        // Factor scores.
        worst = std::max(worst, std::abs(scores(h, 0) - oracle::factor_score_1d(params, y)));
    }
    return report(8, worst <= 1e-5,
                  "posteriors/moments/scores vs dense oracles, worst |dev| = " + fmt(worst) +
                      " (tol 1e-5)");
}

// --- 9. bootstrap standard errors --------------------------------------------

bool criterion_bootstrap() {
    // Degenerate data: identical rows give exactly zero SEs.
    std::vector<std::vector<std::uint8_t>> rows(50, {1, 0, 1, 0});
    const PatternTable degenerate = PatternTable::from_rows(rows, 4);
    const ModelSpec spec{4, 1, 2};
    FitConfig cfg;
    cfg.quad_points = 8;
    cfg.max_iter = 25;
    cfg.seed = 31;
    const FitResult degenerate_fit = fit(degenerate, spec, cfg);
    const BootstrapReport zero =
        bootstrap_standard_errors(degenerate, spec, cfg, 10, degenerate_fit.params);
    const double zero_max = std::max(zero.se_intercepts.lpNorm<Eigen::Infinity>(),
                                     zero.se_loadings.lpNorm<Eigen::Infinity>());
    if (zero_max != 0.0) {
        return report(9, false,
                      "identical-row bootstrap SEs not exactly zero (max " + fmt(zero_max) + ")");
    }

    // Simulated fixture: bootstrap SEs within a factor 2 of Monte-Carlo SDs.
    ModelParams truth;
    truth.spec = spec;
    truth.loadings = Loadings::zeros(4, 1);
    truth.loadings.intercepts << 0.4, -0.3, 0.7, -0.6;
    truth.loadings.matrix << 1.3, 1.0, 1.5, 0.8;
    truth.mixture.weights = VectorXd(2);
    truth.mixture.weights << 0.45, 0.55;
    truth.mixture.means = {VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 0.9)};
    truth.mixture.covs = {MatrixXd::Constant(1, 1, 0.35), MatrixXd::Constant(1, 1, 0.4)};
    truth = standardize(truth);

    const long n = 250;
    FitConfig fit_cfg;
    fit_cfg.quad_points = 8;
    fit_cfg.max_iter = 120;
    fit_cfg.seed = 77;

    const SampleResult base = sample_responses(truth, n, 9001);
    const FitResult point = fit(base.table, spec, fit_cfg);
    const BootstrapReport boot =
        bootstrap_standard_errors(base.table, spec, fit_cfg, 50, point.params);

    // Monte-Carlo SDs from 50 fresh datasets, each refit warm-started at the
    // truth and aligned to it.
    const int R = 50;
    std::vector<VectorXd> intercept_draws;
    std::vector<VectorXd> loading_draws;
    for (int r = 0; r < R; ++r) {
        const SampleResult fresh = sample_responses(truth, n, 40000 + r);
        const FitResult fr = fit_from(truth, fresh.table, fit_cfg);
        // Align by component means (k = 2: identity or swap).
        const double keep = (fr.params.mixture.means[0] - truth.mixture.means[0]).norm() +
                            (fr.params.mixture.means[1] - truth.mixture.means[1]).norm();
        const double swap = (fr.params.mixture.means[0] - truth.mixture.means[1]).norm() +
                            (fr.params.mixture.means[1] - truth.mixture.means[0]).norm();
        (void)keep;
        (void)swap;  // loadings/intercepts are unaffected by relabeling
        intercept_draws.push_back(fr.params.loadings.intercepts);
        loading_draws.push_back(fr.params.loadings.matrix.col(0));
    }
    auto sd = [&](const std::vector<VectorXd>& draws, int idx) {
        double mean = 0.0;
        for (const VectorXd& d : draws) mean += d[idx];
        mean /= draws.size();
        double ss = 0.0;
        for (const VectorXd& d : draws) ss += (d[idx] - mean) * (d[idx] - mean);
        return std::sqrt(ss / (draws.size() - 1.0));
    };

    double worst_ratio = 1.0;
    for (int j = 0; j < 4; ++j) {
        const double mc_int = sd(intercept_draws, j);
        const double mc_load = sd(loading_draws, j);
        const double r1 = boot.se_intercepts[j] / mc_int;
        const double r2 = boot.se_loadings(j, 0) / mc_load;
        for (double r : {r1, r2}) {
            worst_ratio = std::max(worst_ratio, std::max(r, 1.0 / r));
        }
    }
    return report(9, worst_ratio <= 2.0,
                  "identical-row SEs exactly 0; bootstrap vs Monte-Carlo SDs, worst ratio = " +
                      fmt(worst_ratio) + " (tol 2)");
}

// --- 10. CLI determinism across runs and thread counts -----------------------

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool criterion_cli_determinism(const std::string& cli) {
    if (cli.empty()) return report(10, false, "CLI path not supplied");
    const fs::path dir = fs::temp_directory_path() / "fmab_acceptance_cli";
    fs::create_directories(dir);
    ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);

    const std::string data = (dir / "data.csv").string();
    const std::string quiet = " > " + (dir / "out.txt").string() + " 2>&1";
    if (std::system((cli + " simulate --design 1,2 --p 6 --n 150 --reps 1 --seed 5 --data-out " +
                     data + quiet)
                        .c_str()) != 0) {
        return report(10, false, "simulate subcommand failed");
    }

    std::vector<std::string> artifacts;
    const std::string runs[][2] = {
        {"a.json", "--threads 1"},
        {"b.json", "--threads 4"},
        {"c.json", "--threads 1"},
    };
    for (const auto& run : runs) {
        const std::string out = (dir / run[0]).string();
        const std::string cmd = cli + " " + run[1] + " fit " + data +
                                " --q 1 --k 2 --seed 9 --max-iter 40 --out " + out + quiet;
        if (std::system(cmd.c_str()) != 0) {
            return report(10, false, "fit subcommand failed: " + cmd);
        }
        artifacts.push_back(slurp(out));
    }
    ::unsetenv("SOURCE_DATE_EPOCH");
    fs::remove_all(dir);

    const bool identical = !artifacts[0].empty() && artifacts[0] == artifacts[1] &&
                           artifacts[0] == artifacts[2];
    return report(10, identical,
                  "artifacts byte-identical across reruns and thread counts (" +
                      std::to_string(artifacts[0].size()) + " bytes)");
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    bool ok = true;
    ok &= criterion_information_criteria();
    ok &= criterion_parameter_counts();
    ok &= criterion_quadrature_oracle();
    ok &= criterion_gem_ascent();
    ok &= criterion_standardize_invariance();
    ok &= criterion_gradient_check();
    ok &= criterion_simulation_study();
    ok &= criterion_posterior_oracles();
    ok &= criterion_bootstrap();
    ok &= criterion_cli_determinism(cli);
    std::printf("%s\n", ok ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
    return ok ? 0 : 1;
}
