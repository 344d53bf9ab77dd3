#include "fmab/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fmab {

namespace {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Model-implied marginal probability f(y) for one pattern.
double pattern_marginal(const ModelParams& params, const TensorGrid& grid,
                        const std::vector<std::uint8_t>& y) {
    double f = 0.0;
    for (int i = 0; i < params.spec.k; ++i) {
        f += params.mixture.weights[i] *
             component_pattern_likelihood(params, grid, y, i);
    }
    return f;
}

}  // namespace

InformationCriteria information_criteria(double loglik, long n_par, long n) {
    if (n < 1) throw std::invalid_argument("information_criteria: n must be >= 1");
    InformationCriteria ic;
    ic.aic = -2.0 * loglik + 2.0 * n_par;
    ic.bic = -2.0 * loglik + n_par * std::log(static_cast<double>(n));
    return ic;
}

BivariateResidualReport bivariate_residuals(const ModelParams& params, const PatternTable& data,
                                            const TensorGrid& grid, double threshold) {
    params.validate();
    data.validate();
    const int p = params.spec.p;
    const int k = params.spec.k;
    const double n = static_cast<double>(data.n);

    // Model-implied item probabilities at every transformed grid point,
    // per component: pi(i, t, j).
    std::vector<MatrixXd> pi(k);
    std::vector<TensorGrid> grids(k);
    for (int i = 0; i < k; ++i) {
        grids[i] = transform_grid(grid, params.mixture.means[i], params.mixture.covs[i]);
        pi[i] = MatrixXd(grids[i].size(), p);
        for (long t = 0; t < grids[i].size(); ++t) {
            const VectorXd z = grids[i].points.row(t).transpose();
            for (int j = 0; j < p; ++j) {
                pi[i](t, j) =
                    logistic(params.loadings.intercepts[j] + params.loadings.matrix.row(j).dot(z));
            }
        }
    }

    BivariateResidualReport report;
    report.threshold = threshold;

    for (int a = 0; a < p; ++a) {
        for (int b = a + 1; b < p; ++b) {
            // Observed 2x2 margin.
            double obs[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
            for (std::size_t h = 0; h < data.size(); ++h) {
                obs[data.patterns[h][a]][data.patterns[h][b]] +=
                    static_cast<double>(data.counts[h]);
            }
            // Expected margin: mixture of quadrature expectations.
            double exp_cell[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
            for (int i = 0; i < k; ++i) {
                for (long t = 0; t < grids[i].size(); ++t) {
                    const double w =
                        params.mixture.weights[i] * grid.normalizer * grid.weights[t];
                    const double pa = pi[i](t, a);
                    const double pb = pi[i](t, b);
                    exp_cell[1][1] += w * pa * pb;
                    exp_cell[1][0] += w * pa * (1.0 - pb);
                    exp_cell[0][1] += w * (1.0 - pa) * pb;
                    exp_cell[0][0] += w * (1.0 - pa) * (1.0 - pb);
                }
            }
            for (int ya = 0; ya < 2; ++ya) {
                for (int yb = 0; yb < 2; ++yb) {
                    BivariateCell cell;
                    cell.item_a = a;
                    cell.item_b = b;
                    cell.value_a = ya;
                    cell.value_b = yb;
                    cell.observed = obs[ya][yb];
                    cell.expected = n * exp_cell[ya][yb];
                    if (cell.expected < 1e-12) {
                        cell.unstable = true;
                    } else {
                        const double d = cell.observed - cell.expected;
                        cell.residual = d * d / cell.expected;
                        report.max_residual = std::max(report.max_residual, cell.residual);
                    }
                    report.entries.push_back(cell);
                }
            }
        }
    }
    return report;
}

PatternFitTests pattern_fit_tests(const ModelParams& params, const PatternTable& data,
                                  const TensorGrid& grid) {
    params.validate();
    data.validate();
    const double n = static_cast<double>(data.n);

    PatternFitTests tests;
    double expected_mass = 0.0;
    for (std::size_t h = 0; h < data.size(); ++h) {
        const double f = pattern_marginal(params, grid, data.patterns[h]);
        const double e = n * f;
        if (e <= 0.0) {
            throw degeneracy_error("pattern_fit_tests: zero expected mass for an observed pattern");
        }
        const double o = static_cast<double>(data.counts[h]);
        const double d = o - e;
        tests.gf += d * d / e;
        tests.lr += 2.0 * o * std::log(o / e);
        expected_mass += e;
    }
    // Remainder cell covering unobserved patterns (O = 0 there).
    tests.gf += std::max(0.0, n - expected_mass);
    tests.df = static_cast<long>(data.size()) - 1 - count_free_parameters(params.spec);
    return tests;
}

SelectionResult forward_select(const PatternTable& data, int q_max, int k_max,
                               const FitConfig& cfg, const std::string& criterion,
                               double residual_threshold) {
    data.validate();
    if (q_max < 1 || k_max < 1) {
        throw std::invalid_argument("forward_select: q_max and k_max must be >= 1");
    }
    if (q_max > ledermann_max_factors(data.p)) {
        throw std::invalid_argument("forward_select: q_max exceeds the Ledermann bound");
    }
    if (criterion != "aic" && criterion != "bic") {
        throw std::invalid_argument("forward_select: criterion must be 'aic' or 'bic'");
    }

    SelectionResult result;
    result.criterion = criterion;

    for (int q = 1; q <= q_max; ++q) {
        const TensorGrid grid = tensor_grid(q, cfg.quad_points);
        bool screen_passed = false;
        std::vector<SelectionCandidate> level;

        for (int k = 1; k <= k_max; ++k) {
            SelectionCandidate cand;
            cand.q = q;
            cand.k = k;
            try {
                const FitResult r = fit(data, ModelSpec{data.p, q, k}, cfg);
                const auto residuals =
                    bivariate_residuals(r.params, data, grid, residual_threshold);
                cand.fit_ok = true;
                cand.loglik = r.loglik;
                cand.n_par = count_free_parameters(r.params.spec);
                cand.aic = r.aic;
                cand.bic = r.bic;
                cand.max_residual = residuals.max_residual;
                if (cand.max_residual <= residual_threshold) screen_passed = true;
            } catch (const std::exception& e) {
                cand.error = e.what();
            }
            level.push_back(cand);
            result.trace.push_back(cand);
        }

        if (screen_passed) {
            const SelectionCandidate* best = nullptr;
            for (const auto& cand : level) {
                if (!cand.fit_ok) continue;
                const double score = criterion == "aic" ? cand.aic : cand.bic;
                const double best_score =
                    best ? (criterion == "aic" ? best->aic : best->bic)
                         : std::numeric_limits<double>::infinity();
                if (score < best_score) best = &cand;
            }
            result.success = best != nullptr;
            if (best) {
                result.chosen_q = best->q;
                result.chosen_k = best->k;
            }
            return result;
        }
    }
    // No q passed the residual screen; return the trace without a choice.
    return result;
}

}  // namespace fmab
