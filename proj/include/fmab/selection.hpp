#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fmab/estimation.hpp"
#include "fmab/model.hpp"

namespace fmab {

struct InformationCriteria {
    double aic = 0.0;
    double bic = 0.0;
};

/// AIC = -2 logL + 2 #par, BIC = -2 logL + #par log n.
InformationCriteria information_criteria(double loglik, long n_par, long n);

struct BivariateCell {
    int item_a = 0;
    int item_b = 0;
    int value_a = 0;
    int value_b = 0;
    double observed = 0.0;
    double expected = 0.0;
    double residual = 0.0;  // (O - E)^2 / E
    bool unstable = false;  // expected count below 1e-12; residual not computed
};

struct BivariateResidualReport {
    std::vector<BivariateCell> entries;
    double max_residual = 0.0;
    double threshold = 4.0;
};

/// Pearson residuals on every 2x2 bivariate margin of the fitted model.
BivariateResidualReport bivariate_residuals(const ModelParams& params, const PatternTable& data,
                                            const TensorGrid& grid, double threshold = 4.0);

struct PatternFitTests {
    double gf = 0.0;  // Pearson chi-square over observed patterns plus a remainder cell
    double lr = 0.0;  // likelihood-ratio statistic
    long df = 0;      // (#distinct observed patterns - 1) - #par
    std::string df_convention = "(distinct observed patterns - 1) - free parameters";
};

PatternFitTests pattern_fit_tests(const ModelParams& params, const PatternTable& data,
                                  const TensorGrid& grid);

struct SelectionCandidate {
    int q = 0;
    int k = 0;
    bool fit_ok = false;
    std::string error;
    double loglik = 0.0;
    long n_par = 0;
    double aic = 0.0;
    double bic = 0.0;
    double max_residual = 0.0;
};

struct SelectionResult {
    bool success = false;
    int chosen_q = 0;
    int chosen_k = 0;
    std::string criterion;  // "aic" or "bic"
    std::vector<SelectionCandidate> trace;
};

/// Forward q-then-k selection: raise q from 1 until the bivariate residual
/// screen passes for at least one k, then pick k at that q by the
/// information criterion (AIC by default).
SelectionResult forward_select(const PatternTable& data, int q_max, int k_max,
                               const FitConfig& cfg, const std::string& criterion = "aic",
                               double residual_threshold = 4.0);

}  // namespace fmab
