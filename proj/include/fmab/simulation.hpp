#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fmab/estimation.hpp"
#include "fmab/model.hpp"

namespace fmab {

struct SimDesign {
    ModelSpec spec;
    ModelParams true_params;  // standardized
    long n = 300;
    int n_reps = 20;
    std::uint64_t seed = 0;
};

/// Quasi-simple-structure design: intercepts uniform on [-3, 3], on-block
/// loadings uniform on [2, 4], off-block on [0, 0.5]; mixture weights fixed
/// at the (0.3, 0.3, 0.4) pattern and the whole mixture standardized.
SimDesign generate_design(int q, int k, std::uint64_t seed, int p = 10, long n = 300,
                          int n_reps = 20);

struct SampleResult {
    PatternTable table;
    std::vector<std::vector<std::uint8_t>> rows;  // uncollapsed responses
    std::vector<int> labels;  // component index per observation, 0-based
    MatrixXd latents;         // n x q
};

SampleResult sample_responses(const ModelParams& params, long n, std::uint64_t seed);

/// Minimum mismatch fraction over all k! relabelings of the estimated
/// labels. Labels are 0-based; k <= 8.
double misclassification_error(const std::vector<int>& true_labels,
                               const std::vector<int>& estimated_labels, int k);

struct StudySummary {
    int n_reps = 0;
    int n_failed = 0;
    // Fraction of replicates where the residual screen accepts each q.
    std::map<int, double> q_screen_rates;
    // Fraction of replicates selecting each k at the design q, per criterion.
    std::map<int, double> k_rates_aic;
    std::map<int, double> k_rates_bic;
    VectorXd intercept_means;
    MatrixXd loading_means;
    VectorXd intercept_rmse;
    MatrixXd loading_rmse;
    double misclass_mean = 0.0;
    double misclass_se = 0.0;
};

/// Replicated Monte-Carlo study: per replicate sample data, apply the
/// forward q-then-k screen up to the design q, select k by AIC and BIC,
/// and score misclassification for the true-specification fit.
StudySummary run_study(const SimDesign& design, const FitConfig& cfg, int k_max = 4);

}  // namespace fmab
