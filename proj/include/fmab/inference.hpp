#pragma once

#include <vector>

#include "fmab/estimation.hpp"
#include "fmab/model.hpp"

namespace fmab {

/// Index of the maximal posterior per row; ties break to the lowest index.
std::vector<int> classify_map(const MatrixXd& posteriors);

/// Posterior factor scores E[z | y] per distinct pattern.
MatrixXd factor_scores(const ModelParams& params, const PatternTable& data,
                       const TensorGrid& grid);

/// Cluster profiles Lambda mu_i, one length-p vector per component.
std::vector<VectorXd> weighted_loadings(const Loadings& loadings, const MixtureParams& mixture);

struct BootstrapReport {
    int B = 0;
    VectorXd se_intercepts;
    MatrixXd se_loadings;
    int n_failed = 0;
    std::vector<std::vector<int>> alignment_permutations;
    // Supplementary mixture-parameter SEs under the same alignment.
    VectorXd se_weights;
    std::vector<VectorXd> se_means;
};

/// Nonparametric bootstrap: B observation-level resamples, each refit
/// warm-started at the point estimate, components aligned to it by the
/// mean-distance-minimizing permutation.
BootstrapReport bootstrap_standard_errors(const PatternTable& data, const ModelSpec& spec,
                                          const FitConfig& cfg, int B,
                                          const ModelParams& point_estimate);

}  // namespace fmab
