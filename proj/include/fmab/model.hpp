#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fmab/errors.hpp"

namespace fmab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Maximum number of factors identifiable from p binary items.
int ledermann_max_factors(int p);

struct ModelSpec {
    int p = 0;  // items
    int q = 0;  // factors
    int k = 0;  // mixture components

    void validate() const;
};

/// Free parameters of the (p, q, k) model after the identifiability
/// constraints: q(q-1)/2 fixed-zero loadings plus the q + q(q+1)/2
/// standardization constraints on the mixture moments.
long count_free_parameters(const ModelSpec& spec);

/// Binary response data collapsed to distinct patterns with counts.
struct PatternTable {
    int p = 0;
    long n = 0;
    std::vector<std::vector<std::uint8_t>> patterns;
    std::vector<long> counts;
    std::vector<std::string> item_names;   // may be empty
    std::vector<int> constant_items;       // flagged all-0 / all-1 columns

    std::size_t size() const { return patterns.size(); }

    /// Collapse raw 0/1 rows (row-major, n_rows x p) to distinct patterns.
    static PatternTable from_rows(const std::vector<std::vector<std::uint8_t>>& rows, int p);

    void validate() const;
};

/// Intercepts and loading matrix on the logit scale. Entries (j, r) with
/// r > j are structurally fixed to zero (upper-triangular identifiability
/// rule), which pins rotational freedom.
struct Loadings {
    VectorXd intercepts;  // length p
    MatrixXd matrix;      // p x q

    int p() const { return static_cast<int>(intercepts.size()); }
    int q() const { return static_cast<int>(matrix.cols()); }

    static bool masked(int j, int r) { return r > j; }
    static Loadings zeros(int p, int q);

    /// Number of free coefficients for item j (intercept included).
    int free_count(int j) const;

    void validate() const;
};

/// Finite Gaussian mixture on the latent space.
struct MixtureParams {
    VectorXd weights;               // length k, simplex
    std::vector<VectorXd> means;    // k vectors of length q
    std::vector<MatrixXd> covs;     // k SPD q x q matrices

    int k() const { return static_cast<int>(weights.size()); }
    int q() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    static MixtureParams standard_normal(int q);

    VectorXd mean() const;         // sum_i tau_i mu_i
    MatrixXd covariance() const;   // sum_i tau_i (Sigma_i + mu_i mu_i^T) - m m^T

    /// Largest violation of the standardization constraints (zero mean,
    /// identity covariance), as an infinity norm.
    double standardization_gap() const;

    void validate() const;
};

struct ModelParams {
    Loadings loadings;
    MixtureParams mixture;
    ModelSpec spec;

    void validate() const;
};

/// P(y_j = 1 | z) = logistic(intercept + loading_row . z).
double item_response_prob(double intercept, const VectorXd& loading_row, const VectorXd& z);

/// log P(y | z) under conditional independence, probabilities clamped to
/// [1e-12, 1 - 1e-12] before taking logs.
double pattern_conditional_logprob(const Loadings& loadings,
                                   const std::vector<std::uint8_t>& y,
                                   const VectorXd& z);

double pattern_conditional_prob(const Loadings& loadings,
                                const std::vector<std::uint8_t>& y,
                                const VectorXd& z);

/// Mixture density sum_i tau_i phi(z; mu_i, Sigma_i).
double latent_density(const MixtureParams& mixture, const VectorXd& z);

}  // namespace fmab
