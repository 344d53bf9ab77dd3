#pragma once

#include <cstdint>
#include <vector>

#include "fmab/model.hpp"
#include "fmab/quadrature.hpp"

namespace fmab {

struct FitConfig {
    int quad_points = 8;     // Gauss-Hermite order per dimension
    double epsilon = 1e-5;   // absolute log-likelihood convergence tolerance
    int max_iter = 500;
    int newton_max = 5;      // damped Newton steps per item per GEM cycle
    int n_starts = 1;
    double ridge = 1e-6;     // covariance eigenvalue floor
    std::uint64_t seed = 0;

    void validate() const;
};

/// Per-pattern posterior quantities from one E-step.
struct EStepResult {
    // H x k
    MatrixXd responsibilities;
    MatrixXd log_component_lik;
    // cond_mean[h] is k x q; cond_second[h][i] is q x q
    std::vector<MatrixXd> cond_mean;
    std::vector<std::vector<MatrixXd>> cond_second;
    double loglik = 0.0;

    MatrixXd component_lik() const { return log_component_lik.array().exp().matrix(); }
};

/// log f(y | s_i = 1) by Gauss-Hermite quadrature over component i.
double component_pattern_loglik(const ModelParams& params, const TensorGrid& grid,
                                const std::vector<std::uint8_t>& y, int i);
double component_pattern_likelihood(const ModelParams& params, const TensorGrid& grid,
                                    const std::vector<std::uint8_t>& y, int i);

/// Posterior component probabilities tau_i f(y|s_i) / sum_l tau_l f(y|s_l),
/// from log-scale likelihoods via log-sum-exp.
VectorXd component_posteriors(const VectorXd& weights, const VectorXd& log_lik);

/// E[z | y, s_i = 1] and E[z z^T | y, s_i = 1] on the transformed grid.
std::pair<VectorXd, MatrixXd> conditional_latent_moments(const ModelParams& params,
                                                         const TensorGrid& grid,
                                                         const std::vector<std::uint8_t>& y,
                                                         int i);

/// E-step over all distinct patterns. The parallel version distributes
/// patterns across OpenMP threads; per-pattern results and the final serial
/// reduction are identical at any thread count.
EStepResult e_step(const ModelParams& params, const PatternTable& data, const TensorGrid& grid);

/// Plain serial reference implementation, kept for testing and benchmarks.
EStepResult e_step_serial(const ModelParams& params, const PatternTable& data,
                          const TensorGrid& grid);

/// Expected complete-data log-likelihood contribution of a single item as a
/// function of its free coefficients (intercept first), with the posterior
/// weights frozen at the E-step parameters. Exposes the score and Hessian
/// used by the inner Newton step.
class ItemObjective {
public:
    ItemObjective(const ModelParams& params, const PatternTable& data, const EStepResult& estep,
                  const TensorGrid& grid, int item);

    int dim() const { return dim_; }
    VectorXd current_coef() const { return coef_; }

    double value(const VectorXd& coef) const;
    VectorXd gradient(const VectorXd& coef) const;
    MatrixXd hessian(const VectorXd& coef) const;

private:
    ItemObjective() = default;
    friend std::vector<ItemObjective> make_item_objectives(const ModelParams&,
                                                           const PatternTable&,
                                                           const EStepResult&,
                                                           const TensorGrid&);

    int dim_ = 0;        // 1 + free loadings of this item
    VectorXd coef_;      // current coefficients
    MatrixXd design_;    // n_points x dim, rows (1, z_free)
    VectorXd ones_wt_;   // a_g = sum_h omega_hg y_hj
    VectorXd total_wt_;  // b_g = sum_h omega_hg
};

/// Builds the objectives for all items at once, sharing the posterior
/// weight computation across items.
std::vector<ItemObjective> make_item_objectives(const ModelParams& params,
                                                const PatternTable& data,
                                                const EStepResult& estep,
                                                const TensorGrid& grid);

struct MStepDiagnostics {
    int gradient_fallbacks = 0;  // items where the Newton system was singular
};

Loadings update_loadings(const ModelParams& params, const PatternTable& data,
                         const EStepResult& estep, const TensorGrid& grid,
                         const FitConfig& cfg, MStepDiagnostics* diag = nullptr);

MixtureParams update_mixture(const PatternTable& data, const EStepResult& estep,
                             double ridge = 1e-6);

/// Reparameterize so the mixture has zero mean and identity covariance,
/// compensating the measurement model so the distribution of y is unchanged.
ModelParams standardize(const ModelParams& params);

ModelParams initialize(const PatternTable& data, const ModelSpec& spec, const FitConfig& cfg);

struct FitResult {
    ModelParams params;
    std::vector<double> loglik_trace;
    bool converged = false;
    int n_iter = 0;
    MatrixXd posteriors;  // H x k at the optimum
    double loglik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    FitConfig config;
    int gradient_fallbacks = 0;
    int failed_starts = 0;
    double max_standardization_gap = 0.0;  // worst per-iteration Eq. 8-9 violation
};

FitResult fit(const PatternTable& data, const ModelSpec& spec, const FitConfig& cfg);

/// GEM loop from explicit starting values (used by restarts and the
/// warm-started bootstrap refits).
FitResult fit_from(const ModelParams& start, const PatternTable& data, const FitConfig& cfg);

}  // namespace fmab
