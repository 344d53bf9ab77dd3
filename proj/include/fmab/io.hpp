#pragma once

#include <string>
#include <vector>

#include "fmab/estimation.hpp"
#include "fmab/inference.hpp"
#include "fmab/model.hpp"
#include "fmab/selection.hpp"

namespace fmab {

/// Parse a CSV of binary responses (header row of item names, cells 0/1)
/// and collapse it to a pattern table. Constant columns are flagged on the
/// returned table, not rejected.
PatternTable load_csv(const std::string& path);

/// Expand a pattern table back to CSV rows (used by `simulate` output and
/// round-trip tests).
void write_csv(const PatternTable& table, const std::string& path);

/// Everything a fit run produces, serialized as versioned JSON with
/// full-precision numbers.
struct FitArtifact {
    static constexpr int kFormatVersion = 1;

    ModelSpec spec;
    FitConfig config;
    ModelParams params;
    std::vector<double> loglik_trace;
    bool converged = false;
    int n_iter = 0;
    double loglik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    MatrixXd posteriors;
    std::vector<int> map_labels;
    MatrixXd factor_scores;
    BivariateResidualReport residuals;
    PatternFitTests fit_tests;
    std::vector<std::string> item_names;
    std::string created;  // ISO-8601; honors SOURCE_DATE_EPOCH for reproducible runs
    std::uint64_t seed = 0;
};

FitArtifact make_artifact(const FitResult& result, const PatternTable& data,
                          const TensorGrid& grid);

void write_fit(const FitArtifact& artifact, const std::string& path);
FitArtifact read_fit(const std::string& path);

/// Aligned plain-text report blocks (6 significant digits).
std::string format_fit_report(const FitArtifact& artifact);
std::string format_selection_report(const SelectionResult& result);
std::string format_residual_report(const BivariateResidualReport& report,
                                   const std::vector<std::string>& item_names);
std::string format_bootstrap_report(const BootstrapReport& report,
                                    const std::vector<std::string>& item_names);

}  // namespace fmab
