#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fmab/estimation.hpp"
#include "fmab/inference.hpp"
#include "fmab/io.hpp"
#include "fmab/model.hpp"
#include "fmab/selection.hpp"
#include "fmab/simulation.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitSelection = 4;

void add_fit_options(CLI::App* cmd, fmab::FitConfig* cfg) {
    cmd->add_option("--quad-points", cfg->quad_points, "Gauss-Hermite points per dimension");
    cmd->add_option("--epsilon", cfg->epsilon, "log-likelihood convergence tolerance");
    cmd->add_option("--max-iter", cfg->max_iter, "maximum GEM iterations");
    cmd->add_option("--starts", cfg->n_starts, "random restarts");
    cmd->add_option("--seed", cfg->seed, "RNG seed");
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(out_path);
        if (!out) throw fmab::parse_error("cannot open output file " + out_path);
        out << text;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Factor mixture analysis for multivariate binary data"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (results are unchanged)");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit a (q, k) model to CSV data");
    std::string fit_data, fit_out;
    int fit_q = 1, fit_k = 1;
    fmab::FitConfig fit_cfg;
    fit_cmd->add_option("data", fit_data, "CSV file of binary responses")->required();
    fit_cmd->add_option("--q", fit_q, "number of factors")->required();
    fit_cmd->add_option("--k", fit_k, "number of mixture components")->required();
    add_fit_options(fit_cmd, &fit_cfg);
    fit_cmd->add_option("--out", fit_out, "artifact output path (JSON)");

    // select
    auto* sel_cmd = app.add_subcommand("select", "forward q-then-k model selection");
    std::string sel_data, sel_out, sel_criterion = "aic";
    int sel_qmax = 1, sel_kmax = 3;
    double sel_threshold = 4.0;
    fmab::FitConfig sel_cfg;
    sel_cmd->add_option("data", sel_data, "CSV file of binary responses")->required();
    sel_cmd->add_option("--q-max", sel_qmax, "largest q to consider")->required();
    sel_cmd->add_option("--k-max", sel_kmax, "largest k to consider")->required();
    sel_cmd->add_option("--criterion", sel_criterion, "aic or bic");
    sel_cmd->add_option("--residual-threshold", sel_threshold, "bivariate residual cutoff");
    add_fit_options(sel_cmd, &sel_cfg);
    sel_cmd->add_option("--out", sel_out, "report output path");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "replicate the Monte-Carlo study protocol");
    std::string sim_design = "1,2", sim_out, sim_data_out;
    long sim_n = 300;
    int sim_reps = 20, sim_p = 10, sim_kmax = 4;
    fmab::FitConfig sim_cfg;
    sim_cmd->add_option("--design", sim_design, "true q,k (e.g. 2,3)");
    sim_cmd->add_option("--n", sim_n, "sample size per replicate");
    sim_cmd->add_option("--reps", sim_reps, "number of replicates");
    sim_cmd->add_option("--p", sim_p, "number of items");
    sim_cmd->add_option("--k-max", sim_kmax, "largest k fitted per replicate");
    add_fit_options(sim_cmd, &sim_cfg);
    sim_cmd->add_option("--out", sim_out, "report output path");
    sim_cmd->add_option("--data-out", sim_data_out, "also write one simulated sample as CSV");

    // bootstrap
    auto* boot_cmd = app.add_subcommand("bootstrap", "bootstrap standard errors for a fit");
    std::string boot_fit, boot_data, boot_out;
    int boot_b = 100;
    fmab::FitConfig boot_cfg;
    boot_cmd->add_option("--fit", boot_fit, "fit artifact (JSON)")->required();
    boot_cmd->add_option("--data", boot_data, "CSV data the fit was computed on")->required();
    boot_cmd->add_option("--b", boot_b, "bootstrap replicates");
    boot_cmd->add_option("--seed", boot_cfg.seed, "RNG seed");
    boot_cmd->add_option("--out", boot_out, "report output path");

    // score
    auto* score_cmd = app.add_subcommand("score", "posterior factor scores and MAP classes");
    std::string score_fit, score_data, score_out;
    score_cmd->add_option("--fit", score_fit, "fit artifact (JSON)")->required();
    score_cmd->add_option("--data", score_data, "CSV data")->required();
    score_cmd->add_option("--out", score_out, "table output path");

    // residuals
    auto* resid_cmd = app.add_subcommand("residuals", "bivariate residual table for a fit");
    std::string resid_fit, resid_data, resid_out;
    resid_cmd->add_option("--fit", resid_fit, "fit artifact (JSON)")->required();
    resid_cmd->add_option("--data", resid_data, "CSV data")->required();
    resid_cmd->add_option("--out", resid_out, "table output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (*fit_cmd) {
            const fmab::PatternTable data = fmab::load_csv(fit_data);
            for (int j : data.constant_items) {
                std::cerr << "warning: item " << (j + 1)
                          << " has zero observed variance (all 0 or all 1)\n";
            }
            const fmab::FitResult result =
                fmab::fit(data, fmab::ModelSpec{data.p, fit_q, fit_k}, fit_cfg);
            const fmab::TensorGrid grid = fmab::tensor_grid(fit_q, fit_cfg.quad_points);
            const fmab::FitArtifact artifact = fmab::make_artifact(result, data, grid);
            if (!fit_out.empty()) fmab::write_fit(artifact, fit_out);
            std::cout << fmab::format_fit_report(artifact);
        } else if (*sel_cmd) {
            const fmab::PatternTable data = fmab::load_csv(sel_data);
            const fmab::SelectionResult result =
                fmab::forward_select(data, sel_qmax, sel_kmax, sel_cfg, sel_criterion,
                                     sel_threshold);
            emit(fmab::format_selection_report(result), sel_out);
            if (!result.success) return kExitSelection;
        } else if (*sim_cmd) {
            int q = 0, k = 0;
            if (std::sscanf(sim_design.c_str(), "%d,%d", &q, &k) != 2) {
                std::cerr << "error: --design must be 'q,k'\n";
                return kExitUsage;
            }
            const fmab::SimDesign design =
                fmab::generate_design(q, k, sim_cfg.seed, sim_p, sim_n, sim_reps);
            if (!sim_data_out.empty()) {
                const auto sample =
                    fmab::sample_responses(design.true_params, design.n, design.seed);
                fmab::write_csv(sample.table, sim_data_out);
            }
            const fmab::StudySummary summary = fmab::run_study(design, sim_cfg, sim_kmax);

            std::ostringstream os;
            os << "Design: q = " << q << ", k = " << k << ", p = " << sim_p << ", n = " << sim_n
               << ", replicates = " << sim_reps << " (" << summary.n_failed << " failed)\n";
            os << "Residual screen acceptance by q:\n";
            for (const auto& [qq, rate] : summary.q_screen_rates) {
                os << "  q = " << qq << ": " << rate * 100.0 << "%\n";
            }
            os << "k selection rates (AIC / BIC):\n";
            for (int kk = 1; kk <= sim_kmax; ++kk) {
                const double a =
                    summary.k_rates_aic.count(kk) ? summary.k_rates_aic.at(kk) : 0.0;
                const double b =
                    summary.k_rates_bic.count(kk) ? summary.k_rates_bic.at(kk) : 0.0;
                os << "  k = " << kk << ": " << a * 100.0 << "% / " << b * 100.0 << "%\n";
            }
            os << "Misclassification: mean = " << summary.misclass_mean
               << ", se = " << summary.misclass_se << "\n";
            emit(os.str(), sim_out);
        } else if (*boot_cmd) {
            const fmab::FitArtifact artifact = fmab::read_fit(boot_fit);
            const fmab::PatternTable data = fmab::load_csv(boot_data);
            fmab::FitConfig cfg = artifact.config;
            cfg.seed = boot_cfg.seed;
            const fmab::BootstrapReport report = fmab::bootstrap_standard_errors(
                data, artifact.spec, cfg, boot_b, artifact.params);
            emit(fmab::format_bootstrap_report(report, data.item_names), boot_out);
        } else if (*score_cmd) {
            const fmab::FitArtifact artifact = fmab::read_fit(score_fit);
            const fmab::PatternTable data = fmab::load_csv(score_data);
            const fmab::TensorGrid grid =
                fmab::tensor_grid(artifact.spec.q, artifact.config.quad_points);
            const fmab::MatrixXd scores =
                fmab::factor_scores(artifact.params, data, grid);
            const fmab::EStepResult est = fmab::e_step(artifact.params, data, grid);
            const std::vector<int> labels = fmab::classify_map(est.responsibilities);

            std::ostringstream os;
            os << "pattern";
            for (int r = 0; r < artifact.spec.q; ++r) os << ",score" << (r + 1);
            os << ",map_class\n";
            for (std::size_t h = 0; h < data.size(); ++h) {
                for (int j = 0; j < data.p; ++j) os << int(data.patterns[h][j]);
                os << std::setprecision(6);
                for (int r = 0; r < artifact.spec.q; ++r) os << ',' << scores(h, r);
                os << ',' << (labels[h] + 1) << '\n';
            }
            emit(os.str(), score_out);
        } else if (*resid_cmd) {
            const fmab::FitArtifact artifact = fmab::read_fit(resid_fit);
            const fmab::PatternTable data = fmab::load_csv(resid_data);
            const fmab::TensorGrid grid =
                fmab::tensor_grid(artifact.spec.q, artifact.config.quad_points);
            const auto report = fmab::bivariate_residuals(artifact.params, data, grid);
            emit(fmab::format_residual_report(report, data.item_names), resid_out);
        }
    } catch (const fmab::parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const fmab::degeneracy_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const fmab::fit_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
