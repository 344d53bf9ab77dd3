#include "fmab/estimation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fmab {

namespace {

double log_sum_exp(const VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (long i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

double softplus(double x) {
    if (x > 30.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<TensorGrid> component_grids(const ModelParams& params, const TensorGrid& grid) {
    std::vector<TensorGrid> out;
    out.reserve(params.spec.k);
    for (int i = 0; i < params.spec.k; ++i) {
        out.push_back(transform_grid(grid, params.mixture.means[i], params.mixture.covs[i]));
    }
    return out;
}

// Everything the E-step needs for one (pattern, component) pair.
struct PatternComponent {
    double loglik;       // log f(y | s_i = 1)
    VectorXd cond_mean;
    MatrixXd cond_second;
};

PatternComponent pattern_component_quad(const Loadings& loadings, const TensorGrid& comp_grid,
                                        const std::vector<std::uint8_t>& y) {
    const long n_points = comp_grid.size();
    const int q = comp_grid.q;

    VectorXd lp(n_points);
    for (long t = 0; t < n_points; ++t) {
        const VectorXd z = comp_grid.points.row(t).transpose();
        lp[t] = std::log(comp_grid.weights[t]) + pattern_conditional_logprob(loadings, y, z);
    }
    const double m = lp.maxCoeff();

    double total = 0.0;
    VectorXd mean_num = VectorXd::Zero(q);
    MatrixXd second_num = MatrixXd::Zero(q, q);
    for (long t = 0; t < n_points; ++t) {
        const double w = std::exp(lp[t] - m);
        total += w;
        const VectorXd z = comp_grid.points.row(t).transpose();
        mean_num += w * z;
        second_num += w * z * z.transpose();
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw degeneracy_error("pattern_component_quad: zero or non-finite likelihood mass");
    }

    PatternComponent pc;
    pc.loglik = std::log(comp_grid.normalizer) + m + std::log(total);
    pc.cond_mean = mean_num / total;
    pc.cond_second = second_num / total;
    return pc;
}

EStepResult e_step_impl(const ModelParams& params, const PatternTable& data,
                        const TensorGrid& grid, bool parallel) {
    params.validate();
    data.validate();
    const int k = params.spec.k;
    const long H = static_cast<long>(data.size());
    const std::vector<TensorGrid> grids = component_grids(params, grid);

    EStepResult res;
    res.responsibilities = MatrixXd::Zero(H, k);
    res.log_component_lik = MatrixXd::Zero(H, k);
    res.cond_mean.assign(H, MatrixXd::Zero(k, params.spec.q));
    res.cond_second.assign(
        H, std::vector<MatrixXd>(k, MatrixXd::Zero(params.spec.q, params.spec.q)));

    VectorXd log_tau = params.mixture.weights.array().log();
    VectorXd pattern_loglik(H);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
    for (long h = 0; h < H; ++h) {
        VectorXd joint(k);
        for (int i = 0; i < k; ++i) {
            const PatternComponent pc =
                pattern_component_quad(params.loadings, grids[i], data.patterns[h]);
            res.log_component_lik(h, i) = pc.loglik;
            res.cond_mean[h].row(i) = pc.cond_mean.transpose();
            res.cond_second[h][i] = pc.cond_second;
            joint[i] = log_tau[i] + pc.loglik;
        }
        const double lse = log_sum_exp(joint);
        for (int i = 0; i < k; ++i) res.responsibilities(h, i) = std::exp(joint[i] - lse);
        pattern_loglik[h] = lse;
    }

    // Fixed-order reduction keeps the result identical at any thread count.
    double ll = 0.0;
    for (long h = 0; h < H; ++h) ll += data.counts[h] * pattern_loglik[h];
    res.loglik = ll;
    return res;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 step over (seed, stream)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

void FitConfig::validate() const {
    if (quad_points < 1 || max_iter < 1 || newton_max < 1 || n_starts < 1) {
        throw std::invalid_argument("FitConfig: counts must be positive");
    }
    if (!(epsilon > 0.0) || !(ridge > 0.0)) {
        throw std::invalid_argument("FitConfig: epsilon and ridge must be positive");
    }
}

double component_pattern_loglik(const ModelParams& params, const TensorGrid& grid,
                                const std::vector<std::uint8_t>& y, int i) {
    if (i < 0 || i >= params.spec.k) {
        throw std::invalid_argument("component_pattern_loglik: component index out of range");
    }
    const TensorGrid comp =
        transform_grid(grid, params.mixture.means[i], params.mixture.covs[i]);
    return pattern_component_quad(params.loadings, comp, y).loglik;
}

double component_pattern_likelihood(const ModelParams& params, const TensorGrid& grid,
                                    const std::vector<std::uint8_t>& y, int i) {
    return std::exp(component_pattern_loglik(params, grid, y, i));
}

VectorXd component_posteriors(const VectorXd& weights, const VectorXd& log_lik) {
    if (weights.size() != log_lik.size()) {
        throw std::invalid_argument("component_posteriors: size mismatch");
    }
    VectorXd joint = weights.array().log() + log_lik.array();
    const double lse = log_sum_exp(joint);
    if (!std::isfinite(lse)) {
        throw degeneracy_error("component_posteriors: all component likelihoods vanish");
    }
    return (joint.array() - lse).exp();
}

std::pair<VectorXd, MatrixXd> conditional_latent_moments(const ModelParams& params,
                                                         const TensorGrid& grid,
                                                         const std::vector<std::uint8_t>& y,
                                                         int i) {
    const TensorGrid comp =
        transform_grid(grid, params.mixture.means[i], params.mixture.covs[i]);
    const PatternComponent pc = pattern_component_quad(params.loadings, comp, y);
    return {pc.cond_mean, pc.cond_second};
}

EStepResult e_step(const ModelParams& params, const PatternTable& data, const TensorGrid& grid) {
    return e_step_impl(params, data, grid, true);
}

EStepResult e_step_serial(const ModelParams& params, const PatternTable& data,
                          const TensorGrid& grid) {
    return e_step_impl(params, data, grid, false);
}

std::vector<ItemObjective> make_item_objectives(const ModelParams& params,
                                                const PatternTable& data,
                                                const EStepResult& estep,
                                                const TensorGrid& grid) {
    const int p = params.spec.p;
    const int q = params.spec.q;
    const int k = params.spec.k;
    const long H = static_cast<long>(data.size());
    const long T = grid.size();
    const long G = k * T;

    const std::vector<TensorGrid> grids = component_grids(params, grid);

    // Stacked transformed points, component-major.
    MatrixXd points(G, q);
    for (int i = 0; i < k; ++i) points.middleRows(i * T, T) = grids[i].points;

    // Posterior grid weights omega_hg, collapsed per item to
    //   a_g = sum_h c_h omega y_hj  and  b_g = sum_h c_h omega.
    VectorXd total_wt = VectorXd::Zero(G);
    MatrixXd ones_wt = MatrixXd::Zero(p, G);
    VectorXd lw(T);

    for (long h = 0; h < H; ++h) {
        const double c = static_cast<double>(data.counts[h]);
        for (int i = 0; i < k; ++i) {
            const double resp = estep.responsibilities(h, i);
            if (resp == 0.0) continue;
            const double log_comp = estep.log_component_lik(h, i);
            for (long t = 0; t < T; ++t) {
                const VectorXd z = grids[i].points.row(t).transpose();
                lw[t] = std::log(grid.weights[t]) +
                        pattern_conditional_logprob(params.loadings, data.patterns[h], z);
            }
            for (long t = 0; t < T; ++t) {
                const double omega =
                    c * resp * grid.normalizer * std::exp(lw[t] - log_comp);
                const long g = i * T + t;
                total_wt[g] += omega;
                for (int j = 0; j < p; ++j) {
                    if (data.patterns[h][j]) ones_wt(j, g) += omega;
                }
            }
        }
    }

    std::vector<ItemObjective> out;
    out.reserve(p);
    for (int j = 0; j < p; ++j) {
        ItemObjective obj;
        const int n_load = std::min(j + 1, q);
        obj.dim_ = 1 + n_load;
        obj.coef_ = VectorXd(obj.dim_);
        obj.coef_[0] = params.loadings.intercepts[j];
        for (int r = 0; r < n_load; ++r) obj.coef_[1 + r] = params.loadings.matrix(j, r);
        obj.design_ = MatrixXd(G, obj.dim_);
        obj.design_.col(0).setOnes();
        obj.design_.rightCols(n_load) = points.leftCols(n_load);
        obj.ones_wt_ = ones_wt.row(j).transpose();
        obj.total_wt_ = total_wt;
        out.push_back(std::move(obj));
    }
    return out;
}

ItemObjective::ItemObjective(const ModelParams& params, const PatternTable& data,
                             const EStepResult& estep, const TensorGrid& grid, int item) {
    if (item < 0 || item >= params.spec.p) {
        throw std::invalid_argument("ItemObjective: item index out of range");
    }
    *this = make_item_objectives(params, data, estep, grid)[item];
}

double ItemObjective::value(const VectorXd& coef) const {
    const VectorXd eta = design_ * coef;
    double v = 0.0;
    for (long g = 0; g < eta.size(); ++g) {
        v += ones_wt_[g] * eta[g] - total_wt_[g] * softplus(eta[g]);
    }
    return v;
}

VectorXd ItemObjective::gradient(const VectorXd& coef) const {
    const VectorXd eta = design_ * coef;
    VectorXd resid(eta.size());
    for (long g = 0; g < eta.size(); ++g) {
        resid[g] = ones_wt_[g] - total_wt_[g] * logistic(eta[g]);
    }
    return design_.transpose() * resid;
}

MatrixXd ItemObjective::hessian(const VectorXd& coef) const {
    const VectorXd eta = design_ * coef;
    VectorXd w(eta.size());
    for (long g = 0; g < eta.size(); ++g) {
        const double pi = logistic(eta[g]);
        w[g] = total_wt_[g] * pi * (1.0 - pi);
    }
    return -(design_.transpose() * w.asDiagonal() * design_);
}

Loadings update_loadings(const ModelParams& params, const PatternTable& data,
                         const EStepResult& estep, const TensorGrid& grid,
                         const FitConfig& cfg, MStepDiagnostics* diag) {
    const int p = params.spec.p;
    const int q = params.spec.q;
    std::vector<ItemObjective> objectives = make_item_objectives(params, data, estep, grid);

    Loadings out = Loadings::zeros(p, q);
    int fallbacks = 0;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : fallbacks)
#endif
    for (int j = 0; j < p; ++j) {
        const ItemObjective& obj = objectives[j];
        VectorXd coef = obj.current_coef();
        double best = obj.value(coef);

        for (int step = 0; step < cfg.newton_max; ++step) {
            const VectorXd g = obj.gradient(coef);
            const MatrixXd neg_h = -obj.hessian(coef);

            VectorXd direction;
            Eigen::LDLT<MatrixXd> ldlt(neg_h);
            bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
            if (ok) {
                direction = ldlt.solve(g);
                ok = direction.allFinite() && g.dot(direction) > 0.0;
            }
            if (!ok) {
                // Singular or indefinite curvature: plain ascent direction.
                ++fallbacks;
                const double scale = std::max(1.0, g.lpNorm<Eigen::Infinity>());
                direction = g / scale;
            }

            // Step-halving until the quadrature objective does not decrease.
            double alpha = 1.0;
            bool accepted = false;
            for (int halving = 0; halving < 30; ++halving) {
                const VectorXd candidate = coef + alpha * direction;
                const double v = obj.value(candidate);
                if (std::isfinite(v) && v >= best - 1e-12 * (1.0 + std::abs(best))) {
                    if (v > best) {
                        coef = candidate;
                        best = v;
                        accepted = true;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) break;
        }

        out.intercepts[j] = coef[0];
        const int n_load = std::min(j + 1, q);
        for (int r = 0; r < n_load; ++r) out.matrix(j, r) = coef[1 + r];
    }

    if (diag) diag->gradient_fallbacks += fallbacks;
    return out;
}

MixtureParams update_mixture(const PatternTable& data, const EStepResult& estep, double ridge) {
    const int k = static_cast<int>(estep.responsibilities.cols());
    const long H = static_cast<long>(data.size());
    const int q = static_cast<int>(estep.cond_mean.empty() ? 0 : estep.cond_mean[0].cols());

    MixtureParams mix;
    mix.weights = VectorXd::Zero(k);
    mix.means.assign(k, VectorXd::Zero(q));
    mix.covs.assign(k, MatrixXd::Zero(q, q));

    for (int i = 0; i < k; ++i) {
        double denom = 0.0;
        VectorXd mean_num = VectorXd::Zero(q);
        MatrixXd second_num = MatrixXd::Zero(q, q);
        for (long h = 0; h < H; ++h) {
            const double w = data.counts[h] * estep.responsibilities(h, i);
            denom += w;
            mean_num += w * estep.cond_mean[h].row(i).transpose();
            second_num += w * estep.cond_second[h][i];
        }
        if (denom < 1e-8) {
            std::ostringstream os;
            os << "update_mixture: component " << i << " collapsed (total responsibility "
               << denom << ")";
            throw component_collapse_error(i, os.str());
        }
        const VectorXd mu = mean_num / denom;
        MatrixXd sigma = second_num / denom - mu * mu.transpose();
        sigma = 0.5 * (sigma + sigma.transpose());

        // Eigenvalue floor against degenerate components.
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
        if (es.eigenvalues().minCoeff() < ridge) {
            VectorXd ev = es.eigenvalues().cwiseMax(ridge);
            sigma = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
            sigma = 0.5 * (sigma + sigma.transpose());
        }

        mix.weights[i] = denom / static_cast<double>(data.n);
        mix.means[i] = mu;
        mix.covs[i] = sigma;
    }
    mix.weights /= mix.weights.sum();
    return mix;
}

ModelParams standardize(const ModelParams& params) {
    const int q = params.spec.q;
    const int k = params.spec.k;
    const VectorXd m = params.mixture.mean();
    const MatrixXd v = params.mixture.covariance();

    Eigen::LLT<MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) {
        throw degeneracy_error("standardize: latent covariance not positive definite");
    }
    const MatrixXd L = llt.matrixL();

    ModelParams out = params;
    if (k == 1) {
        // A single component is pinned exactly by the constraints.
        out.mixture.means[0] = VectorXd::Zero(q);
        out.mixture.covs[0] = MatrixXd::Identity(q, q);
    } else {
        for (int i = 0; i < k; ++i) {
            out.mixture.means[i] =
                llt.matrixL().solve(params.mixture.means[i] - m);
            MatrixXd s = llt.matrixL().solve(params.mixture.covs[i]);
            s = llt.matrixL().solve(s.transpose().eval());
            out.mixture.covs[i] = 0.5 * (s + s.transpose());
        }
    }

    // Compensate the measurement model so f(y) is unchanged.
    out.loadings.intercepts = params.loadings.intercepts + params.loadings.matrix * m;
    out.loadings.matrix = params.loadings.matrix * L;
    // Lower-triangular L keeps masked entries at exact zero; enforce anyway.
    for (int j = 0; j < params.spec.p; ++j) {
        for (int r = 0; r < q; ++r) {
            if (Loadings::masked(j, r)) out.loadings.matrix(j, r) = 0.0;
        }
    }
    return out;
}

FitResult fit_from(const ModelParams& start, const PatternTable& data, const FitConfig& cfg) {
    cfg.validate();
    start.validate();
    data.validate();

    const TensorGrid grid = tensor_grid(start.spec.q, cfg.quad_points);
    ModelParams params = start;
    MStepDiagnostics diag;

    FitResult result;
    result.config = cfg;
    result.params = params;
    result.max_standardization_gap = params.mixture.standardization_gap();

    EStepResult est = e_step(params, data, grid);
    result.loglik_trace.push_back(est.loglik);

    double alpha_start = 1.0;
    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        const Loadings new_loadings = update_loadings(params, data, est, grid, cfg, &diag);
        const MixtureParams new_mixture = update_mixture(data, est, cfg.ridge);

        // The loading step ascends for any fixed quadrature grid, but the
        // grid itself follows the mixture parameters, so the closed-form
        // mixture update can overshoot at coarse grid orders. Damp it toward
        // the previous mixture until the evaluated log-likelihood does not
        // decrease; alpha = 0 (mixture frozen) always ascends. The accepted
        // step size warm-starts the next iteration.
        ModelParams next;
        EStepResult est_next;
        double alpha = alpha_start;
        for (;;) {
            next = params;
            next.loadings = new_loadings;
            if (alpha > 0.0) {
                next.mixture.weights =
                    (1.0 - alpha) * params.mixture.weights + alpha * new_mixture.weights;
                for (int i = 0; i < next.mixture.k(); ++i) {
                    next.mixture.means[i] = (1.0 - alpha) * params.mixture.means[i] +
                                            alpha * new_mixture.means[i];
                    next.mixture.covs[i] = (1.0 - alpha) * params.mixture.covs[i] +
                                           alpha * new_mixture.covs[i];
                }
            }
            next = standardize(next);
            est_next = e_step(next, data, grid);
            if (est_next.loglik >= est.loglik - 1e-10 || alpha == 0.0) break;
            alpha = alpha > 1.0 / 1024.0 ? 0.5 * alpha : 0.0;
        }
        alpha_start = std::min(1.0, std::max(alpha, 1.0 / 1024.0) * 2.0);
        result.loglik_trace.push_back(est_next.loglik);
        result.max_standardization_gap =
            std::max(result.max_standardization_gap, next.mixture.standardization_gap());

        const double delta = est_next.loglik - est.loglik;
        params = next;
        est = std::move(est_next);
        result.n_iter = iter;
        if (std::abs(delta) < cfg.epsilon) {
            result.converged = true;
            break;
        }
    }

    result.params = params;
    result.posteriors = est.responsibilities;
    result.loglik = est.loglik;
    result.gradient_fallbacks = diag.gradient_fallbacks;
    const long n_par = count_free_parameters(params.spec);
    result.aic = -2.0 * result.loglik + 2.0 * n_par;
    result.bic = -2.0 * result.loglik + n_par * std::log(static_cast<double>(data.n));
    return result;
}

ModelParams initialize(const PatternTable& data, const ModelSpec& spec, const FitConfig& cfg) {
    cfg.validate();
    spec.validate();

    // Latent-trait (k = 1) pre-fit provides the starting loadings.
    // Intercepts start at the empirical item logits and free loadings at 1:
    // all-zero loadings are a stationary saddle the Newton step cannot leave.
    ModelSpec base_spec{spec.p, spec.q, 1};
    ModelParams base_start;
    base_start.spec = base_spec;
    base_start.loadings = Loadings::zeros(spec.p, spec.q);
    for (int j = 0; j < spec.p; ++j) {
        long ones = 0;
        for (std::size_t h = 0; h < data.size(); ++h) {
            if (data.patterns[h][j]) ones += data.counts[h];
        }
        const double freq =
            std::clamp(static_cast<double>(ones) / data.n, 1.0 / (data.n + 1.0),
                       data.n / (data.n + 1.0));
        base_start.loadings.intercepts[j] = std::log(freq / (1.0 - freq));
        for (int r = 0; r < spec.q; ++r) {
            if (!Loadings::masked(j, r)) base_start.loadings.matrix(j, r) = 1.0;
        }
    }
    base_start.mixture = MixtureParams::standard_normal(spec.q);

    FitResult base;
    try {
        base = fit_from(base_start, data, cfg);
    } catch (const std::exception& e) {
        throw fit_error(std::string("initialize: k = 1 pre-fit failed: ") + e.what());
    }
    if (spec.k == 1) return base.params;

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Component means start at spread quantiles of the base fit's factor
    // scores, so well-separated latent clusters seed separated components;
    // the seeded jitter differentiates restarts.
    const TensorGrid score_grid = tensor_grid(spec.q, cfg.quad_points);
    const EStepResult base_est = e_step(base.params, data, score_grid);
    std::vector<std::vector<std::pair<double, long>>> scored(spec.q);
    for (int r = 0; r < spec.q; ++r) {
        for (std::size_t h = 0; h < data.size(); ++h) {
            scored[r].push_back({base_est.cond_mean[h](0, r), data.counts[h]});
        }
        std::sort(scored[r].begin(), scored[r].end());
    }
    auto quantile = [&](int r, double prob) {
        long target = static_cast<long>(prob * data.n);
        long seen = 0;
        for (const auto& [score, count] : scored[r]) {
            seen += count;
            if (seen > target) return score;
        }
        return scored[r].back().first;
    };

    ModelParams params;
    params.spec = spec;
    params.loadings = base.params.loadings;
    params.mixture.weights = VectorXd::Constant(spec.k, 1.0 / spec.k);
    for (int i = 0; i < spec.k; ++i) {
        VectorXd mu(spec.q);
        for (int r = 0; r < spec.q; ++r) {
            mu[r] = quantile(r, (i + 0.5) / spec.k) + 0.3 * normal(rng);
        }
        params.mixture.means.push_back(mu);
        params.mixture.covs.push_back(0.25 * MatrixXd::Identity(spec.q, spec.q));
    }
    return standardize(params);
}

FitResult fit(const PatternTable& data, const ModelSpec& spec, const FitConfig& cfg) {
    cfg.validate();
    spec.validate();
    data.validate();

    bool have_best = false;
    FitResult best;
    int failed = 0;
    std::string last_error;

    for (int s = 0; s < cfg.n_starts; ++s) {
        FitConfig start_cfg = cfg;
        start_cfg.seed = cfg.n_starts == 1 ? cfg.seed : derive_seed(cfg.seed, s);
        try {
            const ModelParams start = initialize(data, spec, start_cfg);
            FitResult r = fit_from(start, data, cfg);
            if (!have_best || r.loglik > best.loglik) {
                best = std::move(r);
                have_best = true;
            }
        } catch (const degeneracy_error& e) {
            ++failed;
            last_error = e.what();
        }
    }
    if (!have_best) {
        throw fit_error("fit: all " + std::to_string(cfg.n_starts) +
                        " starts failed; last error: " + last_error);
    }
    best.failed_starts = failed;
    best.config = cfg;
    return best;
}

}  // namespace fmab
