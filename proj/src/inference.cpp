#include "fmab/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fmab {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Permutation of replicate components minimizing the total distance of
// their means to the reference means.
std::vector<int> align_components(const MixtureParams& reference, const MixtureParams& replicate) {
    const int k = reference.k();
    std::vector<int> perm(k), best(k);
    std::iota(perm.begin(), perm.end(), 0);
    best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (int i = 0; i < k; ++i) {
            cost += (replicate.means[perm[i]] - reference.means[i]).norm();
        }
        if (cost < best_cost) {
            best_cost = cost;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

std::vector<int> classify_map(const MatrixXd& posteriors) {
    std::vector<int> labels(posteriors.rows());
    for (long h = 0; h < posteriors.rows(); ++h) {
        int arg = 0;
        for (long i = 1; i < posteriors.cols(); ++i) {
            if (posteriors(h, i) > posteriors(h, arg)) arg = static_cast<int>(i);
        }
        labels[h] = arg;
    }
    return labels;
}

MatrixXd factor_scores(const ModelParams& params, const PatternTable& data,
                       const TensorGrid& grid) {
    const EStepResult est = e_step(params, data, grid);
    MatrixXd scores = MatrixXd::Zero(data.size(), params.spec.q);
    for (std::size_t h = 0; h < data.size(); ++h) {
        for (int i = 0; i < params.spec.k; ++i) {
            scores.row(h) += est.responsibilities(h, i) * est.cond_mean[h].row(i);
        }
    }
    return scores;
}

std::vector<VectorXd> weighted_loadings(const Loadings& loadings, const MixtureParams& mixture) {
    std::vector<VectorXd> out;
    out.reserve(mixture.k());
    for (int i = 0; i < mixture.k(); ++i) {
        out.push_back(loadings.matrix * mixture.means[i]);
    }
    return out;
}

BootstrapReport bootstrap_standard_errors(const PatternTable& data, const ModelSpec& spec,
                                          const FitConfig& cfg, int B,
                                          const ModelParams& point_estimate) {
    if (B < 2) throw std::invalid_argument("bootstrap_standard_errors: B must be >= 2");
    data.validate();
    point_estimate.validate();
    const int p = spec.p;
    const int q = spec.q;
    const int k = spec.k;

    // Cumulative pattern probabilities for observation-level resampling.
    std::vector<double> cumulative(data.size());
    double acc = 0.0;
    for (std::size_t h = 0; h < data.size(); ++h) {
        acc += static_cast<double>(data.counts[h]) / static_cast<double>(data.n);
        cumulative[h] = acc;
    }

    BootstrapReport report;
    report.B = B;

    std::vector<VectorXd> intercepts;
    std::vector<MatrixXd> loadings;
    std::vector<VectorXd> weights;
    std::vector<std::vector<VectorXd>> means;

    for (int b = 0; b < B; ++b) {
        std::mt19937_64 rng(derive_seed(cfg.seed, b));
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        PatternTable resample;
        resample.p = data.p;
        resample.item_names = data.item_names;
        std::vector<long> counts(data.size(), 0);
        for (long obs = 0; obs < data.n; ++obs) {
            const double u = unif(rng);
            const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
            const std::size_t h = std::min<std::size_t>(it - cumulative.begin(),
                                                        data.size() - 1);
            ++counts[h];
        }
        for (std::size_t h = 0; h < data.size(); ++h) {
            if (counts[h] == 0) continue;
            resample.patterns.push_back(data.patterns[h]);
            resample.counts.push_back(counts[h]);
            resample.n += counts[h];
        }

        try {
            const FitResult r = fit_from(point_estimate, resample, cfg);
            const std::vector<int> perm = align_components(point_estimate.mixture,
                                                           r.params.mixture);
            report.alignment_permutations.push_back(perm);
            intercepts.push_back(r.params.loadings.intercepts);
            loadings.push_back(r.params.loadings.matrix);
            VectorXd w(k);
            std::vector<VectorXd> mu(k);
            for (int i = 0; i < k; ++i) {
                w[i] = r.params.mixture.weights[perm[i]];
                mu[i] = r.params.mixture.means[perm[i]];
            }
            weights.push_back(w);
            means.push_back(mu);
        } catch (const std::exception&) {
            ++report.n_failed;
        }
    }

    const long m = static_cast<long>(intercepts.size());
    if (report.n_failed * 2 > B || m < 2) {
        throw fit_error("bootstrap_standard_errors: more than half of the refits failed");
    }

    // Elementwise SD shifted by the first replicate, so identical replicate
    // values yield exact zeros.
    auto sd = [m](const auto& values) {
        auto mean_dev = (values[0] * 0.0).eval();
        for (long b = 1; b < m; ++b) mean_dev += values[b] - values[0];
        mean_dev /= static_cast<double>(m);
        auto var = (values[0] * 0.0).eval();
        for (long b = 0; b < m; ++b) {
            var += ((values[b] - values[0]) - mean_dev).array().square().matrix();
        }
        return (var / (m - 1.0)).array().sqrt().matrix().eval();
    };

    report.se_intercepts = sd(intercepts);
    report.se_loadings = sd(loadings);
    report.se_weights = sd(weights);
    for (int i = 0; i < k; ++i) {
        std::vector<VectorXd> component_means;
        component_means.reserve(m);
        for (long b = 0; b < m; ++b) component_means.push_back(means[b][i]);
        report.se_means.push_back(sd(component_means));
    }
    return report;
}

}  // namespace fmab
