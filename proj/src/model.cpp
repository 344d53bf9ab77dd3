#include "fmab/model.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace fmab {

namespace {

constexpr double kProbClamp = 1e-12;

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

int ledermann_max_factors(int p) {
    if (p < 1) throw std::invalid_argument("ledermann_max_factors: p must be >= 1");
    const double bound = 0.5 * (2.0 * p + 1.0 - std::sqrt(8.0 * p + 1.0));
    // Guard against floating point landing just below an exact integer bound.
    return static_cast<int>(std::floor(bound + 1e-9));
}

void ModelSpec::validate() const {
    if (p < 1 || q < 1 || k < 1) {
        throw std::invalid_argument("ModelSpec: p, q, k must all be >= 1");
    }
    if (q > ledermann_max_factors(p)) {
        std::ostringstream os;
        os << "ModelSpec: q = " << q << " exceeds the Ledermann bound "
           << ledermann_max_factors(p) << " for p = " << p;
        throw std::invalid_argument(os.str());
    }
}

long count_free_parameters(const ModelSpec& spec) {
    spec.validate();
    const long p = spec.p, q = spec.q, k = spec.k;
    const long loading_free = p * (q + 1) - q * (q - 1) / 2;
    const long mixture_free =
        (k - 1) + k * q + k * q * (q + 1) / 2 - q - q * (q + 1) / 2;
    return loading_free + mixture_free;
}

PatternTable PatternTable::from_rows(const std::vector<std::vector<std::uint8_t>>& rows, int p) {
    PatternTable table;
    table.p = p;
    std::map<std::vector<std::uint8_t>, long> counts;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != p) {
            throw std::invalid_argument("PatternTable::from_rows: ragged row");
        }
        ++counts[row];
    }
    for (const auto& [pattern, count] : counts) {
        table.patterns.push_back(pattern);
        table.counts.push_back(count);
        table.n += count;
    }
    // Flag items with zero observed variance.
    for (int j = 0; j < p; ++j) {
        long ones = 0;
        for (std::size_t h = 0; h < table.patterns.size(); ++h) {
            if (table.patterns[h][j]) ones += table.counts[h];
        }
        if (ones == 0 || ones == table.n) table.constant_items.push_back(j);
    }
    return table;
}

void PatternTable::validate() const {
    if (patterns.size() != counts.size()) {
        throw std::invalid_argument("PatternTable: patterns/counts size mismatch");
    }
    long total = 0;
    for (std::size_t h = 0; h < patterns.size(); ++h) {
        if (static_cast<int>(patterns[h].size()) != p) {
            throw std::invalid_argument("PatternTable: pattern length != p");
        }
        for (auto c : patterns[h]) {
            if (c != 0 && c != 1) throw std::invalid_argument("PatternTable: non-binary cell");
        }
        if (counts[h] <= 0) throw std::invalid_argument("PatternTable: nonpositive count");
        total += counts[h];
    }
    if (total != n) throw std::invalid_argument("PatternTable: counts do not sum to n");
}

Loadings Loadings::zeros(int p, int q) {
    Loadings l;
    l.intercepts = VectorXd::Zero(p);
    l.matrix = MatrixXd::Zero(p, q);
    return l;
}

int Loadings::free_count(int j) const {
    return 1 + std::min(j + 1, q());
}

void Loadings::validate() const {
    if (intercepts.size() != matrix.rows()) {
        throw std::invalid_argument("Loadings: intercept/matrix row mismatch");
    }
    for (int j = 0; j < p(); ++j) {
        for (int r = 0; r < q(); ++r) {
            if (masked(j, r) && matrix(j, r) != 0.0) {
                throw std::invalid_argument("Loadings: masked entry is nonzero");
            }
        }
    }
}

MixtureParams MixtureParams::standard_normal(int q) {
    MixtureParams m;
    m.weights = VectorXd::Ones(1);
    m.means.push_back(VectorXd::Zero(q));
    m.covs.push_back(MatrixXd::Identity(q, q));
    return m;
}

VectorXd MixtureParams::mean() const {
    VectorXd m = VectorXd::Zero(q());
    for (int i = 0; i < k(); ++i) m += weights[i] * means[i];
    return m;
}

MatrixXd MixtureParams::covariance() const {
    const VectorXd m = mean();
    MatrixXd v = MatrixXd::Zero(q(), q());
    for (int i = 0; i < k(); ++i) {
        v += weights[i] * (covs[i] + means[i] * means[i].transpose());
    }
    return v - m * m.transpose();
}

double MixtureParams::standardization_gap() const {
    const double mean_gap = mean().lpNorm<Eigen::Infinity>();
    const MatrixXd dev = covariance() - MatrixXd::Identity(q(), q());
    return std::max(mean_gap, dev.lpNorm<Eigen::Infinity>());
}

void MixtureParams::validate() const {
    const int kk = k();
    if (kk < 1) throw std::invalid_argument("MixtureParams: empty mixture");
    if (static_cast<int>(means.size()) != kk || static_cast<int>(covs.size()) != kk) {
        throw std::invalid_argument("MixtureParams: component count mismatch");
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12 || weights.minCoeff() < 0.0) {
        throw std::invalid_argument("MixtureParams: weights are not a simplex vector");
    }
    const int qq = q();
    for (int i = 0; i < kk; ++i) {
        if (means[i].size() != qq || covs[i].rows() != qq || covs[i].cols() != qq) {
            throw std::invalid_argument("MixtureParams: dimension mismatch");
        }
        if ((covs[i] - covs[i].transpose()).lpNorm<Eigen::Infinity>() > 1e-12) {
            throw std::invalid_argument("MixtureParams: covariance not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(covs[i]);
        if (es.eigenvalues().minCoeff() <= 0.0) {
            throw degeneracy_error("MixtureParams: covariance not positive definite");
        }
    }
}

void ModelParams::validate() const {
    spec.validate();
    loadings.validate();
    mixture.validate();
    if (loadings.p() != spec.p || loadings.q() != spec.q ||
        mixture.k() != spec.k || mixture.q() != spec.q) {
        throw std::invalid_argument("ModelParams: dimensions inconsistent with spec");
    }
}

double item_response_prob(double intercept, const VectorXd& loading_row, const VectorXd& z) {
    if (!std::isfinite(intercept) || !loading_row.allFinite() || !z.allFinite()) {
        throw std::invalid_argument("item_response_prob: non-finite input");
    }
    if (loading_row.size() != z.size()) {
        throw std::invalid_argument("item_response_prob: dimension mismatch");
    }
    return logistic(intercept + loading_row.dot(z));
}

double pattern_conditional_logprob(const Loadings& loadings,
                                   const std::vector<std::uint8_t>& y,
                                   const VectorXd& z) {
    if (static_cast<int>(y.size()) != loadings.p() || z.size() != loadings.q()) {
        throw std::invalid_argument("pattern_conditional_logprob: dimension mismatch");
    }
    const double log_floor = std::log(kProbClamp);
    double ll = 0.0;
    for (int j = 0; j < loadings.p(); ++j) {
        const double eta = loadings.intercepts[j] + loadings.matrix.row(j).dot(z);
        // log pi = -softplus(-eta), log(1 - pi) = -softplus(eta); floor the
        // small side at log(1e-12) so extreme logits cannot produce -inf.
        const double signed_eta = y[j] ? -eta : eta;
        const double softplus = signed_eta > 30.0 ? signed_eta + std::log1p(std::exp(-signed_eta))
                                                  : std::log1p(std::exp(signed_eta));
        ll += std::max(-softplus, log_floor);
    }
    return ll;
}

double pattern_conditional_prob(const Loadings& loadings,
                                const std::vector<std::uint8_t>& y,
                                const VectorXd& z) {
    return std::exp(pattern_conditional_logprob(loadings, y, z));
}

double latent_density(const MixtureParams& mixture, const VectorXd& z) {
    const int q = mixture.q();
    if (z.size() != q) throw std::invalid_argument("latent_density: dimension mismatch");
    double density = 0.0;
    for (int i = 0; i < mixture.k(); ++i) {
        Eigen::LLT<MatrixXd> llt(mixture.covs[i]);
        if (llt.info() != Eigen::Success) {
            throw degeneracy_error("latent_density: singular component covariance");
        }
        const MatrixXd L = llt.matrixL();
        double log_det = 0.0;
        for (int r = 0; r < q; ++r) log_det += std::log(L(r, r));
        const VectorXd u = llt.matrixL().solve(z - mixture.means[i]);
        const double log_phi =
            -0.5 * q * std::log(2.0 * M_PI) - log_det - 0.5 * u.squaredNorm();
        density += mixture.weights[i] * std::exp(log_phi);
    }
    return density;
}

}  // namespace fmab
