#include "fmab/quadrature.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace fmab {

namespace {

// Orthonormal Hermite polynomials w.r.t. exp(-x^2): h_0 = pi^{-1/4},
// h_{j+1} = x sqrt(2/(j+1)) h_j - sqrt(j/(j+1)) h_{j-1}.
// Returns h_T(x) and h_{T-1}(x).
void hermite_eval(int T, double x, double* hT, double* hTm1) {
    double hm = 0.0;
    double h = std::pow(M_PI, -0.25);
    for (int j = 0; j < T; ++j) {
        const double hp = x * std::sqrt(2.0 / (j + 1)) * h - std::sqrt(double(j) / (j + 1)) * hm;
        hm = h;
        h = hp;
    }
    *hT = h;
    *hTm1 = hm;
}

}  // namespace

HermiteRule hermite_rule(int T) {
    if (T < 1 || T > 100) throw std::invalid_argument("hermite_rule: order must be in [1, 100]");

    HermiteRule rule;
    rule.order = T;
    rule.nodes = VectorXd::Zero(T);
    rule.weights = VectorXd::Zero(T);
    if (T == 1) {
        rule.weights[0] = std::sqrt(M_PI);
        return rule;
    }

    // Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal
    // Jacobi matrix with off-diagonals sqrt(j/2).
    MatrixXd jacobi = MatrixXd::Zero(T, T);
    for (int j = 1; j < T; ++j) {
        const double b = std::sqrt(j / 2.0);
        jacobi(j, j - 1) = b;
        jacobi(j - 1, j) = b;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(jacobi);
    VectorXd nodes = es.eigenvalues();

    // Polish each node with Newton on h_T(x) = 0; h_T'(x) = sqrt(2T) h_{T-1}(x).
    for (int t = 0; t < T; ++t) {
        double x = nodes[t];
        for (int it = 0; it < 4; ++it) {
            double hT, hTm1;
            hermite_eval(T, x, &hT, &hTm1);
            const double deriv = std::sqrt(2.0 * T) * hTm1;
            if (deriv == 0.0) break;
            const double dx = hT / deriv;
            x -= dx;
            if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        nodes[t] = x;
    }
    std::sort(nodes.data(), nodes.data() + T);

    // Enforce exact symmetry about zero.
    for (int t = 0; t < T / 2; ++t) {
        const double m = 0.5 * (nodes[T - 1 - t] - nodes[t]);
        nodes[t] = -m;
        nodes[T - 1 - t] = m;
    }
    if (T % 2 == 1) nodes[T / 2] = 0.0;

    // Christoffel weights: w_t = 1 / sum_{j<T} h_j(x_t)^2.
    for (int t = 0; t < T; ++t) {
        const double x = nodes[t];
        double hm = 0.0;
        double h = std::pow(M_PI, -0.25);
        double s = h * h;
        for (int j = 0; j + 1 < T; ++j) {
            const double hp =
                x * std::sqrt(2.0 / (j + 1)) * h - std::sqrt(double(j) / (j + 1)) * hm;
            hm = h;
            h = hp;
            s += h * h;
        }
        rule.weights[t] = 1.0 / s;
    }
    for (int t = 0; t < T / 2; ++t) {
        const double w = 0.5 * (rule.weights[t] + rule.weights[T - 1 - t]);
        rule.weights[t] = w;
        rule.weights[T - 1 - t] = w;
    }
    rule.nodes = nodes;
    return rule;
}

TensorGrid tensor_grid(int q, int T) {
    if (q < 1) throw std::invalid_argument("tensor_grid: q must be >= 1");
    const HermiteRule rule = hermite_rule(T);
    double size_check = 1.0;
    for (int d = 0; d < q; ++d) size_check *= T;
    if (size_check > 1e7) throw resource_limit_error("tensor_grid: T^q exceeds 10^7 points");

    const long total = static_cast<long>(size_check);
    TensorGrid grid;
    grid.q = q;
    grid.points = MatrixXd::Zero(total, q);
    grid.weights = VectorXd::Ones(total);
    grid.normalizer = std::pow(M_PI, -0.5 * q);

    // Odometer enumeration; last dimension varies fastest.
    std::vector<int> idx(q, 0);
    for (long t = 0; t < total; ++t) {
        for (int d = 0; d < q; ++d) {
            grid.points(t, d) = rule.nodes[idx[d]];
            grid.weights[t] *= rule.weights[idx[d]];
        }
        for (int d = q - 1; d >= 0; --d) {
            if (++idx[d] < T) break;
            idx[d] = 0;
        }
    }
    return grid;
}

TensorGrid transform_grid(const TensorGrid& grid, const VectorXd& mu, const MatrixXd& sigma) {
    if (mu.size() != grid.q || sigma.rows() != grid.q || sigma.cols() != grid.q) {
        throw std::invalid_argument("transform_grid: dimension mismatch");
    }
    Eigen::LLT<MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
        throw degeneracy_error("transform_grid: covariance not positive definite");
    }
    const MatrixXd L = llt.matrixL();
    TensorGrid out = grid;
    out.points = std::sqrt(2.0) * grid.points * L.transpose();
    out.points.rowwise() += mu.transpose();
    return out;
}

}  // namespace fmab
