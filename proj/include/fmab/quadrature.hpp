#pragma once

#include <Eigen/Dense>

#include "fmab/errors.hpp"

namespace fmab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Physicists' Gauss-Hermite rule (weight function exp(-x^2)).
struct HermiteRule {
    int order = 0;
    VectorXd nodes;
    VectorXd weights;
};

HermiteRule hermite_rule(int T);

/// Tensor product of a 1-D Hermite rule over q dimensions. `normalizer`
/// is pi^{-q/2}, so that normalizer * sum(weights) = 1 and the grid
/// integrates against a Gaussian density rather than the bare weight
/// function.
struct TensorGrid {
    int q = 0;
    MatrixXd points;   // n_points x q
    VectorXd weights;  // n_points
    double normalizer = 1.0;

    long size() const { return points.rows(); }
};

TensorGrid tensor_grid(int q, int T);

/// Affine map z -> sqrt(2) L z + mu with L the lower Cholesky factor of
/// sigma, turning the standard grid into one that integrates against
/// N(mu, sigma).
TensorGrid transform_grid(const TensorGrid& grid, const VectorXd& mu, const MatrixXd& sigma);

/// normalizer * sum_t w_t f(point_t), summed in grid order. The integrand
/// may return a double or any Eigen expression.
template <typename F>
auto expect(const TensorGrid& grid, F&& integrand)
    -> decltype(auto) {
    using Result = std::decay_t<decltype(integrand(grid.points.row(0).transpose().eval()))>;
    Result acc = integrand(VectorXd(grid.points.row(0).transpose())) * grid.weights[0];
    for (long t = 1; t < grid.size(); ++t) {
        const VectorXd z = grid.points.row(t).transpose();
        acc = acc + integrand(z) * grid.weights[t];
    }
    acc = acc * grid.normalizer;
    if constexpr (std::is_same_v<Result, double>) {
        if (!std::isfinite(acc)) throw degeneracy_error("expect: non-finite integrand sum");
    } else {
        if (!acc.allFinite()) throw degeneracy_error("expect: non-finite integrand sum");
    }
    return acc;
}

}  // namespace fmab
